# src/experiment.py
"""Experiment module for Fair GLM.

This module provides:
- prepare_replicate: Split, encode, discretize and build D for one replicate
- fit_single: One fit at one lambda, evaluated on both halves
- run_sweep: Replicated lambda sweeps with deterministic assembly
- run_consistency_sim: Monte-Carlo check of estimator and penalty consistency
- summarize: Per-lambda mean and interquartile range over replicates
- write_outputs: trajectory.csv, summary.csv and manifest.json
"""

import dataclasses
import json
import logging
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
import pandas as pd
import scipy
import sklearn

from src import __version__
from src.dataset import Dataset, EncodedMatrix, encode, load_csv, load_schema, split
from src.errors import ConfigurationError, InfeasibleSegmentationError, StorageError
from src.families import Family, get_family
from src.metrics import disparity_eo, disparity_ell, evaluate
from src.models import (
    TRAJECTORY_COLUMNS,
    ConsistencyPoint,
    FamilyKind,
    FitConfig,
    KappaPolicy,
    LambdaRule,
    SegmentationKind,
    SweepConfig,
    TradeoffPoint,
)
from src.penalty import (
    PenaltyMatrix,
    Segmentation,
    build_pair_sets,
    build_penalty_matrix,
    discretize,
)
from src.solver import FittedModel, fit
from src.storage import CacheKeyGenerator, PenaltyCache, RunStore

logger = logging.getLogger(__name__)

# Tolerance of the per-replicate trade-off monotonicity check
MONOTONICITY_TOL = 1e-8

SUMMARY_METRICS = ["test_nll", "test_d_ell", "test_d_eo", "train_penalty"]

T = TypeVar("T")
R = TypeVar("R")


def _ordered_map(func: Callable[[T], R], items: Sequence[T], threads: int) -> List[R]:
    """Map in a thread pool, results in input order."""
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            return list(executor.map(func, items))
    return [func(item) for item in items]


# =============================================================================
# Replicates
# =============================================================================

@dataclass(frozen=True, eq=False)
class ReplicateContext:
    """Everything the lambda grid of one replicate shares."""
    replicate: int
    seed: int
    train: EncodedMatrix
    test: EncodedMatrix
    family: Family
    segmentation: Segmentation
    penalty: PenaltyMatrix
    penalty_built: bool = True

    def describe(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "n_train": self.train.n,
            "n_test": self.test.n,
            "p": self.train.p,
            "groups": list(self.train.group_names),
            "segmentation": self.segmentation.describe(),
            "kappa": self.penalty.kappa,
            "nonempty_cells": self.penalty.n_cells,
            "skipped_cells": [list(cell) for cell in self.penalty.skipped_cells],
            "warnings": list(self.train.warnings),
        }


def _cache_key(config: SweepConfig, data_digest: str, test_digest: Optional[str],
               schema_doc: Dict[str, Any], seed: int) -> str:
    return CacheKeyGenerator().generate(
        data=data_digest,
        test_data=test_digest,
        schema=schema_doc,
        seed=seed,
        test_fraction=config.test_fraction,
        stratified=config.stratified,
        max_segments=config.max_segments,
        strategy=config.strategy.value,
        kappa_policy=config.kappa_policy.value,
        exact_pairs=config.exact_pairs,
        pair_cap=config.pair_cap,
    )


def prepare_replicate(
    data: Dataset,
    config: SweepConfig,
    replicate: int,
    test_data: Optional[Dataset] = None,
    cache: Optional[PenaltyCache] = None,
    cache_key: Optional[str] = None,
    threads: int = 1,
) -> ReplicateContext:
    """Split, encode, discretize and build D for one replicate.

    The replicate seed is config.seed + replicate. With test_data the
    split is fixed and data is used whole for training.

    Raises:
        InfeasibleSegmentationError: If no segmentation covers every group.
    """
    seed = config.seed + replicate
    if test_data is None:
        train_raw, test_raw = split(data, config.test_fraction, seed, stratified=config.stratified)
    else:
        train_raw, test_raw = data, test_data
    train, test = encode(train_raw, test_raw)

    family = get_family(train.outcome_type, train.n_classes)
    segmentation = discretize(
        train.y, train.groups, train.outcome_type,
        max_segments=config.max_segments,
        strategy=config.strategy,
        n_groups=train.n_groups,
    )
    pair_sets = build_pair_sets(segmentation, train.y, train.groups, n_groups=train.n_groups)

    cached = cache.get(cache_key) if cache is not None and cache_key else None
    if cached is not None and cached.p == train.p:
        logger.info("replicate %d: penalty matrix loaded from cache", replicate)
        penalty = dataclasses.replace(
            cached,
            cell_counts=pair_sets.cell_counts(),
            skipped_cells=tuple(pair_sets.empty_keys()),
            n_segments=pair_sets.n_segments,
            n_groups=pair_sets.n_groups,
        )
        built = False
    else:
        penalty = build_penalty_matrix(
            train.X, pair_sets,
            kappa_policy=config.kappa_policy,
            exact_pairs=config.exact_pairs,
            pair_cap=config.pair_cap,
            seed=seed,
            threads=threads,
        )
        built = True
        if cache is not None and cache_key:
            cache.put(cache_key, penalty)

    logger.debug("replicate %d: %d segment(s), kappa=%g", replicate, segmentation.n_segments, penalty.kappa)
    return ReplicateContext(
        replicate=replicate,
        seed=seed,
        train=train,
        test=test,
        family=family,
        segmentation=segmentation,
        penalty=penalty,
        penalty_built=built,
    )


def fit_single(context: ReplicateContext, fit_config: FitConfig) -> Tuple[FittedModel, TradeoffPoint]:
    """Fit one lambda on the replicate's training half and evaluate it."""
    train, test = context.train, context.test
    model = fit(train.X, train.y, context.family, context.penalty, fit_config)

    test_eval = evaluate(model, test.X, test.y, test.groups, context.segmentation, test.group_names)
    train_d_ell = disparity_ell(model, train.X, train.y, train.groups, context.segmentation, train.n_groups)
    train_d_eo = disparity_eo(model, train.X, train.y, train.groups, context.segmentation, train.n_groups)

    overall = test_eval.overall
    point = TradeoffPoint(
        replicate=context.replicate,
        lam=fit_config.lam,
        seed=context.seed,
        n_segments=context.segmentation.n_segments,
        train_nll=model.train_nll,
        test_nll=overall.nll,
        test_d_ell=test_eval.d_ell,
        test_d_eo=test_eval.d_eo,
        test_d_metric=test_eval.d_metric,
        train_d_ell=train_d_ell,
        train_d_eo=train_d_eo,
        test_mse=overall.mse,
        test_mae=overall.mae,
        test_auroc=overall.auroc,
        test_misclassification=overall.misclassification,
        iterations=model.iterations,
        converged=model.converged,
        train_penalty=model.train_penalty_value,
        gradient_norm=model.final_gradient_norm,
        per_group=test_eval.per_group,
    )
    return model, point


# =============================================================================
# Sweep
# =============================================================================

@dataclass
class SweepResult:
    """Rows of a sweep plus run metadata.

    Attributes:
        points: TradeoffPoints sorted by (replicate, lambda).
        manifest: JSON-friendly run description.
        penalty_builds: Number of penalty matrices constructed.
        skipped_replicates: Replicate index -> reason.
    """
    points: List[TradeoffPoint]
    manifest: Dict[str, Any]
    penalty_builds: int = 0
    skipped_replicates: Dict[int, str] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return trajectory_frame(self.points)


def trajectory_frame(points: Iterable[TradeoffPoint]) -> pd.DataFrame:
    """One row per point in the fixed trajectory column order."""
    rows = []
    for point in points:
        row = point.model_dump()
        row["per_group"] = json.dumps(row["per_group"], sort_keys=True)
        rows.append(row)
    return pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS)


def check_monotonicity(points: Sequence[TradeoffPoint], tol: float = MONOTONICITY_TOL) -> List[str]:
    """Trade-off violations along the lambda grid of one replicate.

    The training penalty must not increase and the training NLL must not
    decrease as lambda grows.
    """
    violations = []
    ordered = sorted(points, key=lambda pt: pt.lam)
    for prev, cur in zip(ordered, ordered[1:]):
        if cur.train_penalty > prev.train_penalty + tol:
            violations.append(
                f"replicate {cur.replicate}: train penalty rose from {prev.train_penalty:.6g} "
                f"at lambda={prev.lam:g} to {cur.train_penalty:.6g} at lambda={cur.lam:g}"
            )
        if cur.train_nll < prev.train_nll - tol:
            violations.append(
                f"replicate {cur.replicate}: train NLL fell from {prev.train_nll:.6g} "
                f"at lambda={prev.lam:g} to {cur.train_nll:.6g} at lambda={cur.lam:g}"
            )
    return violations


def _versions() -> Dict[str, str]:
    return {
        "fair-glm": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "scikit-learn": sklearn.__version__,
    }


def run_sweep(config: SweepConfig) -> SweepResult:
    """Run the lambda grid over replicated splits.

    Each replicate builds D once; its (replicate, lambda) fits may run in
    parallel and are assembled in sorted key order, so outputs do not
    depend on the thread count.

    Raises:
        DataError: If the data cannot be loaded or encoded.
        ConfigurationError: If the options are inconsistent.
    """
    schema = load_schema(config.schema_path)
    data = load_csv(config.data_path, schema)
    test_data = load_csv(config.test_data_path, schema) if config.test_data_path else None

    replicates = config.replicates
    if test_data is not None and replicates > 1:
        logger.warning("predefined test split given; %d replicates collapse to 1", replicates)
        replicates = 1

    cache = PenaltyCache(config.penalty_cache) if config.penalty_cache else None
    keys: Dict[int, Optional[str]] = {r: None for r in range(replicates)}
    if cache is not None:
        data_digest = CacheKeyGenerator.file_digest(config.data_path)
        test_digest = CacheKeyGenerator.file_digest(config.test_data_path) if config.test_data_path else None
        schema_doc = schema.model_dump(mode='json', by_alias=True)
        keys = {r: _cache_key(config, data_digest, test_digest, schema_doc, config.seed + r)
                for r in range(replicates)}

    def prepare(r: int) -> Union[ReplicateContext, str]:
        try:
            return prepare_replicate(data, config, r, test_data, cache, keys[r], threads=config.threads)
        except InfeasibleSegmentationError as e:
            logger.warning("replicate %d skipped: %s", r, e)
            return str(e)

    prepared = _ordered_map(prepare, list(range(replicates)), config.threads)
    contexts = {r: ctx for r, ctx in enumerate(prepared) if isinstance(ctx, ReplicateContext)}
    skipped = {r: reason for r, reason in enumerate(prepared) if isinstance(reason, str)}

    tasks = [(r, i) for r in sorted(contexts) for i in range(len(config.lambda_grid))]

    def run_task(task: Tuple[int, int]) -> TradeoffPoint:
        r, i = task
        return fit_single(contexts[r], config.fit_config(config.lambda_grid[i]))[1]

    ordered_points = sorted(_ordered_map(run_task, tasks, config.threads), key=lambda pt: pt.key)

    violations = []
    for r in sorted(contexts):
        violations.extend(check_monotonicity([pt for pt in ordered_points if pt.replicate == r]))
    for message in violations:
        logger.warning("trade-off monotonicity violated: %s", message)

    manifest = {
        "config": config.model_dump(mode='json'),
        "seed": config.seed,
        "replicates_requested": config.replicates,
        "replicates": {str(r): contexts[r].describe() for r in sorted(contexts)},
        "skipped_replicates": {str(r): reason for r, reason in sorted(skipped.items())},
        "monotonicity_violations": violations,
        "nonconverged_fits": sum(1 for pt in ordered_points if not pt.converged),
        "versions": _versions(),
    }
    return SweepResult(
        points=ordered_points,
        manifest=manifest,
        penalty_builds=sum(1 for ctx in contexts.values() if ctx.penalty_built),
        skipped_replicates=skipped,
    )


# =============================================================================
# Consistency Simulation
# =============================================================================

@dataclass
class ConsistencyReport:
    """Per-sample-size averages of the consistency simulation."""
    family: FamilyKind
    group_gap: float
    lambda0: float
    lambda_rule: LambdaRule
    beta_star: np.ndarray
    delta: np.ndarray
    points: List[ConsistencyPoint]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([pt.model_dump() for pt in self.points])

    def error_ratio(self) -> float:
        """beta_error at the largest n over beta_error at the smallest."""
        first, last = self.points[0], self.points[-1]
        return last.beta_error / first.beta_error if first.beta_error > 0 else float('nan')


def true_coefficients(family: FamilyKind, n_features: int) -> np.ndarray:
    """Fixed beta_star: intercept then alternating-sign slopes."""
    scale = 1.0 if family == FamilyKind.GAUSSIAN else 0.3
    slopes = [scale * (-1) ** j / (1.0 + 0.5 * j) for j in range(n_features)]
    return np.array([0.25 * scale] + slopes)


def population_penalty(group_gap: float, n_features: int) -> np.ndarray:
    """Limit of D for two unit-covariance groups whose means differ by group_gap per coordinate."""
    delta = np.zeros((n_features + 1, n_features + 1))
    delta[1:, 1:] = 2.0 * np.eye(n_features) + group_gap ** 2 * np.ones((n_features, n_features))
    return delta


def simulate(family: Family, beta_star: np.ndarray, group_gap: float, n: int,
             rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw (X, y, groups) from the two-group Gaussian-design generator."""
    q = len(beta_star) - 1
    groups = np.arange(n) % 2
    Z = rng.standard_normal((n, q)) + group_gap * groups[:, None]
    X = np.column_stack([np.ones(n), Z])
    eta = X @ beta_star

    if family.kind == FamilyKind.GAUSSIAN:
        y = eta + rng.standard_normal(n)
    elif family.kind == FamilyKind.BERNOULLI:
        y = (rng.random(n) < family.mean(eta)).astype(float)
    else:
        y = rng.poisson(family.mean(eta)).astype(float)
    return X, y, groups


def run_consistency_sim(
    family: Union[FamilyKind, str] = FamilyKind.GAUSSIAN,
    group_gap: float = 1.0,
    n_grid: Sequence[int] = (1000, 10000),
    lambda0: float = 1.0,
    lambda_rule: Union[LambdaRule, str] = LambdaRule.INVERSE_SQRT,
    trials: int = 50,
    seed: int = 0,
    n_features: int = 3,
    threads: int = 1,
) -> ConsistencyReport:
    """Monte-Carlo consistency of the penalized estimator and of D.

    Each trial draws two equal groups with identity-covariance Gaussian
    features shifted by group_gap, builds D over a single segment
    (kappa = 1), and fits at lambda_n and at lambda 0.

    Raises:
        ConfigurationError: For multinomial families or bad grids.
    """
    family_kind = FamilyKind(family)
    lambda_rule = LambdaRule(lambda_rule)
    if family_kind == FamilyKind.MULTINOMIAL:
        raise ConfigurationError("consistency simulation supports scalar families only")
    if not n_grid or min(n_grid) < 4:
        raise ConfigurationError("n_grid needs sample sizes of at least 4")
    if trials < 1:
        raise ConfigurationError("trials must be at least 1")

    glm_family = get_family(family_kind)
    beta_star = true_coefficients(family_kind, n_features)
    delta = population_penalty(group_gap, n_features)

    points = []
    for n in sorted(n_grid):
        lam = lambda0 / np.sqrt(n) if lambda_rule == LambdaRule.INVERSE_SQRT else lambda0
        lam = float(lam)

        def trial(t: int) -> Tuple[float, float, float, bool]:
            rng = np.random.default_rng([seed, n, t])
            X, y, groups = simulate(glm_family, beta_star, group_gap, n, rng)
            segmentation = Segmentation(
                kind=SegmentationKind.EQUAL_COUNTS, n_segments=1,
                boundaries=np.array([y.min(), y.max()]),
            )
            pair_sets = build_pair_sets(segmentation, y, groups, n_groups=2)
            penalty = build_penalty_matrix(X, pair_sets, kappa_policy=KappaPolicy.NONEMPTY)
            fair = fit(X, y, glm_family, penalty, FitConfig(lam=lam))
            plain = fair if lam == 0.0 else fit(X, y, glm_family, penalty, FitConfig(lam=0.0))
            return (
                float(np.linalg.norm(fair.beta - beta_star)),
                float(np.linalg.norm(penalty.D - delta)),
                float(np.linalg.norm(fair.beta - plain.beta)),
                fair.converged,
            )

        results = _ordered_map(trial, list(range(trials)), threads)
        stats = np.array([r[:3] for r in results])
        points.append(ConsistencyPoint(
            n=n,
            lam=lam,
            trials=trials,
            beta_error=float(stats[:, 0].mean()),
            penalty_error=float(stats[:, 1].mean()),
            glm_gap=float(stats[:, 2].mean()),
            converged_fraction=float(np.mean([r[3] for r in results])),
        ))
        logger.info("n=%d: beta error %.4g, penalty error %.4g", n, points[-1].beta_error, points[-1].penalty_error)

    return ConsistencyReport(
        family=family_kind,
        group_gap=group_gap,
        lambda0=lambda0,
        lambda_rule=lambda_rule,
        beta_star=beta_star,
        delta=delta,
        points=points,
    )


# =============================================================================
# Outputs
# =============================================================================

def summarize(table: Union[pd.DataFrame, Sequence[TradeoffPoint]]) -> pd.DataFrame:
    """Mean, first and third quartile of the headline columns per lambda."""
    frame = table if isinstance(table, pd.DataFrame) else trajectory_frame(table)
    grouped = frame.groupby("lam", sort=True)

    summary = pd.DataFrame({"lam": sorted(frame["lam"].unique())})
    summary["replicates"] = grouped["replicate"].nunique().to_numpy()
    for metric in SUMMARY_METRICS:
        column = grouped[metric]
        summary[f"{metric}_mean"] = column.mean().to_numpy()
        summary[f"{metric}_q25"] = column.quantile(0.25).to_numpy()
        summary[f"{metric}_q75"] = column.quantile(0.75).to_numpy()
    return summary


def write_outputs(result: SweepResult, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """Write trajectory.csv, summary.csv and manifest.json.

    Raises:
        StorageError: If the trajectory is empty or the directory unwritable.
    """
    if not result.points:
        raise StorageError("trajectory is empty; nothing to write")

    frame = result.to_frame()
    with RunStore(out_dir) as store:
        paths = {
            "trajectory": store.save_trajectory(frame),
            "summary": store.save_summary(summarize(frame)),
            "manifest": store.save_manifest(result.manifest),
        }
    logger.info("wrote %d trajectory row(s) to %s", len(frame), out_dir)
    return paths
