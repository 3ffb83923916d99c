# src/metrics.py
"""Evaluation metrics for Fair GLM.

This module provides:
- disparity_ell: Squared cross-group gaps of within-segment mean log-likelihoods
- disparity_eo: Squared cross-group gaps of within-segment mean predictions
- performance: NLL, MSE/Brier, MAE, AUROC and misclassification
- per_group_table: Per-group metric table and its headline metric
- evaluate: Everything above in one GroupedEvaluation
- outcome_bound_check: Mean-value bound of outcome gaps by linear-component gaps

Disparities are raw sums over unordered group pairs and segments, without
any kappa normalization. Evaluation data is segmented with the training
segmentation.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import roc_auc_score

from src.errors import ConfigurationError
from src.families import Family
from src.models import FamilyKind
from src.penalty import Segmentation
from src.solver import FittedModel

logger = logging.getLogger(__name__)

CellKey = Tuple[int, int, int]

HEADLINE_METRIC = {
    FamilyKind.BERNOULLI: "auroc",
    FamilyKind.GAUSSIAN: "mae",
    FamilyKind.POISSON: "mae",
    FamilyKind.MULTINOMIAL: "misclassification",
}


# =============================================================================
# Result Types
# =============================================================================

@dataclass(frozen=True)
class Performance:
    """Overall prediction metrics of one model on one split."""
    nll: float
    mse: float
    mae: Optional[float] = None
    auroc: Optional[float] = None
    misclassification: Optional[float] = None

    def to_dict(self) -> Dict[str, Optional[float]]:
        return {
            "nll": self.nll,
            "mse": self.mse,
            "mae": self.mae,
            "auroc": self.auroc,
            "misclassification": self.misclassification,
        }


@dataclass(frozen=True)
class GroupedEvaluation:
    """Overall, per-cell and per-group evaluation of a model.

    Attributes:
        per_cell: (group, segment) -> (count, mean loglik, mean prediction).
        overall: Overall metrics.
        d_ell: Log-likelihood disparity.
        d_eo: Expected-outcome disparity.
        d_metric: Max minus min of the per-group headline metric.
        per_group: Group name -> metric name -> value.
        skipped_cells: (k, l, segment) cells with an empty side.
    """
    per_cell: Dict[Tuple[int, int], Tuple[int, float, np.ndarray]]
    overall: Performance
    d_ell: float
    d_eo: float
    d_metric: Optional[float] = None
    per_group: Dict[str, Dict[str, Optional[float]]] = field(default_factory=dict)
    skipped_cells: Tuple[CellKey, ...] = ()


# =============================================================================
# Cell Aggregation
# =============================================================================

def _cell_means(values: np.ndarray, segments: np.ndarray, groups: np.ndarray,
                n_segments: int, n_groups: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per (segment, group) counts and mean values.

    values is n or n x m; rows with segment -1 are ignored. Empty cells
    get NaN means.
    """
    values = np.asarray(values, dtype=float)
    flat = values.reshape(values.shape[0], -1)
    valid = segments >= 0
    index = segments[valid] * n_groups + groups[valid]
    size = n_segments * n_groups

    counts = np.bincount(index, minlength=size)
    sums = np.column_stack([
        np.bincount(index, weights=flat[valid, j], minlength=size) for j in range(flat.shape[1])
    ])
    with np.errstate(invalid='ignore', divide='ignore'):
        means = sums / counts[:, None]
    return counts.reshape(n_segments, n_groups), means.reshape(n_segments, n_groups, flat.shape[1])


def _pairwise_disparity(counts: np.ndarray, means: np.ndarray) -> Tuple[float, List[CellKey]]:
    """Sum over k < l and segments of squared mean gaps, skipping empty cells."""
    n_segments, n_groups = counts.shape
    total = 0.0
    skipped = []
    for k in range(n_groups):
        for l in range(k + 1, n_groups):
            used = 0
            for s in range(n_segments):
                if counts[s, k] == 0 or counts[s, l] == 0:
                    skipped.append((k, l, s))
                    continue
                total += float(np.sum((means[s, k] - means[s, l]) ** 2))
                used += 1
            if used == 0:
                logger.warning("groups %d and %d share no non-empty segment; pair contributes 0", k, l)
    return total, skipped


def _n_groups(groups: np.ndarray, n_groups: Optional[int]) -> int:
    return int(n_groups if n_groups is not None else np.max(groups) + 1)


def disparity_ell(
    model: FittedModel,
    X: np.ndarray,
    y: np.ndarray,
    groups: np.ndarray,
    segmentation: Segmentation,
    n_groups: Optional[int] = None,
) -> float:
    """Sum of squared gaps of within-cell mean log-likelihoods."""
    groups = np.asarray(groups, dtype=np.int64)
    counts, means = _cell_means(
        model.log_likelihood(X, y), segmentation.segment_of(y), groups,
        segmentation.n_segments, _n_groups(groups, n_groups),
    )
    return _pairwise_disparity(counts, means)[0]


def disparity_eo(
    model: FittedModel,
    X: np.ndarray,
    y: np.ndarray,
    groups: np.ndarray,
    segmentation: Segmentation,
    n_groups: Optional[int] = None,
) -> float:
    """Sum of squared gaps of within-cell mean predictions, summed over classes."""
    groups = np.asarray(groups, dtype=np.int64)
    counts, means = _cell_means(
        model.predict_mean(X), segmentation.segment_of(y), groups,
        segmentation.n_segments, _n_groups(groups, n_groups),
    )
    return _pairwise_disparity(counts, means)[0]


# =============================================================================
# Performance
# =============================================================================

def _auroc(y: np.ndarray, score: np.ndarray) -> Optional[float]:
    if np.unique(y).size < 2:
        return None
    return float(roc_auc_score(y, score))


def performance(model: FittedModel, X: np.ndarray, y: np.ndarray, family: Optional[Family] = None) -> Performance:
    """Overall metrics; AUROC is None when y holds a single class."""
    family = family or model.family
    y = np.asarray(y, dtype=float)
    nll = -float(np.mean(model.log_likelihood(X, y)))
    eta = model.linear_predictor(X)

    if family.kind == FamilyKind.MULTINOMIAL:
        probs = family.class_probabilities(eta)
        labels = y.astype(np.int64)
        onehot = np.zeros_like(probs)
        onehot[np.arange(len(labels)), labels] = 1.0
        return Performance(
            nll=nll,
            mse=float(np.mean(np.sum((onehot - probs) ** 2, axis=1))),
            misclassification=float(np.mean(np.argmax(probs, axis=1) != labels)),
        )

    mu = family.mean(eta)
    resid = y - mu
    if family.kind == FamilyKind.BERNOULLI:
        return Performance(nll=nll, mse=float(np.mean(resid ** 2)), auroc=_auroc(y, mu))
    return Performance(nll=nll, mse=float(np.mean(resid ** 2)), mae=float(np.mean(np.abs(resid))))


def per_group_table(
    model: FittedModel,
    X: np.ndarray,
    y: np.ndarray,
    groups: np.ndarray,
    group_names: Optional[Sequence[str]] = None,
) -> Dict[str, Dict[str, Optional[float]]]:
    """Per-group count, NLL, MSE and headline metric."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    groups = np.asarray(groups, dtype=np.int64)
    n_groups = len(group_names) if group_names is not None else int(groups.max()) + 1
    names = list(group_names) if group_names is not None else [str(k) for k in range(n_groups)]
    headline = HEADLINE_METRIC[model.family.kind]

    table = {}
    for k, name in enumerate(names):
        rows = groups == k
        if not rows.any():
            table[name] = {"count": 0.0, "nll": None, "mse": None, headline: None}
            continue
        record = performance(model, X[rows], y[rows])
        table[name] = {
            "count": float(rows.sum()),
            "nll": record.nll,
            "mse": record.mse,
            headline: getattr(record, headline),
        }
    return table


def metric_gap(table: Dict[str, Dict[str, Optional[float]]], metric: str) -> Optional[float]:
    """Max minus min of a per-group metric; None with fewer than two values."""
    values = [row.get(metric) for row in table.values()]
    values = [v for v in values if v is not None]
    if len(values) < 2:
        return None
    return float(max(values) - min(values))


def evaluate(
    model: FittedModel,
    X: np.ndarray,
    y: np.ndarray,
    groups: np.ndarray,
    segmentation: Segmentation,
    group_names: Optional[Sequence[str]] = None,
) -> GroupedEvaluation:
    """Evaluate a model on one split."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    groups = np.asarray(groups, dtype=np.int64)
    n_groups = len(group_names) if group_names is not None else int(groups.max()) + 1
    segments = segmentation.segment_of(y)

    loglik = model.log_likelihood(X, y)
    predictions = model.predict_mean(X)
    counts, ll_means = _cell_means(loglik, segments, groups, segmentation.n_segments, n_groups)
    _, mu_means = _cell_means(predictions, segments, groups, segmentation.n_segments, n_groups)

    d_ell, skipped = _pairwise_disparity(counts, ll_means)
    d_eo, _ = _pairwise_disparity(counts, mu_means)
    if skipped:
        logger.info("%d evaluation cell(s) skipped", len(skipped))

    per_cell = {}
    for s in range(segmentation.n_segments):
        for k in range(n_groups):
            if counts[s, k]:
                per_cell[(k, s)] = (int(counts[s, k]), float(ll_means[s, k, 0]), mu_means[s, k].copy())

    table = per_group_table(model, X, y, groups, group_names)
    return GroupedEvaluation(
        per_cell=per_cell,
        overall=performance(model, X, y),
        d_ell=d_ell,
        d_eo=d_eo,
        d_metric=metric_gap(table, HEADLINE_METRIC[model.family.kind]),
        per_group=table,
        skipped_cells=tuple(skipped),
    )


# =============================================================================
# Bound Diagnostics
# =============================================================================

def _max_logistic_slope(lo: float, hi: float) -> float:
    """sup of mu'(eta) = mu(1 - mu) over [lo, hi]."""
    if lo <= 0.0 <= hi:
        return 0.25
    nearest = lo if lo > 0.0 else hi
    mu = 1.0 / (1.0 + np.exp(-nearest))
    return float(mu * (1.0 - mu))


def outcome_bound_check(
    model: FittedModel,
    X: np.ndarray,
    y: np.ndarray,
    groups: np.ndarray,
    segmentation: Segmentation,
    n_groups: Optional[int] = None,
) -> Dict[CellKey, Tuple[float, float]]:
    """Per cell, (mean outcome gap)^2 and its bound max mu'^2 * mean (eta_i - eta_j)^2.

    The slope maximum is taken over the range of the cell's linear
    predictors, which holds every mean-value point.

    Raises:
        ConfigurationError: For families other than Bernoulli.
    """
    if model.family.kind != FamilyKind.BERNOULLI:
        raise ConfigurationError("outcome bound check is defined for bernoulli models only")

    groups = np.asarray(groups, dtype=np.int64)
    n_groups = _n_groups(groups, n_groups)
    segments = segmentation.segment_of(y)
    eta = model.linear_predictor(X)
    mu = model.predict_mean(X)

    checks = {}
    for s in range(segmentation.n_segments):
        for k in range(n_groups):
            rows_k = (segments == s) & (groups == k)
            if not rows_k.any():
                continue
            for l in range(k + 1, n_groups):
                rows_l = (segments == s) & (groups == l)
                if not rows_l.any():
                    continue
                ek, el = eta[rows_k], eta[rows_l]
                lhs = float((mu[rows_k].mean() - mu[rows_l].mean()) ** 2)
                mean_sq_gap = float(ek.var() + el.var() + (ek.mean() - el.mean()) ** 2)
                both = np.concatenate([ek, el])
                slope = _max_logistic_slope(float(both.min()), float(both.max()))
                checks[(k, l, s)] = (lhs, slope ** 2 * mean_sq_gap)
    return checks
