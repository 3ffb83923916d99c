# src/penalty.py
"""Penalty module for Fair GLM.

This module provides:
- Segmentation / discretize: Map outcomes to penalty segments
- PairCell / PairSets / build_pair_sets: Cross-group same-segment pairs
- PenaltyMatrix / build_penalty_matrix: The PSD matrix D and normalizer kappa
- decompose_penalty: Variance and mean-gap terms of each cell
- linear_component_disparity: Raw sum of mean squared linear-component gaps
- dump_penalty, load_penalty: Binary cache format for D
"""

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from src.errors import ConfigurationError, InfeasibleSegmentationError, StorageError
from src.models import KappaPolicy, OutcomeType, SegmentationKind, SegmentationStrategy

logger = logging.getLogger(__name__)

CellKey = Tuple[int, int, int]

# Rows of pairwise differences materialized per block on the exact path
EXACT_BLOCK_ROWS = 65536

PENALTY_MAGIC = b"FGLMD\x01"
_HEADER = struct.Struct("<IdI")


# =============================================================================
# Segmentation
# =============================================================================

@dataclass(frozen=True, eq=False)
class Segmentation:
    """Total map from outcome values to segment indices 0..n_segments-1.

    Continuous segments are [boundaries[i], boundaries[i+1]); values outside
    the training range fall into the first or last segment. Count segments
    clamp y into [lower, upper].
    """
    kind: SegmentationKind
    n_segments: int
    boundaries: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None
    lower: Optional[int] = None
    upper: Optional[int] = None

    def segment_of(self, y: np.ndarray) -> np.ndarray:
        """Segment index per outcome; -1 for labels never seen in training."""
        y = np.asarray(y, dtype=float)

        if self.kind == SegmentationKind.PER_VALUE:
            idx = np.searchsorted(self.values, y)
            idx = np.minimum(idx, len(self.values) - 1)
            return np.where(self.values[idx] == y, idx, -1).astype(np.int64)

        if self.kind == SegmentationKind.COUNT_CLIP:
            return (np.clip(y, self.lower, self.upper) - self.lower).astype(np.int64)

        inner = self.boundaries[1:-1]
        return np.searchsorted(inner, y, side='right').astype(np.int64)

    def describe(self) -> dict:
        """JSON-friendly summary for run manifests."""
        summary = {"kind": self.kind.value, "n_segments": self.n_segments}
        if self.boundaries is not None:
            summary["boundaries"] = [float(b) for b in self.boundaries]
        if self.lower is not None:
            summary["lower"], summary["upper"] = int(self.lower), int(self.upper)
        return summary


def _coverage(segments: np.ndarray, groups: np.ndarray, n_segments: int, n_groups: int) -> np.ndarray:
    """(n_segments, n_groups) sample counts."""
    valid = segments >= 0
    flat = segments[valid] * n_groups + groups[valid]
    return np.bincount(flat, minlength=n_segments * n_groups).reshape(n_segments, n_groups)


def _continuous_segmentation(y, t, strategy) -> Segmentation:
    if strategy == SegmentationStrategy.EQUAL_COUNTS:
        ordered = np.sort(y)
        cuts = [ordered[(j * len(y)) // t] for j in range(1, t)]
        boundaries = np.array([ordered[0]] + cuts + [ordered[-1]], dtype=float)
        kind = SegmentationKind.EQUAL_COUNTS
    else:
        boundaries = np.linspace(y.min(), y.max(), t + 1)
        kind = SegmentationKind.EQUAL_LENGTHS
    return Segmentation(kind=kind, n_segments=t, boundaries=boundaries)


def _widest_count_window(y: np.ndarray, groups: np.ndarray, n_groups: int) -> Tuple[int, int]:
    """Widest integer [L, U] whose clamped segments all cover every group.

    Segment L holds y <= L, segment U holds y >= U and every integer in
    between is its own segment. Ties in width go to the smallest L.
    """
    values = y.astype(np.int64)
    lo = int(values.min())
    span = int(values.max()) - lo + 1

    present = np.zeros((span, n_groups), dtype=bool)
    present[values - lo, groups] = True
    full = present.all(axis=1)
    low_ok = np.logical_or.accumulate(present, axis=0).all(axis=1)
    high_ok = np.logical_or.accumulate(present[::-1], axis=0)[::-1].all(axis=1)

    best = (lo, lo)
    best_width = 0
    for L in range(span):
        if not low_ok[L]:
            continue
        for U in range(L + 1, span):
            if U - 1 > L and not full[U - 1]:
                break
            if high_ok[U] and U - L > best_width:
                best, best_width = (lo + L, lo + U), U - L
    return best


def discretize(
    y: np.ndarray,
    groups: np.ndarray,
    outcome_type: OutcomeType,
    max_segments: int = 100,
    strategy: SegmentationStrategy = SegmentationStrategy.EQUAL_COUNTS,
    n_groups: Optional[int] = None,
) -> Segmentation:
    """Fit a segmentation on training outcomes.

    Binary and multiclass outcomes get one segment per observed label.
    Continuous outcomes get the largest t <= max_segments whose segments
    each hold at least one sample of every group, found by decrementing t.
    Count outcomes get the widest feasible clamping window [L, U].

    Raises:
        ConfigurationError: If fewer than two groups or max_segments < 1.
        InfeasibleSegmentationError: If a group has no samples at all.
    """
    y = np.asarray(y, dtype=float)
    groups = np.asarray(groups, dtype=np.int64)
    n_groups = int(n_groups if n_groups is not None else groups.max() + 1)
    outcome_type = OutcomeType(outcome_type)
    strategy = SegmentationStrategy(strategy)

    if n_groups < 2:
        raise ConfigurationError("discretization needs at least two groups")
    if max_segments < 1:
        raise ConfigurationError("max_segments must be at least 1")

    sizes = np.bincount(groups, minlength=n_groups)
    if (sizes == 0).any():
        missing = int(np.flatnonzero(sizes == 0)[0])
        raise InfeasibleSegmentationError(f"group {missing} has no samples; no segmentation covers it", missing)

    if outcome_type in (OutcomeType.BINARY, OutcomeType.MULTICLASS):
        values = np.unique(y)
        segmentation = Segmentation(kind=SegmentationKind.PER_VALUE, n_segments=len(values), values=values)
        counts = _coverage(segmentation.segment_of(y), groups, len(values), n_groups)
        for s, k in zip(*np.nonzero(counts == 0)):
            logger.warning("label %g has no samples from group %d; its cells will be skipped", values[s], k)
        return segmentation

    if outcome_type == OutcomeType.COUNT:
        lower, upper = _widest_count_window(y, groups, n_groups)
        return Segmentation(
            kind=SegmentationKind.COUNT_CLIP,
            n_segments=upper - lower + 1,
            lower=lower,
            upper=upper,
        )

    for t in range(max_segments, 0, -1):
        segmentation = _continuous_segmentation(y, t, strategy)
        counts = _coverage(segmentation.segment_of(y), groups, t, n_groups)
        if (counts > 0).all():
            logger.debug("%s discretization settled on %d segment(s)", strategy.value, t)
            return segmentation

    # t = 1 always covers every group present
    raise InfeasibleSegmentationError("no segmentation covers every group", int(np.argmin(sizes)))


# =============================================================================
# Pair Sets
# =============================================================================

@dataclass(frozen=True, eq=False)
class PairCell:
    """Cross product of group-k and group-l rows within one segment."""
    k: int
    l: int
    segment: int
    rows_k: np.ndarray
    rows_l: np.ndarray

    @property
    def key(self) -> CellKey:
        return (self.k, self.l, self.segment)

    @property
    def n_pairs(self) -> int:
        return len(self.rows_k) * len(self.rows_l)

    @property
    def is_empty(self) -> bool:
        return self.n_pairs == 0

    def pairs(self) -> np.ndarray:
        """All (i, j) index pairs, shape (n_pairs, 2)."""
        i, j = np.meshgrid(self.rows_k, self.rows_l, indexing='ij')
        return np.column_stack([i.ravel(), j.ravel()])


@dataclass(frozen=True, eq=False)
class PairSets:
    """Every (k, l, segment) cell, empty ones included, in sorted key order."""
    cells: Dict[CellKey, PairCell]
    n_segments: int
    n_groups: int
    ordered: bool = False

    def __getitem__(self, key: CellKey) -> PairCell:
        return self.cells[key]

    def __iter__(self) -> Iterator[CellKey]:
        return iter(sorted(self.cells))

    def __len__(self) -> int:
        return len(self.cells)

    @property
    def n_group_pairs(self) -> int:
        pairs = self.n_groups * (self.n_groups - 1)
        return pairs if self.ordered else pairs // 2

    def nonempty(self) -> List[PairCell]:
        return [self.cells[key] for key in self if not self.cells[key].is_empty]

    def empty_keys(self) -> List[CellKey]:
        return [key for key in self if self.cells[key].is_empty]

    def cell_counts(self) -> Dict[CellKey, int]:
        return {key: self.cells[key].n_pairs for key in self}


def build_pair_sets(
    segmentation: Segmentation,
    y: np.ndarray,
    groups: np.ndarray,
    n_groups: Optional[int] = None,
    ordered: bool = False,
) -> PairSets:
    """Enumerate cross-group same-segment cells.

    Unordered group pairs k < l by default; ordered=True enumerates both
    (k, l) and (l, k).
    """
    groups = np.asarray(groups, dtype=np.int64)
    n_groups = int(n_groups if n_groups is not None else groups.max() + 1)
    segments = segmentation.segment_of(y)

    members = {}
    for s in range(segmentation.n_segments):
        in_segment = segments == s
        for k in range(n_groups):
            members[(k, s)] = np.flatnonzero(in_segment & (groups == k))

    cells = {}
    for k in range(n_groups):
        for l in range(n_groups):
            if k == l or (not ordered and l < k):
                continue
            for s in range(segmentation.n_segments):
                cells[(k, l, s)] = PairCell(k, l, s, members[(k, s)], members[(l, s)])

    return PairSets(cells=cells, n_segments=segmentation.n_segments, n_groups=n_groups, ordered=ordered)


# =============================================================================
# Penalty Matrix
# =============================================================================

@dataclass(frozen=True, eq=False)
class PenaltyMatrix:
    """Symmetric PSD penalty matrix D with its normalizer kappa."""
    D: np.ndarray
    kappa: float
    cell_counts: Dict[CellKey, int] = field(default_factory=dict)
    skipped_cells: Tuple[CellKey, ...] = ()
    n_segments: int = 0
    n_groups: int = 0
    n_cells: int = 0

    @property
    def p(self) -> int:
        return self.D.shape[0]

    def quadratic(self, beta: np.ndarray) -> float:
        """beta^T D beta, summed over classes when beta is p x m."""
        B = np.asarray(beta, dtype=float).reshape(self.p, -1)
        return float(np.sum(B * (self.D @ B)))


def _canonical_rows(rows: np.ndarray) -> np.ndarray:
    """Lexicographic row order, so results do not depend on input order."""
    if rows.shape[0] < 2:
        return rows
    return rows[np.lexsort(rows.T[::-1])]


def _subsample(rows: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    if size >= len(rows):
        return rows
    return np.sort(rng.choice(rows, size=size, replace=False))


def _gram_cell(Xk: np.ndarray, Xl: np.ndarray) -> np.ndarray:
    """Mean of (x_i - x_j)^T (x_i - x_j) over the cross product.

    Centered form of n_l G_k + n_k G_l - M_k^T M_l - M_l^T M_k, divided by
    n_k n_l: the two group covariances plus the outer product of the mean
    difference.
    """
    mk = Xk.mean(axis=0)
    ml = Xl.mean(axis=0)
    Zk = Xk - mk
    Zl = Xl - ml
    diff = mk - ml
    return Zk.T @ Zk / Xk.shape[0] + Zl.T @ Zl / Xl.shape[0] + np.outer(diff, diff)


def _exact_cell(Xk: np.ndarray, Xl: np.ndarray) -> np.ndarray:
    """Direct pairwise sum, O(n_k n_l p^2)."""
    p = Xk.shape[1]
    total = np.zeros((p, p))
    block = max(1, EXACT_BLOCK_ROWS // max(Xl.shape[0], 1))
    for start in range(0, Xk.shape[0], block):
        diff = (Xk[start:start + block, None, :] - Xl[None, :, :]).reshape(-1, p)
        total += diff.T @ diff
    return total / (Xk.shape[0] * Xl.shape[0])


def build_penalty_matrix(
    X: np.ndarray,
    pair_sets: PairSets,
    kappa_policy: Union[KappaPolicy, str] = KappaPolicy.NOMINAL,
    exact_pairs: bool = False,
    pair_cap: Optional[int] = None,
    seed: int = 0,
    threads: int = 1,
) -> PenaltyMatrix:
    """Assemble D = (1/kappa) * sum over non-empty cells of D^{kl,seg}.

    Cell partials may be computed in parallel but are always summed in
    sorted (k, l, segment) order, so D does not depend on thread count.
    Columns constant over all rows of X (the intercept) get exactly zero
    rows and columns.

    Args:
        X: Design matrix, n x p.
        pair_sets: Cells from build_pair_sets.
        kappa_policy: nominal (segments * group pairs) or nonempty.
        exact_pairs: Use the naive pairwise sum instead of the Gram form.
        pair_cap: Optional per-cell cap on pairs via row subsampling.
        seed: Seed of the subsampling generator.
        threads: Worker threads for cell partials.

    Raises:
        ConfigurationError: If fewer than two groups or kappa is zero.
    """
    X = np.asarray(X, dtype=float)
    kappa_policy = KappaPolicy(kappa_policy)
    if pair_sets.n_groups < 2:
        raise ConfigurationError("penalty needs at least two groups (kappa = 0)")

    cells = pair_sets.nonempty()
    skipped = tuple(pair_sets.empty_keys())
    if kappa_policy == KappaPolicy.NOMINAL:
        kappa = float(pair_sets.n_segments * pair_sets.n_group_pairs)
    else:
        kappa = float(len(cells))
    if kappa <= 0:
        raise ConfigurationError("penalty normalizer kappa is zero; no non-empty cells")
    if skipped:
        logger.info("%d empty penalty cell(s) skipped", len(skipped))

    def partial(cell: PairCell) -> np.ndarray:
        rows_k, rows_l = cell.rows_k, cell.rows_l
        if pair_cap is not None and cell.n_pairs > pair_cap:
            rng = np.random.default_rng([seed, cell.k, cell.l, cell.segment])
            scale = np.sqrt(pair_cap / cell.n_pairs)
            rows_k = _subsample(rows_k, max(1, int(len(rows_k) * scale)), rng)
            rows_l = _subsample(rows_l, max(1, int(len(rows_l) * scale)), rng)
        Xk = _canonical_rows(X[rows_k])
        Xl = _canonical_rows(X[rows_l])
        block = _exact_cell(Xk, Xl) if exact_pairs else _gram_cell(Xk, Xl)
        return 0.5 * (block + block.T)

    if threads > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            partials = list(executor.map(partial, cells))
    else:
        partials = [partial(cell) for cell in cells]

    p = X.shape[1]
    total = np.zeros((p, p))
    for block in partials:
        total += block
    D = total / kappa

    constant = np.ptp(X, axis=0) == 0 if X.shape[0] else np.zeros(p, dtype=bool)
    D[constant, :] = 0.0
    D[:, constant] = 0.0

    return PenaltyMatrix(
        D=D,
        kappa=kappa,
        cell_counts=pair_sets.cell_counts(),
        skipped_cells=skipped,
        n_segments=pair_sets.n_segments,
        n_groups=pair_sets.n_groups,
        n_cells=len(cells),
    )


# =============================================================================
# Penalty Diagnostics
# =============================================================================

def decompose_penalty(beta: np.ndarray, X: np.ndarray, pair_sets: PairSets) -> Dict[CellKey, Tuple[float, float]]:
    """Split each cell's mean squared linear-component gap.

    Returns (variance term, squared mean-gap term) per non-empty cell; the
    two add up to mean((x_i beta - x_j beta)^2) over the cell's pairs,
    summed over classes for multinomial coefficients.
    """
    X = np.asarray(X, dtype=float)
    B = np.asarray(beta, dtype=float).reshape(X.shape[1], -1)
    theta = X @ B
    terms = {}
    for cell in pair_sets.nonempty():
        tk = theta[cell.rows_k]
        tl = theta[cell.rows_l]
        variance = float(np.sum(tk.var(axis=0) + tl.var(axis=0)))
        gap = float(np.sum((tk.mean(axis=0) - tl.mean(axis=0)) ** 2))
        terms[cell.key] = (variance, gap)
    return terms


def linear_component_disparity(beta: np.ndarray, X: np.ndarray, pair_sets: PairSets) -> float:
    """Raw sum over non-empty cells of the mean squared linear-component gap."""
    return float(sum(v + g for v, g in decompose_penalty(beta, X, pair_sets).values()))


# =============================================================================
# Binary Cache Format
# =============================================================================

def dump_penalty(penalty: PenaltyMatrix, path: Union[str, Path]) -> Path:
    """Write D as magic, header (p, kappa, cell count), row-major float64."""
    path = Path(path)
    try:
        with open(path, 'wb') as f:
            f.write(PENALTY_MAGIC)
            f.write(_HEADER.pack(penalty.p, penalty.kappa, penalty.n_cells))
            f.write(np.ascontiguousarray(penalty.D, dtype='<f8').tobytes())
    except OSError as e:
        raise StorageError(f"cannot write penalty matrix to {path}: {e}")
    return path


def load_penalty(path: Union[str, Path]) -> PenaltyMatrix:
    """Read a matrix written by dump_penalty.

    Only D, kappa and the non-empty cell count are restored.
    """
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise StorageError(f"cannot read penalty matrix from {path}: {e}")

    if not payload.startswith(PENALTY_MAGIC):
        raise StorageError(f"{path} is not a penalty matrix dump")
    offset = len(PENALTY_MAGIC)
    if len(payload) < offset + _HEADER.size:
        raise StorageError(f"{path} is truncated")
    p, kappa, n_cells = _HEADER.unpack_from(payload, offset)
    offset += _HEADER.size
    if len(payload) - offset != p * p * 8:
        raise StorageError(f"{path} is truncated")
    D = np.frombuffer(payload, dtype='<f8', count=p * p, offset=offset).reshape(p, p).astype(float)
    return PenaltyMatrix(D=D, kappa=kappa, n_cells=n_cells)
