# src/dataset.py
"""Dataset module for Fair GLM.

This module provides:
- load_schema: Read a DatasetSchema from its JSON document
- load_csv: Load complete rows of a CSV file as a Dataset
- encode: Fit an encoder on training rows and build design matrices
- decode: Recover raw feature values from an encoded design matrix
- split: Reproducible (stratified) train/test partition
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from src.config import MISSING_TOKENS
from src.errors import DataError, EmptyDatasetError, RowParseError, SchemaError
from src.models import DatasetSchema, FeatureKind, OutcomeType

logger = logging.getLogger(__name__)

# Continuous columns with a standard deviation below this are passed through
ZERO_VARIANCE_TOL = 1e-12


# =============================================================================
# Containers
# =============================================================================

@dataclass(frozen=True, eq=False)
class Dataset:
    """Complete raw records under a schema.

    Continuous features are floats, count/continuous outcomes numeric,
    everything else kept as string labels.
    """
    frame: pd.DataFrame
    schema: DatasetSchema
    dropped_rows: int = 0

    @property
    def n(self) -> int:
        return len(self.frame)

    def take(self, rows: np.ndarray) -> 'Dataset':
        """Subset by positional row indices, keeping row order."""
        rows = np.sort(np.asarray(rows, dtype=np.int64))
        return Dataset(self.frame.iloc[rows].reset_index(drop=True), self.schema, 0)


@dataclass(frozen=True)
class EncoderState:
    """Encoding statistics fitted on training rows only."""
    column_names: Tuple[str, ...]
    feature_names: Tuple[str, ...]
    means: Dict[str, float]
    scales: Dict[str, float]
    unstandardized: Tuple[str, ...]
    categories: Dict[str, Tuple[str, ...]]
    group_names: Tuple[str, ...]
    class_labels: Optional[Tuple[str, ...]] = None
    positive_label: Optional[str] = None
    negative_label: Optional[str] = None


@dataclass(frozen=True, eq=False)
class EncodedMatrix:
    """Numeric design matrix with outcomes and group indices.

    X carries a leading all-ones intercept column.
    """
    X: np.ndarray
    y: np.ndarray
    groups: np.ndarray
    group_names: Tuple[str, ...]
    outcome_type: OutcomeType
    encoder_state: EncoderState
    warnings: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n_groups(self) -> int:
        return len(self.group_names)

    @property
    def n_classes(self) -> Optional[int]:
        labels = self.encoder_state.class_labels
        return len(labels) if labels is not None else None

    @property
    def column_names(self) -> Tuple[str, ...]:
        return self.encoder_state.column_names


def _read_only(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


# =============================================================================
# Loading
# =============================================================================

def load_schema(path: Union[str, Path]) -> DatasetSchema:
    """Read a schema JSON document.

    Raises:
        SchemaError: If the file is missing or the document is invalid.
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"schema file not found: {path}")
    try:
        return DatasetSchema.model_validate_json(path.read_text(encoding='utf-8'))
    except ValidationError as e:
        raise SchemaError(f"invalid schema {path}: {e}")


def _numeric_outcome(schema: DatasetSchema) -> bool:
    return schema.outcome_type in (OutcomeType.CONTINUOUS, OutcomeType.COUNT)


def load_csv(path: Union[str, Path], schema: DatasetSchema) -> Dataset:
    """Load the complete rows of a CSV file.

    Rows missing the outcome, the sensitive attribute or any feature are
    dropped and counted. Row indices in errors are 0-based data rows of
    the file.

    Raises:
        SchemaError: If a schema column is missing from the header.
        RowParseError: If a numeric field cannot be parsed.
        EmptyDatasetError: If no complete row remains.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")

    frame = pd.read_csv(
        path,
        dtype=str,
        keep_default_na=False,
        na_values=MISSING_TOKENS,
        skipinitialspace=True,
        encoding='utf-8',
    )
    frame.columns = [c.strip() for c in frame.columns]

    missing = [c for c in schema.columns if c not in frame.columns]
    if missing:
        raise SchemaError(f"{path.name}: missing column(s) {', '.join(missing)}")

    frame = frame[schema.columns]
    complete = frame.notna().all(axis=1)
    dropped = int((~complete).sum())
    frame = frame[complete].copy()

    if dropped:
        logger.warning("%s: dropped %d incomplete row(s)", path.name, dropped)
    if frame.empty:
        raise EmptyDatasetError(f"{path.name}: no complete rows")

    numeric_columns = [f.name for f in schema.feature_columns if f.kind == FeatureKind.CONTINUOUS]
    if _numeric_outcome(schema):
        numeric_columns.append(schema.outcome_column)

    for column in numeric_columns:
        values = pd.to_numeric(frame[column], errors='coerce')
        bad = values.isna() | ~np.isfinite(values.to_numpy(dtype=float, na_value=np.nan))
        if bad.any():
            row = int(bad[bad].index[0])
            raise RowParseError(f"cannot parse '{frame.at[row, column]}' as a number", row, column)
        frame[column] = values.astype(float)

    if schema.outcome_type == OutcomeType.COUNT:
        y = frame[schema.outcome_column].to_numpy()
        bad = (y < 0) | (y != np.floor(y))
        if bad.any():
            row = int(frame.index[np.argmax(bad)])
            raise RowParseError(f"count outcome {y[np.argmax(bad)]} is not a non-negative integer",
                                row, schema.outcome_column)

    text_columns = [c for c in schema.columns if c not in numeric_columns]
    for column in text_columns:
        frame[column] = frame[column].str.strip()

    return Dataset(frame.reset_index(drop=True), schema, dropped)


# =============================================================================
# Encoding
# =============================================================================

def _fit_state(train: Dataset) -> EncoderState:
    schema = train.schema
    frame = train.frame
    columns = ["(intercept)"]
    means, scales, categories = {}, {}, {}
    unstandardized = []

    for spec in schema.feature_columns:
        if spec.kind == FeatureKind.CONTINUOUS:
            values = frame[spec.name].to_numpy(dtype=float)
            mean = float(values.mean())
            scale = float(values.std())
            if scale < ZERO_VARIANCE_TOL:
                logger.warning("column '%s' has zero variance; left unstandardized", spec.name)
                unstandardized.append(spec.name)
                mean, scale = 0.0, 1.0
            means[spec.name] = mean
            scales[spec.name] = scale
            columns.append(spec.name)
        else:
            levels = tuple(sorted(frame[spec.name].unique()))
            categories[spec.name] = levels
            columns.extend(f"{spec.name}={level}" for level in levels[1:])

    group_names = tuple(sorted(frame[schema.sensitive_column].unique()))
    if len(group_names) < 2:
        raise DataError(
            f"sensitive column '{schema.sensitive_column}' has {len(group_names)} group(s) "
            "in the training data; at least 2 are required"
        )

    class_labels = None
    if schema.outcome_type == OutcomeType.MULTICLASS:
        if schema.class_labels is not None:
            class_labels = tuple(schema.class_labels)
        else:
            class_labels = tuple(sorted(frame[schema.outcome_column].unique()))
        if len(class_labels) < 2:
            raise DataError("multiclass outcome needs at least two classes")

    negative_label = None
    if schema.outcome_type == OutcomeType.BINARY and schema.positive_label is not None:
        labels = sorted(frame[schema.outcome_column].unique())
        if schema.positive_label not in labels:
            raise DataError(
                f"positive_label '{schema.positive_label}' does not occur in outcome "
                f"'{schema.outcome_column}' (labels: {', '.join(map(str, labels))})"
            )
        others = [label for label in labels if label != schema.positive_label]
        if len(others) > 1:
            raise DataError(
                f"binary outcome '{schema.outcome_column}' has {len(labels)} labels: {', '.join(map(str, labels))}"
            )
        negative_label = others[0] if others else None

    return EncoderState(
        column_names=tuple(columns),
        feature_names=tuple(f.name for f in schema.feature_columns),
        means=means,
        scales=scales,
        unstandardized=tuple(unstandardized),
        categories=categories,
        group_names=group_names,
        class_labels=class_labels,
        positive_label=schema.positive_label,
        negative_label=negative_label,
    )


def _encode_outcome(data: Dataset, state: EncoderState) -> np.ndarray:
    schema = data.schema
    raw = data.frame[schema.outcome_column]

    if schema.outcome_type in (OutcomeType.CONTINUOUS, OutcomeType.COUNT):
        return raw.to_numpy(dtype=float)

    if schema.outcome_type == OutcomeType.BINARY:
        if state.positive_label is not None:
            positive = raw == state.positive_label
            if state.negative_label is not None:
                bad = ~(positive | (raw == state.negative_label))
                if bad.any():
                    row = int(np.argmax(bad.to_numpy()))
                    raise RowParseError(
                        f"binary outcome '{raw.iloc[row]}' is neither "
                        f"'{state.positive_label}' nor '{state.negative_label}'",
                        row, schema.outcome_column,
                    )
            return positive.to_numpy(dtype=float)
        values = pd.to_numeric(raw, errors='coerce')
        bad = ~values.isin([0, 1])
        if bad.any():
            row = int(np.argmax(bad.to_numpy()))
            raise RowParseError(
                f"binary outcome '{raw.iloc[row]}' is not 0/1 and no positive_label is set",
                row, schema.outcome_column,
            )
        return values.to_numpy(dtype=float)

    index = {label: i for i, label in enumerate(state.class_labels)}
    codes = raw.map(index)
    if codes.isna().any():
        row = int(np.argmax(codes.isna().to_numpy()))
        raise RowParseError(f"unknown class label '{raw.iloc[row]}'", row, schema.outcome_column)
    return codes.to_numpy(dtype=float)


def _transform(data: Dataset, state: EncoderState) -> EncodedMatrix:
    schema = data.schema
    frame = data.frame
    blocks = [np.ones((data.n, 1))]

    for spec in schema.feature_columns:
        if spec.kind == FeatureKind.CONTINUOUS:
            values = frame[spec.name].to_numpy(dtype=float)
            blocks.append(((values - state.means[spec.name]) / state.scales[spec.name])[:, None])
        else:
            levels = state.categories[spec.name]
            values = frame[spec.name].to_numpy()
            # Unseen levels fall through to the all-zero reference encoding
            indicators = np.column_stack([values == level for level in levels[1:]]) \
                if len(levels) > 1 else np.zeros((data.n, 0))
            blocks.append(indicators.astype(float))

    group_index = {name: k for k, name in enumerate(state.group_names)}
    groups = frame[schema.sensitive_column].map(group_index)
    if groups.isna().any():
        row = int(np.argmax(groups.isna().to_numpy()))
        raise DataError(
            f"row {row}: group '{frame[schema.sensitive_column].iloc[row]}' does not occur in the training data"
        )

    warnings = tuple(f"zero-variance column '{name}' left unstandardized" for name in state.unstandardized)
    return EncodedMatrix(
        X=_read_only(np.hstack(blocks)),
        y=_read_only(_encode_outcome(data, state)),
        groups=_read_only(groups.to_numpy(dtype=np.int64)),
        group_names=state.group_names,
        outcome_type=schema.outcome_type,
        encoder_state=state,
        warnings=warnings,
    )


def encode(train: Dataset, test: Dataset) -> Tuple[EncodedMatrix, EncodedMatrix]:
    """Fit the encoder on train and transform both splits.

    Continuous features are standardized with training means and standard
    deviations; categoricals are one-hot encoded with the first sorted
    level as the dropped reference.

    Raises:
        SchemaError: If the splits do not share one schema.
        DataError: If training holds fewer than two groups.
    """
    if train.schema != test.schema:
        raise SchemaError("train and test datasets must share one schema")

    state = _fit_state(train)
    return _transform(train, state), _transform(test, state)


def decode(encoded: EncodedMatrix, state: Optional[EncoderState] = None) -> pd.DataFrame:
    """Recover raw feature values from a design matrix.

    Categorical levels come back as strings; an all-zero indicator block
    decodes to the reference level.
    """
    state = state or encoded.encoder_state
    X = encoded.X
    position = {name: j for j, name in enumerate(state.column_names)}
    decoded = {}

    for name in state.means:
        decoded[name] = X[:, position[name]] * state.scales[name] + state.means[name]

    for name, levels in state.categories.items():
        if len(levels) == 1:
            decoded[name] = np.full(X.shape[0], levels[0], dtype=object)
            continue
        cols = [position[f"{name}={level}"] for level in levels[1:]]
        block = X[:, cols]
        index = np.where(block.max(axis=1) > 0.5, block.argmax(axis=1) + 1, 0)
        decoded[name] = np.asarray(levels, dtype=object)[index]

    return pd.DataFrame({name: decoded[name] for name in state.feature_names})


# =============================================================================
# Splitting
# =============================================================================

def _outcome_strata(data: Dataset) -> np.ndarray:
    """Outcome value for discrete outcomes, quartile bin otherwise."""
    outcome = data.frame[data.schema.outcome_column]
    if _numeric_outcome(data.schema):
        bins = pd.qcut(outcome.rank(method='first'), q=min(4, data.n), labels=False, duplicates='drop')
        return bins.to_numpy(dtype=np.int64)
    return pd.factorize(outcome, sort=True)[0]


def _allocate(sizes: np.ndarray, fraction: float, n_test: int, rng: np.random.Generator) -> np.ndarray:
    """Largest-remainder allocation of n_test rows across strata."""
    quota = sizes * fraction
    counts = np.floor(quota).astype(np.int64)
    remainder = quota - counts
    short = n_test - int(counts.sum())
    if short > 0:
        priority = rng.permutation(len(sizes))
        order = np.lexsort((priority, -remainder))
        order = [s for s in order if counts[s] < sizes[s]]
        for s in order[:short]:
            counts[s] += 1
    return counts


def _rebalance_groups(counts, sizes, stratum_group, group_sizes):
    """Give every group with >= 2 rows at least one row on each side."""
    n_groups = len(group_sizes)

    def group_totals():
        return np.bincount(stratum_group, weights=counts, minlength=n_groups).astype(np.int64)

    for g in range(n_groups):
        if group_sizes[g] < 2:
            continue
        own = np.flatnonzero(stratum_group == g)
        totals = group_totals()
        if totals[g] == 0:
            take = own[np.argmax(sizes[own] - counts[own])]
            counts[take] += 1
            donors = [s for s in np.argsort(-counts, kind='stable')
                      if stratum_group[s] != g and counts[s] > 0 and totals[stratum_group[s]] > 1]
            if donors:
                counts[donors[0]] -= 1
        elif totals[g] == group_sizes[g]:
            give = own[np.argmax(counts[own])]
            counts[give] -= 1
            receivers = [s for s in np.argsort(counts - sizes, kind='stable')
                         if stratum_group[s] != g and counts[s] < sizes[s]
                         and totals[stratum_group[s]] < group_sizes[stratum_group[s]] - 1]
            if receivers:
                counts[receivers[0]] += 1
    return counts


def split(
    data: Dataset,
    test_fraction: float,
    seed: int,
    stratified: bool = True,
) -> Tuple[Dataset, Dataset]:
    """Partition rows into train and test.

    The test half holds round(n * test_fraction) rows. With stratified
    splitting rows are allocated jointly by (group, outcome stratum) and
    every group with at least two rows lands in both halves; a group with
    a single row goes to train.

    Raises:
        ValueError: If test_fraction is outside (0, 1).
    """
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie strictly between 0 and 1")

    rng = np.random.default_rng(seed)
    n = data.n
    n_test = int(np.floor(n * test_fraction + 0.5))
    n_test = min(max(n_test, 1), n - 1) if n >= 2 else 0

    if not stratified:
        order = rng.permutation(n)
        return data.take(order[n_test:]), data.take(order[:n_test])

    group_codes, group_labels = pd.factorize(data.frame[data.schema.sensitive_column], sort=True)
    outcome_codes = _outcome_strata(data)
    joint = group_codes.astype(np.int64) * (int(outcome_codes.max()) + 1) + outcome_codes
    strata, strata_codes = np.unique(joint, return_inverse=True)
    stratum_group = strata // (int(outcome_codes.max()) + 1)
    sizes = np.bincount(strata_codes, minlength=len(strata)).astype(np.int64)
    group_sizes = np.bincount(group_codes, minlength=len(group_labels))

    eligible = group_sizes[stratum_group] >= 2
    for g in np.flatnonzero(group_sizes == 1):
        logger.warning("group '%s' has a single row; assigned to train", group_labels[g])

    counts = np.zeros(len(strata), dtype=np.int64)
    counts[eligible] = _allocate(sizes[eligible], test_fraction, n_test, rng)
    counts = _rebalance_groups(counts, sizes, stratum_group, group_sizes)

    test_rows: List[np.ndarray] = []
    for s in range(len(strata)):
        members = np.flatnonzero(strata_codes == s)
        test_rows.append(rng.permutation(members)[:counts[s]])

    test_index = np.concatenate(test_rows) if test_rows else np.array([], dtype=np.int64)
    mask = np.zeros(n, dtype=bool)
    mask[test_index] = True
    return data.take(np.flatnonzero(~mask)), data.take(np.flatnonzero(mask))
