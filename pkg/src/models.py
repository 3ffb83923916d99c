# src/models.py
"""Core data models for Fair GLM.

This module defines:
- OutcomeType / FeatureKind: schema taxonomies
- DatasetSchema: column roles of a tabular dataset
- FamilyKind, SegmentationStrategy, KappaPolicy, LambdaRule: option enums
- LineSearchConfig / FitConfig: solver settings
- SweepConfig: lambda sweep settings
- TradeoffPoint: one (replicate, lambda) row of a trajectory
- ConsistencyPoint: one sample size of the consistency simulation
"""

from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from src.config import (
    DEFAULT_GRADIENT_TOLERANCE,
    DEFAULT_MAX_ITERATIONS,
    default_lambda_grid,
)


# =============================================================================
# Schema Taxonomy
# =============================================================================

class OutcomeType(str, Enum):
    """Outcome types supported by the canonical-link families."""
    BINARY = "binary"
    CONTINUOUS = "continuous"
    COUNT = "count"
    MULTICLASS = "multiclass"


class FeatureKind(str, Enum):
    """How a predictor column is encoded."""
    CONTINUOUS = "continuous"  # standardized with training statistics
    CATEGORICAL = "categorical"  # one-hot, reference level dropped


class FeatureSpec(BaseModel):
    """A single predictor column."""
    name: str = Field(..., min_length=1, description="Column name in the CSV header")
    kind: FeatureKind = Field(..., description="Encoding kind")


class DatasetSchema(BaseModel):
    """Column roles of a dataset.

    The JSON document uses the keys outcome, outcome_type, sensitive,
    features, positive_label and class_labels.
    """
    outcome_column: str = Field(..., alias="outcome", min_length=1)
    outcome_type: OutcomeType
    sensitive_column: str = Field(..., alias="sensitive", min_length=1)
    feature_columns: List[FeatureSpec] = Field(..., alias="features", min_length=1)
    positive_label: Optional[str] = Field(None, description="Label mapped to y=1 for binary outcomes")
    class_labels: Optional[List[str]] = Field(
        None,
        description="Ordered class labels for multiclass outcomes; the first is the reference class",
    )

    model_config = {"populate_by_name": True, "frozen": True}

    @model_validator(mode='after')
    def check_column_roles(self):
        """The sensitive attribute and outcome never appear as predictors."""
        names = [f.name for f in self.feature_columns]
        if self.sensitive_column in names:
            raise ValueError(f"sensitive column '{self.sensitive_column}' cannot be a feature")
        if self.outcome_column in names:
            raise ValueError(f"outcome column '{self.outcome_column}' cannot be a feature")
        if self.outcome_column == self.sensitive_column:
            raise ValueError("outcome and sensitive columns must differ")
        if len(set(names)) != len(names):
            raise ValueError("feature columns must be unique")
        if self.class_labels is not None and len(set(self.class_labels)) < 2:
            raise ValueError("class_labels needs at least two distinct labels")
        return self

    @property
    def columns(self) -> List[str]:
        """All columns the schema reads, outcome and sensitive first."""
        return [self.outcome_column, self.sensitive_column] + [f.name for f in self.feature_columns]


# =============================================================================
# Option Enums
# =============================================================================

class FamilyKind(str, Enum):
    """Exponential families with canonical links."""
    GAUSSIAN = "gaussian"
    BERNOULLI = "bernoulli"
    POISSON = "poisson"
    MULTINOMIAL = "multinomial"


class SegmentationStrategy(str, Enum):
    """Discretization strategy for continuous outcomes."""
    EQUAL_COUNTS = "equal_counts"
    EQUAL_LENGTHS = "equal_lengths"


class SegmentationKind(str, Enum):
    """How outcomes map to penalty segments."""
    PER_VALUE = "per_value"  # binary / multiclass labels
    EQUAL_COUNTS = "equal_counts"
    EQUAL_LENGTHS = "equal_lengths"
    COUNT_CLIP = "count_clip"


class KappaPolicy(str, Enum):
    """How the penalty normalizer is counted."""
    NOMINAL = "nominal"  # segments * number of group pairs
    NONEMPTY = "nonempty"  # number of non-empty cells


class LambdaRule(str, Enum):
    """Penalty weight schedule of the consistency simulation."""
    INVERSE_SQRT = "inverse_sqrt"  # lambda0 / sqrt(n)
    CONSTANT = "constant"


# =============================================================================
# Solver Configuration
# =============================================================================

class LineSearchConfig(BaseModel):
    """Armijo backtracking settings."""
    shrink: float = Field(0.5, gt=0, lt=1)
    sufficient_decrease: float = Field(1e-4, gt=0, lt=0.5)
    max_backtracks: int = Field(50, ge=1)

    model_config = {"frozen": True}


class FitConfig(BaseModel):
    """Settings of a single damped Newton fit."""
    lam: float = Field(0.0, alias="lambda", ge=0, description="Penalty weight")
    max_iterations: int = Field(DEFAULT_MAX_ITERATIONS, ge=1)
    gradient_tolerance: float = Field(DEFAULT_GRADIENT_TOLERANCE, gt=0)
    line_search: LineSearchConfig = Field(default_factory=LineSearchConfig)
    hessian_ridge: float = Field(1e-10, gt=0)
    max_ridge: float = Field(1e-2, gt=0)

    model_config = {"populate_by_name": True, "frozen": True}

    @model_validator(mode='after')
    def check_ridge_range(self):
        if self.hessian_ridge > self.max_ridge:
            raise ValueError("hessian_ridge must not exceed max_ridge")
        return self


# =============================================================================
# Sweep Configuration
# =============================================================================

class SweepConfig(BaseModel):
    """Settings of a replicated lambda sweep."""
    schema_path: str
    data_path: str
    test_data_path: Optional[str] = Field(None, description="Predefined test split; bypasses random splitting")
    lambda_grid: List[float] = Field(default_factory=default_lambda_grid)
    replicates: int = Field(20, ge=1)
    test_fraction: float = Field(0.3, gt=0, lt=1)
    max_segments: int = Field(100, ge=1)
    strategy: SegmentationStrategy = SegmentationStrategy.EQUAL_COUNTS
    seed: int = 0
    kappa_policy: KappaPolicy = KappaPolicy.NOMINAL
    exact_pairs: bool = False
    stratified: bool = True
    pair_cap: Optional[int] = Field(None, ge=1, description="Per-cell cap on pair counts via row subsampling")
    threads: int = Field(1, ge=1)
    max_iterations: int = Field(DEFAULT_MAX_ITERATIONS, ge=1)
    gradient_tolerance: float = Field(DEFAULT_GRADIENT_TOLERANCE, gt=0)
    penalty_cache: Optional[str] = Field(None, description="Directory holding cached penalty matrices")

    model_config = {"frozen": True}

    @field_validator('lambda_grid')
    @classmethod
    def check_grid(cls, grid: List[float]) -> List[float]:
        if not grid:
            raise ValueError("lambda_grid must not be empty")
        if any(v < 0 for v in grid):
            raise ValueError("lambda_grid values must be non-negative")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("lambda_grid must be strictly ascending")
        return [float(v) for v in grid]

    def fit_config(self, lam: float) -> FitConfig:
        """Solver settings for one grid point."""
        return FitConfig(
            lam=lam,
            max_iterations=self.max_iterations,
            gradient_tolerance=self.gradient_tolerance,
        )


# =============================================================================
# Trajectory Rows
# =============================================================================

class TradeoffPoint(BaseModel):
    """One (replicate, lambda) row of a trade-off trajectory."""
    replicate: int = Field(..., ge=0)
    lam: float = Field(..., ge=0)
    seed: int
    n_segments: int
    train_nll: float
    test_nll: float
    test_d_ell: float = Field(..., ge=0)
    test_d_eo: float = Field(..., ge=0)
    test_d_metric: Optional[float] = None
    train_d_ell: float = Field(..., ge=0)
    train_d_eo: float = Field(..., ge=0)
    test_mse: float
    test_mae: Optional[float] = None
    test_auroc: Optional[float] = None
    test_misclassification: Optional[float] = None
    iterations: int
    converged: bool
    train_penalty: float
    gradient_norm: float
    per_group: Dict[str, Dict[str, Optional[float]]] = Field(default_factory=dict)

    @property
    def key(self) -> tuple:
        return (self.replicate, self.lam)


# Fixed CSV column order of a trajectory file
TRAJECTORY_COLUMNS = [
    "replicate", "lam", "seed", "n_segments",
    "train_nll", "test_nll",
    "test_d_ell", "test_d_eo", "test_d_metric",
    "train_d_ell", "train_d_eo",
    "test_mse", "test_mae", "test_auroc", "test_misclassification",
    "iterations", "converged", "train_penalty", "gradient_norm",
    "per_group",
]


class ConsistencyPoint(BaseModel):
    """Monte-Carlo averages of the consistency simulation at one sample size."""
    n: int = Field(..., ge=2)
    lam: float = Field(..., ge=0)
    trials: int = Field(..., ge=1)
    beta_error: float = Field(..., ge=0, description="Mean norm of beta_hat - beta_star")
    penalty_error: float = Field(..., ge=0, description="Mean Frobenius norm of D - Delta")
    glm_gap: float = Field(..., ge=0, description="Mean norm of beta_hat - beta_hat at lambda 0")
    converged_fraction: float = Field(..., ge=0, le=1)
