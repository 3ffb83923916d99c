# src/errors.py
"""Exception hierarchy for Fair GLM.

ConfigurationError maps to CLI exit code 2 and DataError (with its
subclasses) to exit code 3.
"""

from typing import Optional


class FairGLMError(Exception):
    """Base exception for all Fair GLM errors."""
    pass


# =============================================================================
# Configuration
# =============================================================================

class ConfigurationError(FairGLMError):
    """Raised when a configuration value or combination is invalid."""
    pass


# =============================================================================
# Data
# =============================================================================

class DataError(FairGLMError):
    """Base exception for problems with input data."""
    pass


class SchemaError(DataError):
    """Raised when the schema document or CSV header is inconsistent."""
    pass


class RowParseError(DataError):
    """Raised when a field cannot be parsed."""

    def __init__(self, message: str, row_index: int, column: Optional[str] = None):
        super().__init__(f"row {row_index}: {message}")
        self.row_index = row_index
        self.column = column


class EmptyDatasetError(DataError):
    """Raised when no complete rows remain after filtering."""
    pass


class DomainError(DataError):
    """Raised when an outcome lies outside the family support."""

    def __init__(self, message: str, row_index: int):
        super().__init__(f"row {row_index}: {message}")
        self.row_index = row_index


class InfeasibleSegmentationError(DataError):
    """Raised when no segmentation covers every group."""

    def __init__(self, message: str, group):
        super().__init__(message)
        self.group = group


# =============================================================================
# Solver
# =============================================================================

class SolverError(FairGLMError):
    """Base exception for optimization failures."""
    pass


class EvaluationError(SolverError):
    """Raised when the objective or its derivatives are not finite."""
    pass


class SingularHessianError(SolverError):
    """Raised when the Hessian stays singular after ridge escalation."""
    pass


class StorageError(FairGLMError):
    """Raised when run outputs cannot be written or read."""
    pass
