# src/families.py
"""Exponential-family building blocks for Fair GLM.

This module provides:
- Family: Base class with canonical-link mean, variance and log-likelihood
- Gaussian, Bernoulli, Poisson, Multinomial: Concrete families
- get_family: Factory from an outcome type or family name
- mean, variance_fn, log_likelihood, score_residual: Functional surface

Fitting always uses a(phi) = 1. Gaussian log-likelihoods accept an
explicit sigma2 for reporting.
"""

from typing import Optional, Union

import numpy as np
from scipy.special import expit, gammaln, logsumexp

from src.errors import ConfigurationError, DomainError
from src.models import FamilyKind, OutcomeType

# Exponents are clamped to +/- this value before exp()
EXP_CLAMP = 700.0


def _clamped_exp(eta: np.ndarray) -> np.ndarray:
    return np.exp(np.clip(eta, -EXP_CLAMP, EXP_CLAMP))


def _first_bad_row(bad: np.ndarray) -> int:
    return int(np.flatnonzero(bad)[0])


# =============================================================================
# Base Family
# =============================================================================

class Family:
    """Canonical-link exponential family.

    Attributes:
        kind: Family name.
        n_outputs: Linear predictors per row (m for multinomial, else 1).
    """

    kind: FamilyKind
    n_outputs: int = 1

    @property
    def is_multinomial(self) -> bool:
        return self.n_outputs > 1 or self.kind == FamilyKind.MULTINOMIAL

    def mean(self, eta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def variance(self, eta: np.ndarray) -> np.ndarray:
        """b''(eta), the derivative of the mean in eta."""
        raise NotImplementedError

    def log_likelihood(self, y: np.ndarray, eta: np.ndarray, sigma2: float = 1.0) -> np.ndarray:
        raise NotImplementedError

    def check_support(self, y: np.ndarray) -> None:
        """Raise DomainError naming the first row outside the support."""
        y = np.asarray(y, dtype=float)
        bad = ~np.isfinite(y)
        if bad.any():
            raise DomainError(f"non-finite outcome for {self.kind.value}", _first_bad_row(bad))

    def score_residual(self, y: np.ndarray, eta: np.ndarray, dispersion: float = 1.0) -> np.ndarray:
        """(y - mu) / a(phi), the derivative of the log-likelihood in eta."""
        self.check_support(y)
        return (np.asarray(y, dtype=float) - self.mean(eta)) / dispersion

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


# =============================================================================
# Scalar Families
# =============================================================================

class Gaussian(Family):
    """Normal outcomes with identity link."""

    kind = FamilyKind.GAUSSIAN

    def mean(self, eta):
        return np.asarray(eta, dtype=float).copy()

    def variance(self, eta):
        return np.ones_like(np.asarray(eta, dtype=float))

    def log_likelihood(self, y, eta, sigma2=1.0):
        self.check_support(y)
        resid = np.asarray(y, dtype=float) - np.asarray(eta, dtype=float)
        return -0.5 * np.log(2.0 * np.pi * sigma2) - 0.5 * resid ** 2 / sigma2


class Bernoulli(Family):
    """Binary outcomes with logit link."""

    kind = FamilyKind.BERNOULLI

    def mean(self, eta):
        return expit(np.asarray(eta, dtype=float))

    def variance(self, eta):
        mu = self.mean(eta)
        return mu * (1.0 - mu)

    def log_likelihood(self, y, eta, sigma2=1.0):
        self.check_support(y)
        eta = np.asarray(eta, dtype=float)
        return np.asarray(y, dtype=float) * eta - np.logaddexp(0.0, eta)

    def check_support(self, y):
        y = np.asarray(y, dtype=float)
        bad = (y != 0.0) & (y != 1.0)
        if bad.any():
            raise DomainError(f"bernoulli outcome must be 0 or 1, got {y[bad][0]}", _first_bad_row(bad))


class Poisson(Family):
    """Count outcomes with log link."""

    kind = FamilyKind.POISSON

    def mean(self, eta):
        return _clamped_exp(np.asarray(eta, dtype=float))

    def variance(self, eta):
        return self.mean(eta)

    def log_likelihood(self, y, eta, sigma2=1.0):
        self.check_support(y)
        y = np.asarray(y, dtype=float)
        eta = np.asarray(eta, dtype=float)
        return y * eta - _clamped_exp(eta) - gammaln(y + 1.0)

    def check_support(self, y):
        y = np.asarray(y, dtype=float)
        bad = ~np.isfinite(y) | (y < 0) | (y != np.floor(y))
        if bad.any():
            raise DomainError(f"poisson outcome must be a non-negative integer, got {y[bad][0]}",
                              _first_bad_row(bad))


# =============================================================================
# Multinomial Family
# =============================================================================

class Multinomial(Family):
    """Baseline-category logit over m + 1 classes.

    Class 0 is the reference; eta is n x m, one column per non-reference
    class, and outcomes are class indices 0..m.
    """

    kind = FamilyKind.MULTINOMIAL

    def __init__(self, m: int):
        if m < 1:
            raise ConfigurationError("multinomial family needs at least one non-reference class")
        self.n_outputs = m

    @property
    def m(self) -> int:
        return self.n_outputs

    def _as_matrix(self, eta) -> np.ndarray:
        eta = np.asarray(eta, dtype=float)
        if eta.ndim == 1:
            eta = eta.reshape(1, -1) if eta.shape[0] == self.m else eta.reshape(-1, 1)
        if eta.shape[1] != self.m:
            raise ValueError(f"expected {self.m} linear predictors per row, got {eta.shape[1]}")
        return eta

    def _probabilities(self, eta):
        """Non-reference means and reference probability, max-shifted."""
        eta = self._as_matrix(eta)
        shift = np.maximum(eta.max(axis=1, keepdims=True), 0.0)
        scores = np.exp(eta - shift)
        reference = np.exp(-shift)
        total = reference + scores.sum(axis=1, keepdims=True)
        return scores / total, (reference / total)[:, 0]

    def mean(self, eta):
        return self._probabilities(eta)[0]

    def class_probabilities(self, eta) -> np.ndarray:
        """n x (m + 1) probabilities, reference class first."""
        mu, ref = self._probabilities(eta)
        return np.column_stack([ref, mu])

    def variance(self, eta):
        """Per-row m x m blocks diag(mu) - mu mu^T, shape (n, m, m)."""
        mu = self.mean(eta)
        blocks = -mu[:, :, None] * mu[:, None, :]
        idx = np.arange(self.m)
        blocks[:, idx, idx] += mu
        return blocks

    def one_hot(self, y) -> np.ndarray:
        """n x m indicators of the non-reference classes."""
        self.check_support(y)
        y = np.atleast_1d(np.asarray(y)).astype(np.int64)
        return (y[:, None] == np.arange(1, self.m + 1)[None, :]).astype(float)

    def log_likelihood(self, y, eta, sigma2=1.0):
        eta = self._as_matrix(eta)
        Y = self.one_hot(y)
        padded = np.column_stack([np.zeros(eta.shape[0]), eta])
        return (Y * eta).sum(axis=1) - logsumexp(padded, axis=1)

    def score_residual(self, y, eta, dispersion=1.0):
        return (self.one_hot(y) - self.mean(eta)) / dispersion

    def check_support(self, y):
        y = np.asarray(y, dtype=float)
        bad = ~np.isfinite(y) | (y < 0) | (y > self.m) | (y != np.floor(y))
        if bad.any():
            raise DomainError(f"class index must be an integer in 0..{self.m}, got {y[bad][0]}",
                              _first_bad_row(bad))

    def __repr__(self) -> str:
        return f"Multinomial(m={self.m})"


# =============================================================================
# Factory
# =============================================================================

_OUTCOME_FAMILIES = {
    OutcomeType.CONTINUOUS: FamilyKind.GAUSSIAN,
    OutcomeType.BINARY: FamilyKind.BERNOULLI,
    OutcomeType.COUNT: FamilyKind.POISSON,
    OutcomeType.MULTICLASS: FamilyKind.MULTINOMIAL,
}


def get_family(kind: Union[FamilyKind, OutcomeType, str], n_classes: Optional[int] = None) -> Family:
    """Build the canonical-link family for a family name or outcome type.

    Args:
        kind: Family kind, outcome type, or either as a string.
        n_classes: Total class count (reference included) for multinomial.

    Raises:
        ConfigurationError: On unknown kinds or a missing class count.
    """
    if not isinstance(kind, (FamilyKind, OutcomeType)):
        try:
            kind = FamilyKind(kind)
        except ValueError:
            try:
                kind = OutcomeType(kind)
            except ValueError:
                raise ConfigurationError(f"unknown family '{kind}'")
    if isinstance(kind, OutcomeType):
        kind = _OUTCOME_FAMILIES[kind]

    if kind == FamilyKind.GAUSSIAN:
        return Gaussian()
    if kind == FamilyKind.BERNOULLI:
        return Bernoulli()
    if kind == FamilyKind.POISSON:
        return Poisson()
    if n_classes is None or n_classes < 2:
        raise ConfigurationError("multinomial family needs n_classes >= 2")
    return Multinomial(n_classes - 1)


# =============================================================================
# Functional Surface
# =============================================================================

def mean(family: Family, eta: np.ndarray) -> np.ndarray:
    """Mean g^-1(eta)."""
    return family.mean(eta)


def variance_fn(family: Family, eta: np.ndarray) -> np.ndarray:
    """Variance function b''(eta); m x m blocks per row for multinomial."""
    return family.variance(eta)


def log_likelihood(family: Family, y: np.ndarray, eta: np.ndarray, sigma2: float = 1.0) -> np.ndarray:
    """Per-sample log-likelihood, including the normalizing terms."""
    return family.log_likelihood(y, eta, sigma2)


def score_residual(family: Family, y: np.ndarray, eta: np.ndarray, dispersion: float = 1.0) -> np.ndarray:
    """Derivative of the log-likelihood in eta, (y - mu) / a(phi)."""
    return family.score_residual(y, eta, dispersion)
