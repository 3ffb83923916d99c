# src/solver.py
"""Solver module for Fair GLM.

This module provides:
- objective / gradient / hessian: The penalized empirical objective
  -mean(loglik) + lam * sum_c beta_c^T D beta_c and its derivatives
- fit: Damped Newton-Raphson with Armijo backtracking
- FittedModel: Coefficients plus solver diagnostics

Multinomial coefficients are p x m matrices. Internally they are flattened
class-major, so the Hessian is made of m x m blocks of size p x p.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from src.errors import EvaluationError, SingularHessianError
from src.families import Family
from src.models import FamilyKind, FitConfig
from src.penalty import PenaltyMatrix

logger = logging.getLogger(__name__)

PenaltyLike = Union[PenaltyMatrix, np.ndarray, None]


# =============================================================================
# Shape Helpers
# =============================================================================

def _penalty_array(D: PenaltyLike, p: int) -> np.ndarray:
    if D is None:
        return np.zeros((p, p))
    if isinstance(D, PenaltyMatrix):
        D = D.D
    D = np.asarray(D, dtype=float)
    if D.shape != (p, p):
        raise ValueError(f"penalty matrix must be {p} x {p}, got {D.shape}")
    return D


def _coef_matrix(beta: np.ndarray, p: int, family: Family) -> np.ndarray:
    """beta as a p x m matrix (m = 1 for scalar families)."""
    return np.asarray(beta, dtype=float).reshape(p, family.n_outputs)


def _shaped(B: np.ndarray, family: Family) -> np.ndarray:
    return B if family.is_multinomial else B[:, 0]


def _flatten(B: np.ndarray) -> np.ndarray:
    return B.T.reshape(-1)


def _unflatten(theta: np.ndarray, p: int, m: int) -> np.ndarray:
    return theta.reshape(m, p).T


def _linear_predictor(X: np.ndarray, B: np.ndarray, family: Family) -> np.ndarray:
    return _shaped(X @ B, family)


# =============================================================================
# Objective and Derivatives
# =============================================================================

def objective(
    beta: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    family: Family,
    D: PenaltyLike = None,
    lam: float = 0.0,
) -> float:
    """Penalized objective -(1/n) sum loglik + lam * sum_c beta_c^T D beta_c.

    Raises:
        EvaluationError: If the value is not finite.
    """
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    B = _coef_matrix(beta, p, family)
    Dm = _penalty_array(D, p)

    with np.errstate(over='ignore', invalid='ignore'):
        loglik = family.log_likelihood(y, _linear_predictor(X, B, family))
        value = -float(np.mean(loglik)) + lam * float(np.sum(B * (Dm @ B)))
    if not np.isfinite(value):
        raise EvaluationError("objective is not finite")
    return value


def gradient(
    beta: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    family: Family,
    D: PenaltyLike = None,
    lam: float = 0.0,
) -> np.ndarray:
    """-(1/n) X^T (y - mu) + 2 lam D beta, per class for multinomial."""
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    B = _coef_matrix(beta, p, family)
    Dm = _penalty_array(D, p)

    residual = family.score_residual(y, _linear_predictor(X, B, family)).reshape(n, family.n_outputs)
    grad = -(X.T @ residual) / n + 2.0 * lam * (Dm @ B)
    if not np.all(np.isfinite(grad)):
        raise EvaluationError("gradient is not finite")
    return _shaped(grad, family)


def hessian(
    beta: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    family: Family,
    D: PenaltyLike = None,
    lam: float = 0.0,
) -> np.ndarray:
    """(1/n) X^T W X + 2 lam D with W = diag(b''(eta)).

    For multinomial the result is pm x pm, block (c, c') equal to
    (1/n) X^T diag(V[:, c, c']) X, plus 2 lam D on each diagonal block.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    B = _coef_matrix(beta, p, family)
    Dm = _penalty_array(D, p)
    eta = _linear_predictor(X, B, family)
    weights = family.variance(eta)

    if not family.is_multinomial:
        H = (X.T * weights) @ X / n + 2.0 * lam * Dm
    else:
        m = family.n_outputs
        H = np.zeros((p * m, p * m))
        for c in range(m):
            for c2 in range(c, m):
                block = (X.T * weights[:, c, c2]) @ X / n
                if c == c2:
                    block = block + 2.0 * lam * Dm
                H[c * p:(c + 1) * p, c2 * p:(c2 + 1) * p] = block
                if c2 != c:
                    H[c2 * p:(c2 + 1) * p, c * p:(c + 1) * p] = block.T

    H = 0.5 * (H + H.T)
    if not np.all(np.isfinite(H)):
        raise EvaluationError("hessian is not finite")
    return H


# =============================================================================
# Fitted Model
# =============================================================================

@dataclass(frozen=True, eq=False)
class FittedModel:
    """Result of a fit.

    Attributes:
        beta: Length-p vector, or p x m matrix for multinomial.
        family: Family the model was fitted with.
        lam: Penalty weight.
        converged: Whether the gradient tolerance was met.
        iterations: Accepted Newton steps.
        final_gradient_norm: Max-norm of the gradient at beta.
        train_nll: Negative mean training log-likelihood (sigma2_hat for Gaussian).
        train_penalty_value: beta^T D beta summed over classes.
        sigma2_hat: Gaussian dispersion estimate, else None.
        objective_history: Objective after each accepted step, start included.
    """
    beta: np.ndarray
    family: Family
    lam: float
    converged: bool
    iterations: int
    final_gradient_norm: float
    train_nll: float
    train_penalty_value: float
    sigma2_hat: Optional[float] = None
    objective_history: Tuple[float, ...] = field(default_factory=tuple)

    @property
    def dispersion(self) -> float:
        return self.sigma2_hat if self.sigma2_hat is not None else 1.0

    def linear_predictor(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.beta

    def predict_mean(self, X: np.ndarray) -> np.ndarray:
        return self.family.mean(self.linear_predictor(X))

    def log_likelihood(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Per-sample log-likelihood, Gaussian evaluated at sigma2_hat."""
        return self.family.log_likelihood(y, self.linear_predictor(X), self.dispersion)


# =============================================================================
# Damped Newton
# =============================================================================

def _newton_direction(H: np.ndarray, g: np.ndarray, config: FitConfig) -> np.ndarray:
    """Solve H d = -g, adding an escalating ridge when factorization fails."""
    ridge = 0.0
    while True:
        try:
            factor = cho_factor(H + ridge * np.eye(H.shape[0]) if ridge else H)
            step = cho_solve(factor, -g)
            if np.all(np.isfinite(step)):
                if ridge:
                    logger.debug("hessian factorized with ridge %.1e", ridge)
                return step
        except LinAlgError:
            pass
        ridge = config.hessian_ridge if ridge == 0.0 else ridge * 10.0
        if ridge > config.max_ridge * (1.0 + 1e-12):
            raise SingularHessianError(
                f"hessian not positive definite even with ridge {config.max_ridge:g}"
            )


def _line_search(
    evaluate: Callable[[np.ndarray], float],
    theta: np.ndarray,
    value: float,
    step: np.ndarray,
    slope: float,
    config: FitConfig,
) -> Optional[Tuple[np.ndarray, float]]:
    """Armijo backtracking; None when no acceptable step was found."""
    search = config.line_search
    t = 1.0
    for _ in range(search.max_backtracks):
        candidate = theta + t * step
        try:
            new_value = evaluate(candidate)
        except EvaluationError:
            t *= search.shrink
            continue
        if new_value <= value + search.sufficient_decrease * t * slope:
            return candidate, new_value
        # round-off near the optimum can break Armijo on a full step
        if t == 1.0 and new_value <= value:
            return candidate, new_value
        t *= search.shrink
    return None


def fit(
    X: np.ndarray,
    y: np.ndarray,
    family: Family,
    D: PenaltyLike = None,
    config: Optional[FitConfig] = None,
) -> FittedModel:
    """Minimize the penalized objective from beta = 0.

    Args:
        X: Design matrix, n x p (intercept column included).
        y: Outcomes in the family's support.
        family: Canonical-link family.
        D: Penalty matrix (PenaltyMatrix or p x p array); None means no penalty.
        config: Solver settings.

    Returns:
        FittedModel. A stalled line search returns the last accepted
        iterate with converged=False.

    Raises:
        DomainError: If y is outside the family support.
        SingularHessianError: If ridge escalation is exhausted.
    """
    config = config or FitConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    m = family.n_outputs
    lam = config.lam
    Dm = _penalty_array(D, p)

    family.check_support(y)
    if n < p:
        logger.warning("fitting with fewer samples (%d) than coefficients (%d)", n, p)

    def evaluate(theta):
        return objective(_unflatten(theta, p, m), X, y, family, Dm, lam)

    def grad(theta):
        return _flatten(gradient(_unflatten(theta, p, m), X, y, family, Dm, lam).reshape(p, m))

    theta = np.zeros(p * m)
    value = evaluate(theta)
    history = [value]
    g = grad(theta)
    gnorm = float(np.max(np.abs(g)))
    iterations = 0

    while gnorm > config.gradient_tolerance and iterations < config.max_iterations:
        H = hessian(_unflatten(theta, p, m), X, y, family, Dm, lam)
        step = _newton_direction(H, g, config)
        slope = float(g @ step)

        accepted = _line_search(evaluate, theta, value, step, slope, config)
        if accepted is None:
            logger.warning("line search stalled after %d iteration(s) at lambda=%g", iterations, lam)
            break

        theta, value = accepted
        history.append(value)
        iterations += 1
        g = grad(theta)
        gnorm = float(np.max(np.abs(g)))

    converged = gnorm <= config.gradient_tolerance
    if not converged:
        logger.warning("fit did not converge at lambda=%g (gradient norm %.3e)", lam, gnorm)

    B = _unflatten(theta, p, m).copy()
    beta = _shaped(B, family)

    sigma2_hat = None
    if family.kind == FamilyKind.GAUSSIAN:
        resid = y - X @ beta
        sigma2_hat = max(float(np.mean(resid ** 2)), np.finfo(float).tiny)
    train_nll = -float(np.mean(family.log_likelihood(y, X @ beta, sigma2_hat or 1.0)))

    return FittedModel(
        beta=beta,
        family=family,
        lam=lam,
        converged=converged,
        iterations=iterations,
        final_gradient_norm=gnorm,
        train_nll=train_nll,
        train_penalty_value=float(np.sum(B * (Dm @ B))),
        sigma2_hat=sigma2_hat,
        objective_history=tuple(history),
    )
