# tests/test_solver.py
"""
Solver tests for Fair GLM.

These tests verify:
- Objective values on hand-computed instances
- Gradients and Hessians against central finite differences
- Damped Newton fits against closed-form and limiting solutions
- Trade-off monotonicity along lambda
"""

import numpy as np
import pytest

from tests.conftest import glm_instance, random_psd

FAMILIES = ["gaussian", "bernoulli", "poisson", "multinomial"]


def _flat(B):
    return np.asarray(B).T.reshape(-1)


def _unflat(theta, p, m):
    return theta.reshape(m, p).T


def _fd_gradient(beta, X, y, family, D, lam, h=1e-6):
    from src.solver import objective

    p, m = X.shape[1], family.n_outputs
    theta = _flat(np.asarray(beta).reshape(p, m))
    grad = np.zeros_like(theta)
    for i in range(len(theta)):
        step = np.zeros_like(theta)
        step[i] = h
        up = objective(_unflat(theta + step, p, m), X, y, family, D, lam)
        down = objective(_unflat(theta - step, p, m), X, y, family, D, lam)
        grad[i] = (up - down) / (2 * h)
    return grad


def _fd_hessian(beta, X, y, family, D, lam, h=1e-6):
    from src.solver import gradient

    p, m = X.shape[1], family.n_outputs
    theta = _flat(np.asarray(beta).reshape(p, m))
    H = np.zeros((len(theta), len(theta)))
    for i in range(len(theta)):
        step = np.zeros_like(theta)
        step[i] = h
        up = gradient(_unflat(theta + step, p, m), X, y, family, D, lam).reshape(p, m)
        down = gradient(_unflat(theta - step, p, m), X, y, family, D, lam).reshape(p, m)
        H[:, i] = (_flat(up) - _flat(down)) / (2 * h)
    return H


def _random_case(kind, rng):
    n = int(rng.integers(10, 41))
    p = int(rng.integers(2, 7))
    X, y, family = glm_instance(kind, n, p, rng)
    beta = rng.normal(scale=0.3, size=(p, family.n_outputs))
    if not family.is_multinomial:
        beta = beta[:, 0]
    return X, y, family, random_psd(p, rng), float(rng.uniform(0, 2)), beta


# =============================================================================
# Objective Tests
# =============================================================================

class TestObjective:
    """Test the penalized objective."""

    def test_bernoulli_at_zero(self, rng):
        """Test beta=0 gives log 2 for any design."""
        from src.families import Bernoulli
        from src.solver import objective

        X = rng.normal(size=(10, 3))
        y = np.array([0, 1] * 5, dtype=float)

        assert objective(np.zeros(3), X, y, Bernoulli()) == pytest.approx(np.log(2.0), abs=1e-12)

    def test_penalty_vanishes_at_zero(self, rng):
        """Test lambda has no effect at beta=0."""
        from src.families import Bernoulli
        from src.solver import objective

        X = rng.normal(size=(10, 3))
        y = np.array([0, 1] * 5, dtype=float)
        D = random_psd(3, rng)

        assert objective(np.zeros(3), X, y, Bernoulli(), D, 1.0) == objective(np.zeros(3), X, y, Bernoulli(), D, 0.0)

    def test_gaussian_hand_instance(self):
        """Test the two-sample toy against scalar arithmetic."""
        from src.families import Gaussian
        from src.solver import objective

        X = np.array([[1.0, 1.0, 0.0], [1.0, 0.0, 1.0]])
        y = np.array([1.0, 0.5])
        D = np.array([[0, 0, 0], [0, 1, -1], [0, -1, 1]], dtype=float)
        beta = np.array([0.0, 1.0, 0.0])

        expected = 0.5 * np.log(2 * np.pi) + 0.5 * (0.0 ** 2 + 0.5 ** 2) / 2 + 0.5 * 1.0

        assert objective(beta, X, y, Gaussian(), D, 0.5) == pytest.approx(expected, rel=1e-14)

    def test_accepts_penalty_matrix(self, rng):
        """Test a PenaltyMatrix and its raw array give the same value."""
        from src.families import Gaussian
        from src.penalty import PenaltyMatrix
        from src.solver import objective

        X, y, family = glm_instance("gaussian", 20, 3, rng)
        D = random_psd(3, rng)
        beta = rng.normal(size=3)

        assert objective(beta, X, y, Gaussian(), PenaltyMatrix(D=D, kappa=1.0), 0.3) == \
            objective(beta, X, y, Gaussian(), D, 0.3)

    def test_non_finite_raises(self):
        """Test an overflowing predictor raises EvaluationError."""
        from src.errors import EvaluationError
        from src.families import Gaussian
        from src.solver import objective

        with pytest.raises(EvaluationError):
            objective(np.array([1e200]), np.array([[1e200]]), np.array([0.0]), Gaussian())


# =============================================================================
# Derivative Tests
# =============================================================================

class TestGradient:
    """Test the analytic gradient."""

    @pytest.mark.parametrize("kind", FAMILIES)
    def test_matches_finite_differences(self, kind, rng):
        """Test the gradient on 50 random instances per family."""
        from src.solver import gradient

        for _ in range(50):
            X, y, family, D, lam, beta = _random_case(kind, rng)
            analytic = _flat(gradient(beta, X, y, family, D, lam).reshape(X.shape[1], family.n_outputs))
            numeric = _fd_gradient(beta, X, y, family, D, lam)

            np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-8)

    def test_stationary_at_least_squares(self, rng):
        """Test the unpenalized gradient vanishes at the OLS solution."""
        from src.families import Gaussian
        from src.solver import gradient

        X, y, _ = glm_instance("gaussian", 30, 4, rng)
        beta = np.linalg.solve(X.T @ X, X.T @ y)

        assert np.max(np.abs(gradient(beta, X, y, Gaussian()))) < 1e-10

    def test_bernoulli_at_zero(self, rng):
        """Test beta=0 gives -X^T(y - 1/2)/n."""
        from src.families import Bernoulli
        from src.solver import gradient

        X = rng.normal(size=(8, 3))
        y = np.array([0, 1] * 4, dtype=float)

        np.testing.assert_allclose(gradient(np.zeros(3), X, y, Bernoulli()), -X.T @ (y - 0.5) / 8)

    def test_multinomial_shape(self, rng):
        """Test the gradient keeps the p x m coefficient layout."""
        from src.solver import gradient

        X, y, family = glm_instance("multinomial", 20, 3, rng)

        assert gradient(np.zeros((3, 2)), X, y, family).shape == (3, 2)


class TestHessian:
    """Test the analytic Hessian."""

    @pytest.mark.parametrize("kind", FAMILIES)
    def test_matches_finite_differences(self, kind, rng):
        """Test the Hessian on 50 random instances per family."""
        from src.solver import hessian

        for _ in range(50):
            X, y, family, D, lam, beta = _random_case(kind, rng)
            analytic = hessian(beta, X, y, family, D, lam)
            numeric = _fd_hessian(beta, X, y, family, D, lam)

            np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7)

    def test_gaussian_closed_form(self, rng):
        """Test the Gaussian Hessian is X^T X / n + 2 lambda D."""
        from src.families import Gaussian
        from src.solver import hessian

        X, y, _ = glm_instance("gaussian", 25, 4, rng)
        D = random_psd(4, rng)

        np.testing.assert_allclose(hessian(rng.normal(size=4), X, y, Gaussian(), D, 0.7),
                                   X.T @ X / 25 + 1.4 * D, rtol=1e-13, atol=1e-14)

    def test_large_lambda_psd(self, rng):
        """Test a huge penalty keeps the Hessian positive semi-definite."""
        from src.solver import hessian

        X, y, family = glm_instance("bernoulli", 30, 5, rng)
        H = hessian(np.zeros(5), X, y, family, random_psd(5, rng), 1e6)

        assert np.linalg.eigvalsh(H).min() >= -1e-8

    def test_multinomial_symmetric(self, rng):
        """Test the class-major block Hessian is exactly symmetric."""
        from src.solver import hessian

        X, y, family = glm_instance("multinomial", 30, 3, rng, n_classes=4)
        H = hessian(rng.normal(size=(3, 3)), X, y, family, random_psd(3, rng), 0.5)

        assert H.shape == (9, 9)
        assert np.array_equal(H, H.T)
        assert np.linalg.eigvalsh(H).min() >= -1e-12


# =============================================================================
# Fit Tests
# =============================================================================

class TestFit:
    """Test damped Newton fitting."""

    def test_matches_normal_equations(self, rng):
        """Test Gaussian fits agree with the normal equations to 1e-8."""
        from src.solver import fit

        for _ in range(50):
            n = int(rng.integers(20, 201))
            p = int(rng.integers(2, 11))
            X, y, family = glm_instance("gaussian", n, p, rng)
            model = fit(X, y, family)

            np.testing.assert_allclose(model.beta, np.linalg.solve(X.T @ X, X.T @ y), rtol=0, atol=1e-8)
            assert model.converged

    @pytest.mark.parametrize("kind", ["gaussian", "bernoulli"])
    def test_large_lambda_shrinks_slopes(self, kind, rng):
        """Test lambda=1e6 drives the non-intercept coefficients to zero."""
        from src.models import FitConfig
        from src.solver import fit

        X, y, family = glm_instance(kind, 200, 5, rng)
        model = fit(X, y, family, random_psd(5, rng), FitConfig(lam=1e6))

        assert np.linalg.norm(model.beta[1:]) < 1e-3

    def test_separable_data_stays_monotone(self):
        """Test separable data never increases the objective."""
        from src.families import Bernoulli
        from src.models import FitConfig
        from src.solver import fit

        X = np.array([[1.0, -2.0], [1.0, -1.0], [1.0, 1.0], [1.0, 2.0]])
        y = np.array([0.0, 0.0, 1.0, 1.0])
        model = fit(X, y, Bernoulli(), None, FitConfig(max_iterations=30))

        history = np.array(model.objective_history)
        assert np.all(np.diff(history) <= 0)
        assert model.iterations <= 30
        assert model.beta[1] > 0

    @pytest.mark.parametrize("kind", FAMILIES)
    def test_objective_non_increasing(self, kind, rng):
        """Test every accepted step lowers the objective."""
        from src.models import FitConfig
        from src.solver import fit

        X, y, family = glm_instance(kind, 60, 4, rng)
        model = fit(X, y, family, random_psd(4, rng), FitConfig(lam=0.5))

        assert np.all(np.diff(model.objective_history) <= 0)
        assert model.converged
        assert model.final_gradient_norm <= FitConfig().gradient_tolerance

    @pytest.mark.parametrize("kind", FAMILIES)
    def test_penalty_and_nll_monotone_in_lambda(self, kind, rng):
        """Test larger lambda trades training NLL for penalty."""
        from src.models import FitConfig
        from src.solver import fit

        X, y, family = glm_instance(kind, 80, 4, rng)
        D = random_psd(4, rng)
        models = [fit(X, y, family, D, FitConfig(lam=lam)) for lam in [0.0, 0.01, 0.1, 1.0, 10.0]]

        for prev, cur in zip(models, models[1:]):
            assert cur.train_penalty_value <= prev.train_penalty_value + 1e-8
            assert cur.train_nll >= prev.train_nll - 1e-8
        for model in models[1:]:
            assert model.train_penalty_value <= models[0].train_penalty_value + 1e-8

    def test_zero_penalty_matches_unpenalized_bitwise(self, rng):
        """Test D=0 reproduces the plain fit bit for bit."""
        from src.models import FitConfig
        from src.solver import fit

        X, y, family = glm_instance("poisson", 50, 3, rng)
        plain = fit(X, y, family, None, FitConfig(lam=0.0))
        zero_d = fit(X, y, family, np.zeros((3, 3)), FitConfig(lam=5.0))

        assert np.array_equal(plain.beta, zero_d.beta)
        assert plain.iterations == zero_d.iterations

    def test_deterministic(self, rng):
        """Test identical inputs give identical coefficients."""
        from src.models import FitConfig
        from src.solver import fit

        X, y, family = glm_instance("multinomial", 50, 3, rng)
        D = random_psd(3, rng)
        first = fit(X, y, family, D, FitConfig(lam=0.2))
        second = fit(X, y, family, D, FitConfig(lam=0.2))

        assert np.array_equal(first.beta, second.beta)
        assert first.beta.shape == (3, 2)

    def test_gaussian_dispersion(self, rng):
        """Test sigma2_hat is the mean squared training residual."""
        from src.solver import fit

        X, y, family = glm_instance("gaussian", 40, 3, rng)
        model = fit(X, y, family)
        resid = y - X @ model.beta

        assert model.sigma2_hat == pytest.approx(np.mean(resid ** 2))
        assert model.train_nll == pytest.approx(0.5 * np.log(2 * np.pi * model.sigma2_hat) + 0.5)

    def test_predictions(self, rng):
        """Test linear predictor and mean on new rows."""
        from src.solver import fit

        X, y, family = glm_instance("bernoulli", 40, 3, rng)
        model = fit(X, y, family)

        np.testing.assert_allclose(model.linear_predictor(X), X @ model.beta)
        np.testing.assert_allclose(model.predict_mean(X), 1 / (1 + np.exp(-X @ model.beta)))

    def test_fewer_samples_than_coefficients_warns(self, rng, caplog):
        """Test n < p fits with a warning."""
        from src.models import FitConfig
        from src.solver import fit

        X, y, family = glm_instance("gaussian", 4, 6, rng)
        fit(X, y, family, random_psd(6, rng), FitConfig(lam=1.0, max_iterations=5))

        assert "fewer samples" in caplog.text

    def test_outcome_outside_support(self):
        """Test a Bernoulli outcome of 3 raises DomainError."""
        from src.errors import DomainError
        from src.families import Bernoulli
        from src.solver import fit

        with pytest.raises(DomainError):
            fit(np.ones((3, 1)), np.array([0.0, 1.0, 3.0]), Bernoulli())

    def test_indefinite_hessian_exhausts_ridge(self, rng):
        """Test D=-I fails once the ridge is exhausted."""
        from src.errors import SingularHessianError
        from src.models import FitConfig
        from src.solver import fit

        X, y, family = glm_instance("gaussian", 20, 3, rng)
        with pytest.raises(SingularHessianError):
            fit(X, y, family, -np.eye(3), FitConfig(lam=10.0))
