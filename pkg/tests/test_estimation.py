import numpy as np
import pytest
from scipy.special import expit, logit

from hdglm.estimation import FitOptions, fit_nuisance, score_beta1
from hdglm.exceptions import EstimationError, ValidationError
from hdglm.families import Dataset

from conftest import random_dataset


def newton_logistic(X, Y, iters=100):
    """Plain Newton-Raphson on the Bernoulli log-likelihood."""
    b = np.zeros(X.shape[1])
    for _ in range(iters):
        p = expit(X @ b)
        grad = X.T @ (Y - p)
        hess = X.T @ (X * (p * (1 - p))[:, None])
        step = np.linalg.solve(hess, grad)
        b = b + step
        if np.max(np.abs(step)) < 1e-15:
            break
    return b


def test_score_toy():
    d = Dataset(np.array([1.0, 0.0, 1.0]), np.array([[1.0, 3.0], [1.0, -1.0], [1.0, 2.0]]), p1=1)
    np.testing.assert_allclose(score_beta1(d, "logistic", [0.0], [0.0]), [0.5])


def test_score_balanced_null_is_zero():
    X1 = np.array([[1.0], [1.0], [-1.0], [-1.0]])
    d = Dataset.partitioned(np.array([1.0, 0.0, 1.0, 0.0]), X1, np.ones(4))
    np.testing.assert_array_equal(score_beta1(d, "logistic", [0.0], [0.0]), [0.0])


@pytest.mark.parametrize("k,n", [(3, 10), (17, 40), (1, 5)])
def test_intercept_only_logit(k, n):
    Y = np.r_[np.ones(k), np.zeros(n - k)]
    d = Dataset.partitioned(Y, np.ones(n), np.linspace(-1, 1, n))
    fit = fit_nuisance(d, "logistic", [0.0])
    assert fit.converged
    assert fit.beta1_hat[0] == pytest.approx(logit(k / n), abs=1e-10)


def test_matches_newton_oracle():
    rng = np.random.default_rng(4)
    n, p1 = 100, 3
    X1 = np.c_[np.ones(n), rng.standard_normal((n, p1 - 1))]
    Y = (rng.random(n) < expit(X1 @ np.array([0.3, -0.8, 0.5]))).astype(float)
    d = Dataset.partitioned(Y, X1, rng.standard_normal((n, 5)))
    fit = fit_nuisance(d, "logistic", np.zeros(5))
    assert fit.converged
    assert np.max(np.abs(fit.beta1_hat - newton_logistic(X1, Y))) <= 1e-8


@pytest.mark.parametrize("family", ["logistic", "poisson", "negative-binomial", "probit"])
def test_converged_score_within_tolerance(family):
    rng = np.random.default_rng(9)
    d, _ = random_dataset(rng, family, 120, 6, p1=3)
    fit = fit_nuisance(d, family, np.zeros(3))
    assert fit.converged
    s = score_beta1(d, family, fit.beta1_hat, np.zeros(3))
    assert np.max(np.abs(s)) <= fit.score_tolerance == pytest.approx(1e-8 * 120)


def test_nonzero_null_offset_poisson():
    rng = np.random.default_rng(1)
    n = 150
    X1 = np.c_[np.ones(n), rng.standard_normal(n)]
    X2 = rng.standard_normal((n, 2))
    b2 = np.array([0.2, -0.1])
    Y = rng.poisson(np.exp(X1 @ [0.4, 0.3] + X2 @ b2)).astype(float)
    d = Dataset.partitioned(Y, X1, X2)
    fit = fit_nuisance(d, "poisson", b2)
    assert fit.converged
    assert np.max(np.abs(score_beta1(d, "poisson", fit.beta1_hat, b2))) <= 1e-8 * n


def test_permutation_invariance():
    rng = np.random.default_rng(2)
    d, _ = random_dataset(rng, "probit", 80, 5, p1=2)
    perm = rng.permutation(80)
    a = fit_nuisance(d, "probit", np.zeros(3))
    b = fit_nuisance(Dataset(d.Y[perm], d.X[perm], p1=2), "probit", np.zeros(3))
    assert np.max(np.abs(a.beta1_hat - b.beta1_hat)) <= 1e-8


@pytest.mark.parametrize("family", ["logistic", "poisson"])
def test_fisher_scoring_equals_newton_per_step(family):
    rng = np.random.default_rng(5)
    n = 90
    X1 = np.c_[np.ones(n), 0.5 * rng.standard_normal((n, 2))]
    d, _ = random_dataset(rng, family, n, 4, p1=0)
    d = Dataset.partitioned(d.Y, X1, d.X)
    b = np.zeros(3)
    for k in range(1, 5):
        # Newton on the log-likelihood: Hessian X1' diag(g'(t)) X1 for canonical links
        t = X1 @ b
        mu = expit(t) if family == "logistic" else np.exp(t)
        w = mu * (1 - mu) if family == "logistic" else mu
        b = b + np.linalg.solve(X1.T @ (X1 * w[:, None]), X1.T @ (d.Y - mu))
        fit = fit_nuisance(d, family, np.zeros(4), FitOptions(max_iterations=k))
        assert np.max(np.abs(fit.beta1_hat - b)) <= 1e-10
        if fit.converged:
            break


def test_separation_reports_nonconvergence():
    x = np.array([-3.0, -2.0, -1.0, -0.5, 0.5, 1.0, 2.0, 3.0])
    Y = (x > 0).astype(float)
    d = Dataset.partitioned(Y, np.c_[np.ones(8), x], np.zeros(8))
    fit = fit_nuisance(d, "logistic", [0.0])
    assert not fit.converged
    assert fit.iterations <= 100


def test_p1_zero_is_noop():
    d = Dataset(np.array([1.0, 0.0, 1.0]), np.eye(3))
    fit = fit_nuisance(d, "logistic", np.zeros(3))
    assert fit.converged and fit.beta1_hat.shape == (0,) and fit.iterations == 0


def test_singular_information_raises_with_condition_number():
    X1 = np.c_[np.ones(6), np.ones(6)]
    d = Dataset.partitioned(np.array([1.0, 0, 1, 0, 1, 1]), X1, np.zeros(6))
    with pytest.raises(EstimationError, match="condition number"):
        fit_nuisance(d, "logistic", [0.0])


def test_p1_must_be_below_n():
    d = Dataset(np.array([1.0, 0.0, 1.0]), np.eye(3), p1=3)
    with pytest.raises(ValidationError):
        fit_nuisance(d, "logistic", np.zeros(0))


def test_option_validation():
    with pytest.raises(ValidationError):
        FitOptions(max_iterations=0)
    with pytest.raises(ValidationError):
        FitOptions(score_tolerance=0.0)
    assert FitOptions().tolerance_for(50) == pytest.approx(5e-7)
