import numpy as np
import pytest
from scipy import stats

from hdglm.exceptions import ValidationError
from hdglm.moments import predicted_power, theoretical_moments
from hdglm.simulation import SimulationDesign


@pytest.fixture(scope="module")
def design():
    return SimulationDesign("logistic", n=100, p=40, seed=3, signal_norm2=0.5)


def test_null_moments_vanish(design):
    # small enough that no draw reaches the clamp at |t| = 4
    beta = 0.2 * design.beta_tested(True)
    m = theoretical_moments("logistic", beta, beta, design, mc_draws=20_000, seed=1)
    assert np.all(m.Delta == 0) and np.all(m.Xi == 0)
    assert abs(m.mu_U) < 1e-12
    assert m.mu_A == pytest.approx(np.trace(m.Sigma_beta))


def test_clamp_applies_to_truth_only(design):
    beta = 2 * design.beta_tested(True)
    m = theoretical_moments("logistic", beta, beta, design, mc_draws=10_000, seed=1)
    assert m.delta_norm2 != 0


def test_sigma_at_zero_is_quarter_covariance(design):
    # logistic at beta = beta0 = 0: V(1/2) = 1/4 and psi = 1
    z = np.zeros(design.p)
    m = theoretical_moments("logistic", z, z, design, mc_draws=50_000, seed=2)
    rho = design.rho
    assert np.mean(np.diag(m.Sigma_beta)) == pytest.approx(0.25 * rho @ rho, rel=0.02)


def test_mean_and_variance_forms(design):
    beta = design.beta_tested(True)
    m = theoretical_moments("logistic", beta, np.zeros(design.p), design, mc_draws=20_000)
    n = design.n
    assert m.mu_U == pytest.approx((n - 1) * m.delta_norm2)
    assert m.sigma2_U == pytest.approx(4 * (n - 2) * (1 - 1 / n) * m.xi1
                                       + 2 * (1 - 1 / n) * m.xi2)
    assert m.delta_norm2 > 0 and m.tr_M2 > 0 and m.mu_U_se > 0


def test_deterministic_given_seed(design):
    beta = design.beta_tested(True)
    a = theoretical_moments("logistic", beta, np.zeros(design.p), design, mc_draws=10_000, seed=4)
    b = theoretical_moments("logistic", beta, np.zeros(design.p), design, mc_draws=10_000,
                            seed=4, chunk=3_000)
    assert a.mu_U == pytest.approx(b.mu_U, rel=1e-10)


def test_predicted_power_at_zero_signal_is_alpha(design):
    z = np.zeros(design.p)
    m = theoretical_moments("logistic", z, z, design, mc_draws=10_000)
    assert predicted_power(m, 0.05) == pytest.approx(0.05, abs=1e-12)


def test_predicted_power_formula(design):
    beta = design.beta_tested(True)
    m = theoretical_moments("logistic", beta, np.zeros(design.p), design, mc_draws=10_000)
    expected = stats.norm.cdf(-stats.norm.isf(0.1)
                              + design.n * m.delta_norm2 / np.sqrt(2 * m.tr_M2))
    assert predicted_power(m, 0.1) == pytest.approx(expected)


def test_tested_only_block():
    d = SimulationDesign("logistic", n=100, p=20, p1=2, seed=1)
    beta = d.beta_truth(True)
    m = theoretical_moments("logistic", beta, np.r_[d.beta1, np.zeros(20)], d,
                            mc_draws=10_000, tested_only=True)
    assert m.Delta.shape == (20,) and m.Sigma_beta.shape == (20, 20)


def test_validation(design):
    z = np.zeros(design.p)
    with pytest.raises(ValidationError):
        theoretical_moments("logistic", z, z, design, mc_draws=9_999)
    with pytest.raises(ValidationError):
        theoretical_moments("logistic", z[:-1], z, design, mc_draws=10_000)
