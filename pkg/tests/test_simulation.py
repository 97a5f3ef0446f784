import numpy as np
import pytest

from hdglm.exceptions import SimulationFailureError, ValidationError
from hdglm.simulation import (DEFAULT_ALPHAS, SimulationDesign, gen_covariates, gen_response,
                              moving_average, run_power_study, simulate_dataset,
                              with_replications)


def test_alpha_grid():
    assert len(DEFAULT_ALPHAS) == 7
    assert DEFAULT_ALPHAS[0] == 0.05 and DEFAULT_ALPHAS[-1] == 0.2


def test_moving_average_structure():
    rho = np.array([0.5, 0.25, 0.125])
    X = moving_average(rho, 20000, 8, np.random.default_rng(0))
    C = np.cov(X, rowvar=False)
    var = float(rho @ rho)
    lag1 = rho[0] * rho[1] + rho[1] * rho[2]
    lag2 = rho[0] * rho[2]
    assert C[3, 3] == pytest.approx(var, rel=0.05)
    assert C[3, 4] == pytest.approx(lag1, rel=0.08)
    assert C[3, 5] == pytest.approx(lag2, rel=0.15)
    assert abs(C[3, 6]) < 0.01


def test_design_draws_rho_and_beta1_from_seed():
    a = SimulationDesign("logistic", n=40, p=30, p1=3, seed=5)
    b = SimulationDesign("logistic", n=40, p=30, p1=3, seed=5)
    c = SimulationDesign("logistic", n=40, p=30, p1=3, seed=6)
    np.testing.assert_array_equal(a.rho, b.rho)
    assert not np.array_equal(a.rho, c.rho)
    assert a.rho.shape == (5,) and np.all((a.rho > 0) & (a.rho < 1))
    assert a.beta1.shape == (3,) and np.all((a.beta1 > 0) & (a.beta1 < 1))


def test_alternative_coefficients():
    d = SimulationDesign("poisson", n=80, p=320)
    b = d.beta_tested(True)
    assert np.count_nonzero(b) == 5
    assert float(b @ b) == pytest.approx(2.0)
    assert not d.beta_tested(False).any()


def test_design_validation():
    with pytest.raises(ValidationError):
        SimulationDesign("logistic", n=2, p=10)
    with pytest.raises(ValidationError):
        SimulationDesign("logistic", n=20, p=10, n_nonzero=11)
    with pytest.raises(ValidationError):
        SimulationDesign("logistic", n=20, p=10, rho=[0.5])
    with pytest.raises(ValidationError):
        SimulationDesign("logistic", n=20, p=10, nuisance_covariates="other")


@pytest.mark.parametrize("family,lo,hi", [("logistic", -4, 4), ("poisson", 0, 4)])
def test_clamped_response_means(family, lo, hi):
    rng = np.random.default_rng(1)
    X = np.linspace(-10, 10, 41)[:, None]
    Y = np.array([gen_response(family, X, [1.0], (lo, hi), rng) for _ in range(4000)])
    mean = Y.mean(axis=0)
    from hdglm.families import get_family
    expected = get_family(family).g(np.clip(X[:, 0], lo, hi))
    np.testing.assert_allclose(mean, expected, rtol=0.05, atol=0.02)


def test_negative_binomial_mixture_moments():
    rng = np.random.default_rng(2)
    Y = gen_response("negative-binomial", np.zeros((200000, 1)), [0.0], (0, 4), rng)
    # Gamma(shape=1, scale=1) mixed Poisson: mean 1, variance 2
    assert Y.mean() == pytest.approx(1.0, abs=0.02)
    assert Y.var() == pytest.approx(2.0, abs=0.05)


def test_covariate_layouts():
    rng = np.random.default_rng(3)
    for law in ("iid-normal", "ma-independent", "ma-shared"):
        d = SimulationDesign("logistic", n=50, p=20, p1=4, nuisance_covariates=law)
        assert gen_covariates(d, rng).shape == (50, 24)


def test_replication_streams_are_counter_based():
    d = SimulationDesign("logistic", n=30, p=40, seed=9, replications=10)
    a = simulate_dataset(d, "null", 7)
    b = simulate_dataset(d, "null", 7)
    c = simulate_dataset(d, "alt", 7)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.Y, b.Y)
    assert not np.array_equal(a.X, c.X)


def test_profile_layout_and_csv():
    d = SimulationDesign("logistic", n=30, p=60, seed=1, replications=20, mc_draws=100)
    prof = run_power_study(d)
    rows = prof.rows()
    assert len(rows) == 7 * 3
    assert {r["method"] for r in rows} == {"proposed-global", "goeman-asymptotic",
                                           "goeman-montecarlo"}
    lines = prof.to_csv().splitlines()
    assert lines[0] == "method,family,n,p,alpha,size,size_se,power,power_se,failures"
    assert len(lines) == 22
    assert all(0 <= r["size"] <= 1 and 0 <= r["power"] <= 1 for r in rows)


def test_deterministic_across_parallelism():
    d = SimulationDesign("poisson", n=30, p=50, seed=4, replications=150, mc_draws=100)
    a = run_power_study(d, parallelism=1)
    b = run_power_study(d, parallelism=3)
    assert a.to_csv() == b.to_csv()
    for key in a.pvalues:
        assert a.pvalues[key].tobytes() == b.pvalues[key].tobytes()
        assert a.zscores[key].tobytes() == b.zscores[key].tobytes()


def test_progress_reported_per_hundred():
    d = SimulationDesign("logistic", n=20, p=30, seed=1, replications=250)
    seen = []
    run_power_study(d, ["proposed-global"], scenarios=("null",),
                    progress=lambda done, total: seen.append((done, total)))
    assert seen == [(100, 250), (200, 250), (250, 250)]


def test_nuisance_design_runs():
    d = SimulationDesign("logistic", n=80, p=100, p1=3, seed=2, replications=30, mc_draws=100)
    prof = run_power_study(d)
    assert prof.methods[0] == "proposed-nuisance"
    assert prof.failures("proposed-nuisance") <= 1


def test_failure_budget():
    # tiny n with many nuisance covariates: separation makes the fits fail
    d = SimulationDesign("logistic", n=12, p=8, p1=6, seed=0, replications=50,
                         nuisance_covariates="ma-shared")
    with pytest.raises(SimulationFailureError) as info:
        run_power_study(d, ["proposed-nuisance"], scenarios=("null",))
    assert info.value.profile.failures("proposed-nuisance") > 0


def test_with_replications_keeps_design():
    d = SimulationDesign("probit", n=30, p=40, seed=3)
    e = with_replications(d, 17)
    assert e.replications == 17
    np.testing.assert_array_equal(d.rho, e.rho)


def test_to_dict_records_rho():
    d = SimulationDesign("probit", n=30, p=40, seed=3).to_dict()
    assert len(d["rho"]) == 5 and d["family"] == "probit"


def test_identity_moving_average():
    Z = np.random.default_rng(8).standard_normal((5, 7))
    X = moving_average(np.array([1.0]), 5, 7, np.random.default_rng(8))
    np.testing.assert_array_equal(X, Z)


def test_ma5_lag5_covariance_vanishes():
    d = SimulationDesign("logistic", n=100_000, p=12, seed=2)
    X = gen_covariates(d, np.random.default_rng(0))
    assert abs(np.mean(X[:, 2] * X[:, 7])) < 0.02


def test_poisson_clamped_means_in_range():
    d = SimulationDesign("poisson", n=500, p=40, seed=1, signal_norm2=30.0)
    X = gen_covariates(d, np.random.default_rng(0))
    t = np.clip(X @ d.beta_tested(True), *d.clamp)
    mu = d.glm_family.g(t)
    assert mu.min() >= 1.0 and mu.max() <= np.exp(4.0)
    assert mu.min() == 1.0  # the lower clamp is active for this design


def test_empty_method_set_gives_empty_profile():
    prof = run_power_study(SimulationDesign("logistic", n=20, p=30), methods=[])
    assert prof.rows() == [] and prof.methods == ()


def test_size_monotone_and_power_above_size():
    d = SimulationDesign("poisson", n=60, p=100, seed=7, replications=200, mc_draws=100)
    prof = run_power_study(d)
    for m in prof.methods:
        sizes = [prof.size(m, a) for a in d.alphas]
        assert sizes == sorted(sizes)
        assert all(prof.power(m, a) >= prof.size(m, a) for a in d.alphas)
