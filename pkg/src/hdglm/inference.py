"""U-statistic tests for high-dimensional GLM coefficients.

All pairwise sums over ``i != j`` are evaluated through the Gram matrix
``G = X X'``: with weighted residuals ``w_i = eps_i * psi_i``,

    sum_{i != j} w_i w_j G_ij          = w' G w - sum_i w_i^2 G_ii
    sum_{i != j} w_i^2 w_j^2 G_ij^2    = v' (G o G) v - sum_i v_i^2 G_ii^2,  v = w^2

Every p-value is one-sided (upper tail).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import stats

from .estimation import FitResult, full_beta
from .exceptions import DegenerateStatisticError, NotConvergedError, ValidationError
from .families import Dataset, GlmFamily, get_family, residuals_and_weights

__all__ = [
    "GlobalStatistics",
    "NuisanceStatistics",
    "TestResult",
    "METHODS",
    "gram",
    "pair_sums",
    "global_statistics",
    "proposed_global_test",
    "goeman_asymptotic_test",
    "goeman_montecarlo_test",
    "nuisance_statistics",
    "proposed_nuisance_test",
]

METHODS = ("proposed-global", "proposed-nuisance", "goeman-asymptotic", "goeman-montecarlo")


@dataclass(frozen=True)
class TestResult:
    """Outcome of one test.  ``p_value`` is the upper tail of ``z``."""

    __test__ = False  # not a pytest class

    method: str
    statistic: float
    standardizer: float
    z: float
    p_value: float
    meta: dict[str, Any] = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict[str, Any]:
        return {"method": self.method, "statistic": self.statistic,
                "standardizer": self.standardizer, "z": self.z,
                "p_value": self.p_value, **({"meta": self.meta} if self.meta else {})}


@dataclass(frozen=True)
class GlobalStatistics:
    U_n: float
    A_n: float
    tr_hat_Sigma2: float

    @property
    def tr_hat_Sigma(self) -> float:
        return self.A_n

    @property
    def S_n(self) -> float:
        if self.A_n == 0:
            raise DegenerateStatisticError("A_n = 0 (all weighted residuals vanish); S_n undefined")
        return 1.0 + self.U_n / self.A_n


@dataclass(frozen=True)
class NuisanceStatistics:
    U_tilde: float
    R_hat: float
    beta_hat0: np.ndarray
    A_tilde: float = np.nan


def gram(X) -> np.ndarray:
    """``X X'`` as a symmetric n x n array."""
    X = np.asarray(X, dtype=float)
    G = X @ X.T
    # exact symmetry regardless of BLAS blocking
    return np.triu(G) + np.triu(G, 1).T


def pair_sums(w, G):
    """Diagonal-excluded quadratic forms of the weighted residuals.

    Returns ``(sum_{i!=j} w_i w_j G_ij, sum_i w_i^2 G_ii, sum_{i!=j} w_i^2 w_j^2 G_ij^2)``.
    """
    w = np.asarray(w, dtype=float)
    d = np.diag(G)
    v = w * w
    diag_term = float(v @ d)
    cross = float(w @ (G @ w)) - diag_term
    G2 = G * G
    cross_sq = float(v @ (G2 @ v)) - float((v * v) @ (d * d))
    return cross, diag_term, cross_sq


def _from_weighted(w, G) -> GlobalStatistics:
    n = len(w)
    cross, diag_term, cross_sq = pair_sums(w, G)
    return GlobalStatistics(U_n=cross / n, A_n=diag_term / n,
                            tr_hat_Sigma2=cross_sq / (n * (n - 1)))


def global_statistics(data: Dataset, family: GlmFamily | str, beta0,
                      G: np.ndarray | None = None) -> GlobalStatistics:
    """U_n, A_n (= estimated tr Sigma) and the squared-trace estimator at ``beta0``.

    ``G`` may be passed to reuse a precomputed Gram matrix of ``data.X``.
    """
    eps0, psi0, _ = residuals_and_weights(data, family, beta0)
    if G is None:
        G = gram(data.X)
    return _from_weighted(eps0 * psi0, G)


def _upper(method: str, statistic: float, standardizer: float, meta=None) -> TestResult:
    z = statistic / standardizer
    return TestResult(method, float(statistic), float(standardizer), float(z),
                      float(stats.norm.sf(z)), dict(meta or {}))


def _constant_psi_scale(psi0) -> float:
    # The standardised statistic is invariant to a common factor in psi; dividing
    # it out keeps z bit-identical across families whose psi is constant.
    return float(psi0[0]) if np.all(psi0 == psi0[0]) else 1.0


def proposed_global_test(data: Dataset, family: GlmFamily | str, beta0,
                         G: np.ndarray | None = None) -> TestResult:
    """Reject ``beta = beta0`` for large ``U_n / sqrt(2 tr_hat(Sigma^2))``."""
    eps0, psi0, _ = residuals_and_weights(data, family, beta0)
    if G is None:
        G = gram(data.X)
    st = _from_weighted(eps0 * psi0, G)
    if not st.tr_hat_Sigma2 > 0:
        raise DegenerateStatisticError("squared-trace estimator is zero; test undefined")
    c = _constant_psi_scale(psi0)
    if c != 1.0:
        unit = _from_weighted(eps0, G)
        z = unit.U_n / np.sqrt(2.0 * unit.tr_hat_Sigma2)
        sd = np.sqrt(2.0 * st.tr_hat_Sigma2)
        return TestResult("proposed-global", st.U_n, float(sd), float(z),
                          float(stats.norm.sf(z)), {"A_n": st.A_n})
    return _upper("proposed-global", st.U_n, np.sqrt(2.0 * st.tr_hat_Sigma2), {"A_n": st.A_n})


def _tested_block(data: Dataset, family, beta0, fit: FitResult | None,
                  allow_unconverged: bool):
    """Weighted residuals and tested covariates for the global or nuisance setting."""
    if fit is None:
        eps0, psi0, mu0 = residuals_and_weights(data, family, beta0)
        return eps0, psi0, mu0, data.X, np.asarray(beta0, dtype=float).ravel()
    if not fit.converged and not allow_unconverged:
        raise NotConvergedError(
            f"nuisance fit did not converge (score {fit.final_score_norm:.3g} after "
            f"{fit.iterations} iterations)")
    beta_hat0 = full_beta(fit.beta1_hat, beta0)
    eps0, psi0, mu0 = residuals_and_weights(data, family, beta_hat0)
    return eps0, psi0, mu0, data.X2, beta_hat0


def goeman_asymptotic_test(data: Dataset, family: GlmFamily | str, beta0,
                           fit: FitResult | None = None, *,
                           allow_unconverged: bool = False,
                           G: np.ndarray | None = None) -> TestResult:
    """Normal calibration of ``S_n = 1 + U_n / A_n``.

    ``z = (S_n - 1) / sqrt(2 tr_hat(Sigma^2) / tr_hat(Sigma)^2)``.  With ``fit``
    given, ``beta0`` is the null value of the tested block and the statistic is
    built from ``data.X2`` at ``(fit.beta1_hat, beta0)``.
    """
    eps0, psi0, _, Xt, _ = _tested_block(data, family, beta0, fit, allow_unconverged)
    if G is None:
        G = gram(Xt)
    st = _from_weighted(eps0 * psi0, G)
    S_n = st.S_n
    if not st.tr_hat_Sigma2 > 0:
        raise DegenerateStatisticError("squared-trace estimator is zero; test undefined")
    sd = np.sqrt(2.0 * st.tr_hat_Sigma2 / st.tr_hat_Sigma ** 2)
    return _upper("goeman-asymptotic", S_n - 1.0, sd, {"S_n": S_n})


def goeman_montecarlo_test(data: Dataset, family: GlmFamily | str, beta0,
                           fit: FitResult | None = None, *, B: int = 1000,
                           seed: int | np.random.SeedSequence = 0,
                           allow_unconverged: bool = False,
                           G: np.ndarray | None = None) -> TestResult:
    """Monte-Carlo calibration of ``S_n``.

    Draws ``Y* ~ N(mu0, diag V(mu0))`` ``B`` times with the covariates and null
    coefficients held fixed, recomputes ``S_n`` for each draw and reports the
    add-one p-value ``(1 + #{S* >= S_obs}) / (B + 1)``.  ``z`` is the normal
    quantile of that p-value.
    """
    if B < 100:
        raise ValidationError(f"Monte-Carlo calibration needs B >= 100, got {B}")
    family = get_family(family)
    eps0, psi0, mu0, Xt, _ = _tested_block(data, family, beta0, fit, allow_unconverged)
    var0 = family.V(mu0)
    bad = ~(var0 > 0)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DegenerateStatisticError(f"V(mu0) = {var0[i]:.3g} <= 0 at index {i}")
    if G is None:
        G = gram(Xt)
    S_obs = _from_weighted(eps0 * psi0, G).S_n

    rng = np.random.default_rng(seed)
    # Y* - mu0 = sqrt(V) * e; only the weighted residuals enter S_n
    E = rng.standard_normal((B, len(mu0)))
    W = E * (np.sqrt(var0) * psi0)
    d = np.diag(G)
    diag_terms = (W * W) @ d
    quad = np.einsum("bi,bi->b", W @ G, W)
    S_star = 1.0 + (quad - diag_terms) / diag_terms
    exceed = int(np.count_nonzero(S_star >= S_obs))
    p = (1 + exceed) / (B + 1)
    z = float(stats.norm.isf(p))
    sd = float(np.std(S_star, ddof=1))
    return TestResult("goeman-montecarlo", float(S_obs - 1.0), sd, z, float(p),
                      {"B": int(B), "exceedances": exceed, "S_n": float(S_obs)})


def nuisance_statistics(data: Dataset, family: GlmFamily | str, beta2_0, fit: FitResult,
                        *, allow_unconverged: bool = False,
                        G2: np.ndarray | None = None) -> NuisanceStatistics:
    """U-tilde and R-hat on the tested block at ``(fit.beta1_hat, beta2_0)``."""
    if data.p2 < 1:
        raise ValidationError("nuisance test needs a non-empty tested block (p2 >= 1)")
    eps0, psi0, _, X2, beta_hat0 = _tested_block(data, family, beta2_0, fit,
                                                  allow_unconverged)
    if G2 is None:
        G2 = gram(X2)
    st = _from_weighted(eps0 * psi0, G2)
    return NuisanceStatistics(U_tilde=st.U_n, R_hat=st.tr_hat_Sigma2,
                              beta_hat0=beta_hat0, A_tilde=st.A_n)


def nuisance_test_from_weights(eps0, psi0, G2) -> TestResult:
    """Proposed nuisance test from precomputed residuals/weights and tested-block Gram."""
    st = _from_weighted(eps0 * psi0, G2)
    if not st.tr_hat_Sigma2 > 0:
        raise DegenerateStatisticError("R_hat is zero; nuisance test undefined")
    return _upper("proposed-nuisance", st.U_n, np.sqrt(2.0 * st.tr_hat_Sigma2))


def proposed_nuisance_test(data: Dataset, family: GlmFamily | str, beta2_0,
                           fit: FitResult, *, allow_unconverged: bool = False,
                           G2: np.ndarray | None = None) -> TestResult:
    """Reject ``beta2 = beta2_0`` for large ``U_tilde / sqrt(2 R_hat)``."""
    ns = nuisance_statistics(data, family, beta2_0, fit,
                             allow_unconverged=allow_unconverged, G2=G2)
    if not ns.R_hat > 0:
        raise DegenerateStatisticError("R_hat is zero; nuisance test undefined")
    res = _upper("proposed-nuisance", ns.U_tilde, np.sqrt(2.0 * ns.R_hat))
    return TestResult(res.method, res.statistic, res.standardizer, res.z, res.p_value,
                      {"beta1_hat": [float(b) for b in fit.beta1_hat]})
