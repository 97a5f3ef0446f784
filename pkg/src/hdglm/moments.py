"""Population moments of the U-statistic and first-order power predictions.

Expectations over the covariate law are estimated by Monte Carlo from the
simulation design.  With ``d(x) = {g(x'beta) - g(x'beta0)} psi(x, beta0) x``:

    Delta  = E[d(X)]
    Sigma  = E[V{g(X'beta)} psi^2(X, beta0) X X']
    Xi     = E[{g(X'beta) - g(X'beta0)}^2 psi^2(X, beta0) X X']
    mu_U   = (n - 1) |Delta|^2,   mu_A = tr(Sigma + Xi)
    sigma2_U = 4 (n - 2)(1 - 1/n) xi1 + 2 (1 - 1/n) xi2
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .exceptions import ValidationError
from .families import get_family, psi
from .simulation import SimulationDesign, gen_covariates

__all__ = ["TheoreticalMoments", "theoretical_moments", "predicted_power"]


@dataclass(frozen=True)
class TheoreticalMoments:
    n: int
    Delta: np.ndarray
    Sigma_beta: np.ndarray
    Xi: np.ndarray
    delta_norm2: float
    tr_M2: float
    mu_A: float
    mu_U: float
    sigma2_U: float
    xi1: float
    xi2: float
    mu_U_se: float
    mc_draws: int

    def snr(self) -> float:
        """``n |Delta|^2 / sqrt(2 tr{(Sigma + Xi)^2})``."""
        return self.n * self.delta_norm2 / np.sqrt(2.0 * self.tr_M2)


def theoretical_moments(family, beta, beta0, cov_model: SimulationDesign,
                        mc_draws: int = 100_000, seed: int = 0, *,
                        tested_only: bool = False, chunk: int = 10_000) -> TheoreticalMoments:
    """Monte-Carlo estimates of the moment quantities of ``U_n``.

    The true mean uses the design's clamped linear predictor, exactly as
    :func:`~hdglm.simulation.gen_response` does; the null mean ``g(x'beta0)``
    is left unclamped, as in the test statistics.  ``tested_only`` restricts
    the vectors/matrices to the tested block (columns ``p1:``).

    ``|Delta|^2`` is estimated without bias by the pairwise form
    ``(|sum d|^2 - sum |d|^2) / (N (N - 1))``; likewise ``tr(M^2)``.
    """
    if mc_draws < 10_000:
        raise ValidationError(f"mc_draws must be >= 1e4, got {mc_draws}")
    fam = get_family(family)
    beta = np.asarray(beta, dtype=float).ravel()
    beta0 = np.asarray(beta0, dtype=float).ravel()
    ptot = cov_model.total_p
    if beta.shape[0] != ptot or beta0.shape[0] != ptot:
        raise ValidationError(f"beta and beta0 must have length {ptot}")
    cols = slice(cov_model.p1, None) if tested_only else slice(None)
    q = ptot - cov_model.p1 if tested_only else ptot
    lo, hi = cov_model.clamp

    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    d_sum = np.zeros(q)
    d_sq = 0.0
    S_sum = np.zeros((q, q))
    Xi_sum = np.zeros((q, q))
    a2x4 = 0.0
    done = 0
    while done < mc_draws:
        m = min(chunk, mc_draws - done)
        X = gen_covariates(cov_model, rng, n=m)
        t = np.clip(X @ beta, lo, hi)
        t0 = X @ beta0
        psi0 = psi(fam, t0)
        diff = fam.g(t) - fam.g(t0)
        var = fam.V(fam.g(t))
        Xc = X[:, cols]
        sq = np.einsum("ij,ij->i", Xc, Xc)
        d_sum += (diff * psi0) @ Xc
        d_sq += float(np.sum((diff * psi0) ** 2 * sq))
        S_sum += (Xc * (var * psi0 ** 2)[:, None]).T @ Xc
        Xi_sum += (Xc * (diff ** 2 * psi0 ** 2)[:, None]).T @ Xc
        a = (var + diff ** 2) * psi0 ** 2
        a2x4 += float(np.sum(a ** 2 * sq ** 2))
        done += m

    N = float(mc_draws)
    Delta = d_sum / N
    Sigma = S_sum / N
    Xi = Xi_sum / N
    M = Sigma + Xi
    delta_norm2 = (float(d_sum @ d_sum) - d_sq) / (N * (N - 1.0))
    M_sum = S_sum + Xi_sum
    tr_M2 = (float(np.sum(M_sum * M_sum)) - a2x4) / (N * (N - 1.0))

    n = cov_model.n
    xi1 = float(Delta @ M @ Delta) - delta_norm2 ** 2
    xi2 = tr_M2 - delta_norm2 ** 2
    sigma2_U = 4.0 * (n - 2) * (1.0 - 1.0 / n) * xi1 + 2.0 * (1.0 - 1.0 / n) * xi2
    # delta method: Var(|Delta_hat|^2) ~ 4 Var(Delta' d) / N with Cov(d) = Xi - Delta Delta'
    var_proj = max(float(Delta @ Xi @ Delta) - float(Delta @ Delta) ** 2, 0.0)
    mu_U_se = (n - 1) * 2.0 * np.sqrt(var_proj / N)
    return TheoreticalMoments(
        n=n, Delta=Delta, Sigma_beta=Sigma, Xi=Xi, delta_norm2=delta_norm2, tr_M2=tr_M2,
        mu_A=float(np.trace(M)), mu_U=(n - 1) * delta_norm2, sigma2_U=sigma2_U,
        xi1=xi1, xi2=xi2, mu_U_se=float(mu_U_se), mc_draws=mc_draws)


def predicted_power(moments: TheoreticalMoments, alpha: float) -> float:
    """First-order power ``Phi(-z_alpha + n |Delta|^2 / sqrt(2 tr{(Sigma + Xi)^2}))``."""
    return float(stats.norm.cdf(-stats.norm.isf(alpha) + moments.snr()))
