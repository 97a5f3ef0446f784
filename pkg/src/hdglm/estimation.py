"""Quasi-likelihood estimation of the nuisance coefficients under the null.

With the tested block held at its null value, the nuisance block solves

    X1' {(Y - mu) * psi} = 0,

which is found by Fisher scoring with step-halving.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .exceptions import DomainError, EstimationError, ValidationError
from .families import Dataset, GlmFamily, get_family, psi

log = logging.getLogger(__name__)

__all__ = ["FitOptions", "FitResult", "score_beta1", "fit_nuisance", "full_beta"]


@dataclass(frozen=True)
class FitOptions:
    """Controls for :func:`fit_nuisance`.

    ``score_tolerance=None`` means ``1e-8 * n``.  A fit is declared converged
    only when the score sup-norm is within tolerance *and* the last scoring
    step is below ``step_tolerance`` (sup-norm); the second condition keeps
    diverging fits under separation from being reported as converged.
    """

    max_iterations: int = 100
    score_tolerance: float | None = None
    step_halvings_max: int = 20
    initial_beta1: np.ndarray | None = None
    step_tolerance: float = 1e-6

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if self.score_tolerance is not None and not self.score_tolerance > 0:
            raise ValidationError("score_tolerance must be > 0")
        if self.step_halvings_max < 0:
            raise ValidationError("step_halvings_max must be >= 0")

    def tolerance_for(self, n: int) -> float:
        return 1e-8 * n if self.score_tolerance is None else float(self.score_tolerance)


@dataclass(frozen=True)
class FitResult:
    beta1_hat: np.ndarray
    iterations: int
    final_score_norm: float
    converged: bool
    score_tolerance: float = field(default=np.nan, compare=False)


def full_beta(beta1, beta2_0) -> np.ndarray:
    """Concatenate nuisance and tested coefficients."""
    return np.concatenate([np.asarray(beta1, dtype=float).ravel(),
                           np.asarray(beta2_0, dtype=float).ravel()])


def _check_partition(data: Dataset, beta1, beta2_0):
    beta1 = np.asarray(beta1, dtype=float).ravel()
    beta2_0 = np.asarray(beta2_0, dtype=float).ravel()
    if beta1.shape[0] != data.p1:
        raise ValidationError(f"beta1 has length {beta1.shape[0]}, expected p1={data.p1}")
    if beta2_0.shape[0] != data.p2:
        raise ValidationError(f"beta2_0 has length {beta2_0.shape[0]}, expected p2={data.p2}")
    return beta1, beta2_0


def score_beta1(data: Dataset, family: GlmFamily | str, beta1, beta2_0) -> np.ndarray:
    """Quasi-likelihood score of the nuisance block, ``X1' {(Y - mu) * psi}``."""
    family = get_family(family)
    beta1, beta2_0 = _check_partition(data, beta1, beta2_0)
    t = data.X1 @ beta1 + data.X2 @ beta2_0
    w = (data.Y - family.g(t)) * psi(family, t)
    return data.X1.T @ w


def _supnorm(v) -> float:
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


def fit_nuisance(data: Dataset, family: GlmFamily | str, beta2_0,
                 opts: FitOptions | None = None) -> FitResult:
    """Fisher scoring for the nuisance coefficients with the tested block fixed.

    Each iteration solves ``(X1' W X1) step = score`` with
    ``W = diag(psi * g')`` through a Cholesky factorisation, then halves the
    step while the score sup-norm increases (or the family leaves its domain).
    Non-convergence is reported through ``FitResult.converged``; only a
    singular information matrix raises.
    """
    family = get_family(family)
    opts = opts or FitOptions()
    n = data.n
    tol = opts.tolerance_for(n)
    beta2_0 = np.asarray(beta2_0, dtype=float).ravel()

    if data.p1 == 0:
        _check_partition(data, np.empty(0), beta2_0)
        return FitResult(np.empty(0), 0, 0.0, True, tol)
    if data.p1 >= n:
        raise ValidationError(f"nuisance dimension p1={data.p1} must be below n={n}")

    beta1 = (np.zeros(data.p1) if opts.initial_beta1 is None
             else np.asarray(opts.initial_beta1, dtype=float).ravel().copy())
    _check_partition(data, beta1, beta2_0)
    X1 = data.X1
    offset = data.X2 @ beta2_0

    def evaluate(b):
        t = X1 @ b + offset
        ps = psi(family, t)
        score = X1.T @ ((data.Y - family.g(t)) * ps)
        return t, ps, score

    try:
        t, ps, score = evaluate(beta1)
    except DomainError as exc:
        raise EstimationError(f"initial nuisance value is outside the family domain: {exc}")
    norm = _supnorm(score)

    for it in range(1, opts.max_iterations + 1):
        weight = ps * family.g_prime(t)
        info = (X1 * weight[:, None]).T @ X1
        try:
            factor = linalg.cho_factor(info, lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError):
            cond = np.linalg.cond(info)
            raise EstimationError(
                f"information matrix X1'WX1 is not positive definite at iteration {it} "
                f"(condition number {cond:.3g})") from None
        step = linalg.cho_solve(factor, score)

        scale = 1.0
        accepted = False
        for _ in range(opts.step_halvings_max + 1):
            candidate = beta1 + scale * step
            try:
                t_new, ps_new, score_new = evaluate(candidate)
            except DomainError:
                scale *= 0.5
                continue
            new_norm = _supnorm(score_new)
            if np.isfinite(new_norm) and new_norm <= max(norm, tol):
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            log.debug("step-halving exhausted at iteration %d (score %.3g)", it, norm)
            return FitResult(beta1, it, norm, False, tol)

        step_norm = _supnorm(scale * step)
        beta1, t, ps, score, norm = candidate, t_new, ps_new, score_new, new_norm
        if norm <= tol and step_norm <= opts.step_tolerance:
            return FitResult(beta1, it, norm, True, tol)

    return FitResult(beta1, opts.max_iterations, norm, False, tol)
