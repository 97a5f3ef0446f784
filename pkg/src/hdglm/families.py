"""GLM families and the pointwise quasi-score weight.

Each family carries the mean function ``g`` (inverse link), its derivative
``g_prime`` and the variance function ``V`` of the mean.  The weight

    psi(t) = g'(t) / V(g(t))

multiplies residuals in every statistic of the package.  For canonical links
(logistic, Poisson) it is identically one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special

from .exceptions import DomainError, ValidationError

__all__ = [
    "GlmFamily",
    "Dataset",
    "LOGISTIC",
    "POISSON",
    "NEGATIVE_BINOMIAL",
    "PROBIT",
    "FAMILIES",
    "get_family",
    "psi",
    "residuals_and_weights",
]

# Beyond this the probit weight is dominated by tail rounding.
PROBIT_MAX_ABS_T = 37.0


def _logistic_mean(t):
    return special.expit(t)


def _logistic_deriv(t):
    # expit(t) * expit(-t) stays positive where m * (1 - m) would round to 0
    return special.expit(t) * special.expit(-t)


def _logistic_var(m):
    return m * (1.0 - m)


def _exp(t):
    return np.exp(t)


def _poisson_var(m):
    return m


def _nb_var(m):
    # Poisson(lambda), lambda ~ Gamma(shape=m, scale=1): Var = m + m
    return 2.0 * m


def _probit_mean(t):
    return special.ndtr(t)


def _probit_deriv(t):
    return np.exp(-0.5 * np.square(t)) / np.sqrt(2.0 * np.pi)


def _probit_var(m):
    return m * (1.0 - m)


def _log_psi_probit(t):
    log_pdf = -0.5 * np.square(t) - 0.5 * np.log(2.0 * np.pi)
    return log_pdf - special.log_ndtr(t) - special.log_ndtr(-t)


@dataclass(frozen=True)
class GlmFamily:
    """Mean/variance specification of a quasi-likelihood GLM.

    Attributes
    ----------
    name : str
        One of ``logistic``, ``poisson``, ``negative-binomial``, ``probit``.
    g, g_prime : callable
        Inverse link and its derivative, vectorised over numpy arrays.
    V : callable
        Variance as a function of the mean.
    binary : bool
        Whether responses must lie in {0, 1}; otherwise non-negative counts.
    canonical : bool
        ``psi`` is identically one.
    """

    name: str
    g: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    g_prime: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    V: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    binary: bool
    canonical: bool = False
    max_abs_t: float = np.inf

    def psi(self, t):
        """Vectorised ``g'(t) / V(g(t))`` with domain checks."""
        return psi(self, t)

    def working_weight(self, t):
        """Fisher information weight ``psi(t) * g'(t)`` used by scoring."""
        t = np.asarray(t, dtype=float)
        return psi(self, t) * self.g_prime(t)


LOGISTIC = GlmFamily("logistic", _logistic_mean, _logistic_deriv, _logistic_var,
                     binary=True, canonical=True)
POISSON = GlmFamily("poisson", _exp, _exp, _poisson_var, binary=False, canonical=True)
NEGATIVE_BINOMIAL = GlmFamily("negative-binomial", _exp, _exp, _nb_var, binary=False)
PROBIT = GlmFamily("probit", _probit_mean, _probit_deriv, _probit_var, binary=True,
                   max_abs_t=PROBIT_MAX_ABS_T)

FAMILIES = {f.name: f for f in (LOGISTIC, POISSON, NEGATIVE_BINOMIAL, PROBIT)}
_ALIASES = {"nb": "negative-binomial", "negbin": "negative-binomial",
            "negative_binomial": "negative-binomial"}


def get_family(family: str | GlmFamily) -> GlmFamily:
    """Resolve a family name (or pass an instance through)."""
    if isinstance(family, GlmFamily):
        return family
    key = _ALIASES.get(str(family).lower(), str(family).lower())
    try:
        return FAMILIES[key]
    except KeyError:
        raise ValidationError(
            f"unknown family {family!r}; expected one of {sorted(FAMILIES)}") from None


def _first_bad(mask: np.ndarray) -> int:
    return int(np.flatnonzero(np.ravel(mask))[0])


def psi(family: GlmFamily | str, t):
    """Quasi-score weight ``g'(t) / V(g(t))`` evaluated at linear predictor(s) ``t``.

    Scalars in, scalar out; arrays in, arrays out.

    Raises
    ------
    DomainError
        If any ``t`` is non-finite, outside the family's admissible range, or
        the variance underflows to zero.  The message names the first
        offending index.
    """
    family = get_family(family)
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))

    bad = ~np.isfinite(t)
    if bad.any():
        i = _first_bad(bad)
        raise DomainError(f"{family.name}: non-finite linear predictor at index {i}")
    if np.isfinite(family.max_abs_t):
        bad = np.abs(t) > family.max_abs_t
        if bad.any():
            i = _first_bad(bad)
            raise DomainError(
                f"{family.name}: |t|={abs(t.flat[i]):.4g} exceeds {family.max_abs_t:g} "
                f"at index {i}")

    if family.name == "probit":
        out = np.exp(_log_psi_probit(t))
    else:
        v = family.V(family.g(t))
        bad = ~(v > 0)
        if bad.any():
            i = _first_bad(bad)
            raise DomainError(
                f"{family.name}: variance V(g(t)) underflows to 0 at index {i} "
                f"(t={t.flat[i]:.6g})")
        if family.canonical:
            out = np.ones_like(t)
        else:
            out = family.g_prime(t) / v
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class Dataset:
    """Responses ``Y`` (length n) and covariates ``X`` (n x p).

    ``p1`` splits the columns into a nuisance block ``X[:, :p1]`` and a tested
    block ``X[:, p1:]``; ``p1 = 0`` means there is no nuisance block.
    """

    Y: np.ndarray
    X: np.ndarray
    p1: int = 0

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if Y.ndim != 1 or X.ndim != 2:
            raise ValidationError("Y must be a vector and X a matrix")
        n, p = X.shape
        if Y.shape[0] != n:
            raise ValidationError(f"Y has {Y.shape[0]} rows but X has {n}")
        if n < 3:
            raise ValidationError(f"need at least 3 observations, got {n}")
        if p < 1:
            raise ValidationError("X must have at least one column")
        if not 0 <= self.p1 <= p:
            raise ValidationError(f"partition p1={self.p1} outside [0, {p}]")
        for name, arr in (("Y", Y), ("X", X)):
            bad = ~np.isfinite(arr)
            if bad.any():
                idx = np.unravel_index(_first_bad(bad), arr.shape)
                raise ValidationError(f"non-finite entry in {name} at {tuple(map(int, idx))}")
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def p2(self) -> int:
        return self.p - self.p1

    @property
    def X1(self) -> np.ndarray:
        return self.X[:, :self.p1]

    @property
    def X2(self) -> np.ndarray:
        return self.X[:, self.p1:]

    @classmethod
    def partitioned(cls, Y, X1, X2) -> "Dataset":
        X1 = np.asarray(X1, dtype=float).reshape(len(Y), -1)
        X2 = np.asarray(X2, dtype=float).reshape(len(Y), -1)
        return cls(Y, np.hstack([X1, X2]), p1=X1.shape[1])

    def check_family(self, family: GlmFamily | str) -> None:
        """Check that responses are admissible for ``family``."""
        family = get_family(family)
        if family.binary:
            bad = (self.Y != 0) & (self.Y != 1)
            if bad.any():
                i = _first_bad(bad)
                raise ValidationError(
                    f"{family.name} requires binary responses; Y[{i}]={self.Y[i]:g}")
        else:
            bad = self.Y < 0
            if bad.any():
                i = _first_bad(bad)
                raise ValidationError(
                    f"{family.name} requires non-negative counts; Y[{i}]={self.Y[i]:g}")


def residuals_and_weights(data: Dataset, family: GlmFamily | str, beta0):
    """Residuals, weights and means at ``beta0``.

    Returns
    -------
    eps0, psi0, mu0 : ndarray
        ``mu0 = g(X beta0)``, ``eps0 = Y - mu0`` and ``psi0 = psi(X beta0)``.
    """
    family = get_family(family)
    beta0 = np.asarray(beta0, dtype=float).ravel()
    if beta0.shape[0] != data.p:
        raise ValidationError(f"beta0 has length {beta0.shape[0]}, expected {data.p}")
    t = data.X @ beta0
    psi0 = psi(family, t)
    mu0 = family.g(t)
    return data.Y - mu0, psi0, mu0
