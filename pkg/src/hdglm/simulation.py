"""Size/power study for the global and nuisance-parameter tests.

Covariates follow a moving-average construction

    X_ij = rho_1 Z_ij + rho_2 Z_i(j+1) + ... + rho_T Z_i(j+T-1),   Z ~ N(0, I),

with ``rho`` drawn once from U(0, 1) per design.  Responses are Bernoulli,
Poisson or a Poisson-Gamma mixture, with the linear predictor clamped to a
family-specific interval before the mean function is applied.

Each replication draws from its own counter-based substream
``SeedSequence(seed, spawn_key=(scenario, replication, ...))`` so results do
not depend on how replications are scheduled across workers.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from .estimation import FitOptions, fit_nuisance
from .exceptions import HdglmError, SimulationFailureError, ValidationError
from .families import Dataset, GlmFamily, get_family
from .inference import (
    goeman_asymptotic_test,
    goeman_montecarlo_test,
    gram,
    proposed_global_test,
    proposed_nuisance_test,
)

log = logging.getLogger(__name__)

__all__ = [
    "DEFAULT_ALPHAS",
    "DEFAULT_CLAMPS",
    "SimulationDesign",
    "PowerProfile",
    "moving_average",
    "gen_covariates",
    "gen_response",
    "simulate_dataset",
    "run_power_study",
]

DEFAULT_ALPHAS = tuple(float(a) for a in np.round(np.linspace(0.05, 0.20, 7), 10))
DEFAULT_CLAMPS = {
    "logistic": (-4.0, 4.0),
    "probit": (-4.0, 4.0),
    "poisson": (0.0, 4.0),
    "negative-binomial": (0.0, 4.0),
}
SCENARIOS = {"null": 1, "alt": 2}
MAX_FAILURE_RATE = 0.01
NUISANCE_COVARIATES = ("iid-normal", "ma-independent", "ma-shared")


@dataclass(frozen=True)
class SimulationDesign:
    """One simulation configuration.

    ``p`` is the dimension of the tested block; ``p1 > 0`` adds a nuisance
    block in front of it (columns ``0..p1-1``) whose true
    coefficients are drawn once from U(0, 1).  Under the alternative the first
    ``n_nonzero`` tested coefficients equal ``sqrt(signal_norm2 / n_nonzero)``.

    ``nuisance_covariates`` selects the law of the nuisance block:
    ``"iid-normal"`` (default) draws it from N(0, I) independently of the
    tested block, ``"ma-independent"`` uses a separate MA(T) process and
    ``"ma-shared"`` takes the first ``p1`` columns of one MA(T) process over
    all ``p1 + p`` columns.
    """

    family: str
    n: int
    p: int
    p1: int = 0
    T: int = 5
    signal_norm2: float = 2.0
    n_nonzero: int = 5
    alphas: tuple[float, ...] = DEFAULT_ALPHAS
    replications: int = 1000
    seed: int = 0
    mc_draws: int = 1000
    clamp: tuple[float, float] | None = None
    nuisance_covariates: str = "iid-normal"
    rho: np.ndarray | None = field(default=None, compare=False)
    beta1: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        fam = get_family(self.family)
        object.__setattr__(self, "family", fam.name)
        if self.n < 3 or self.p < 1 or self.p1 < 0:
            raise ValidationError("need n >= 3, p >= 1, p1 >= 0")
        if not 1 <= self.T < self.p + self.p1:
            raise ValidationError(f"MA order T={self.T} must satisfy 1 <= T < p")
        if not 0 < self.n_nonzero <= self.p:
            raise ValidationError("n_nonzero must lie in [1, p]")
        if self.nuisance_covariates not in NUISANCE_COVARIATES:
            raise ValidationError(
                f"nuisance_covariates must be one of {NUISANCE_COVARIATES}")
        if self.clamp is None:
            object.__setattr__(self, "clamp", DEFAULT_CLAMPS[fam.name])
        lo, hi = self.clamp
        if not lo <= hi:
            raise ValidationError(f"empty clamp interval {self.clamp}")
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        setup = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(0,)))
        rho = setup.uniform(0.0, 1.0, self.T)
        beta1 = setup.uniform(0.0, 1.0, self.p1)
        if self.rho is None:
            object.__setattr__(self, "rho", rho)
        else:
            r = np.asarray(self.rho, dtype=float).ravel()
            if r.shape[0] != self.T:
                raise ValidationError(f"rho has length {r.shape[0]}, expected T={self.T}")
            object.__setattr__(self, "rho", r)
        if self.beta1 is None:
            object.__setattr__(self, "beta1", beta1)
        else:
            b = np.asarray(self.beta1, dtype=float).ravel()
            if b.shape[0] != self.p1:
                raise ValidationError(f"beta1 has length {b.shape[0]}, expected p1={self.p1}")
            object.__setattr__(self, "beta1", b)

    @property
    def glm_family(self) -> GlmFamily:
        return get_family(self.family)

    @property
    def total_p(self) -> int:
        return self.p1 + self.p

    @property
    def nuisance(self) -> bool:
        return self.p1 > 0

    def beta_tested(self, alternative: bool) -> np.ndarray:
        b = np.zeros(self.p)
        if alternative:
            b[:self.n_nonzero] = math.sqrt(self.signal_norm2 / self.n_nonzero)
        return b

    def beta_truth(self, alternative: bool) -> np.ndarray:
        return np.concatenate([self.beta1, self.beta_tested(alternative)])

    def to_dict(self) -> dict:
        return {
            "family": self.family, "n": self.n, "p": self.p, "p1": self.p1, "T": self.T,
            "rho": [float(r) for r in self.rho], "beta1": [float(b) for b in self.beta1],
            "signal_norm2": self.signal_norm2, "n_nonzero": self.n_nonzero,
            "clamp": list(self.clamp), "nuisance_covariates": self.nuisance_covariates,
            "alphas": list(self.alphas),
            "replications": self.replications, "seed": self.seed, "mc_draws": self.mc_draws,
        }


def moving_average(rho, n: int, p: int, rng: np.random.Generator) -> np.ndarray:
    """``n x p`` matrix with ``X_ij = sum_k rho_k Z_i(j+k-1)``, ``Z`` iid N(0, 1)."""
    T = len(rho)
    Z = rng.standard_normal((n, p + T - 1))
    X = rho[0] * Z[:, :p]
    for k in range(1, T):
        X += rho[k] * Z[:, k:k + p]
    return X


def gen_covariates(design: SimulationDesign, rng: np.random.Generator,
                   n: int | None = None) -> np.ndarray:
    """Covariates ``n x (p1 + p)``; the tested block is always MA(T)."""
    n = design.n if n is None else n
    if design.p1 == 0 or design.nuisance_covariates == "ma-shared":
        return moving_average(design.rho, n, design.total_p, rng)
    X2 = moving_average(design.rho, n, design.p, rng)
    if design.nuisance_covariates == "iid-normal":
        X1 = rng.standard_normal((n, design.p1))
    else:
        T1 = min(design.T, design.p1)
        X1 = moving_average(design.rho[:T1], n, design.p1, rng)
    return np.hstack([X1, X2])


def gen_response(family: GlmFamily | str, X, beta, clamp, rng: np.random.Generator) -> np.ndarray:
    """Draw responses with the linear predictor clamped to ``clamp``."""
    family = get_family(family)
    t = np.clip(np.asarray(X) @ np.asarray(beta, dtype=float), clamp[0], clamp[1])
    mean = family.g(t)
    if family.binary:
        return (rng.random(t.shape[0]) < mean).astype(float)
    if family.name == "poisson":
        return rng.poisson(mean).astype(float)
    lam = rng.gamma(shape=mean, scale=1.0)
    return rng.poisson(lam).astype(float)


def _streams(seed: int, scenario: str, rep: int):
    key = SCENARIOS[scenario]
    data_ss = np.random.SeedSequence(seed, spawn_key=(key, rep, 0))
    mc_ss = np.random.SeedSequence(seed, spawn_key=(key, rep, 1))
    return np.random.default_rng(data_ss), mc_ss


def simulate_dataset(design: SimulationDesign, scenario: str, rep: int) -> Dataset:
    """The dataset of replication ``rep`` under ``scenario`` ('null' or 'alt')."""
    rng, _ = _streams(design.seed, scenario, rep)
    X = gen_covariates(design, rng)
    Y = gen_response(design.family, X, design.beta_truth(scenario == "alt"), design.clamp, rng)
    return Dataset(Y, X, p1=design.p1)


def _default_methods(design: SimulationDesign) -> tuple[str, ...]:
    first = "proposed-nuisance" if design.nuisance else "proposed-global"
    return (first, "goeman-asymptotic", "goeman-montecarlo")


def _one_replication(design: SimulationDesign, methods: tuple[str, ...],
                     scenario: str, rep: int) -> dict[str, tuple[float, float, str]]:
    """``{method: (p_value, z, error)}`` for one replication."""
    rng, mc_ss = _streams(design.seed, scenario, rep)
    X = gen_covariates(design, rng)
    Y = gen_response(design.family, X, design.beta_truth(scenario == "alt"), design.clamp, rng)
    data = Dataset(Y, X, p1=design.p1)
    fam = design.glm_family
    out: dict[str, tuple[float, float, str]] = {}

    fit = None
    fit_error = ""
    if design.nuisance:
        try:
            fit = fit_nuisance(data, fam, np.zeros(design.p), FitOptions())
            if not fit.converged:
                fit_error = "nuisance fit did not converge"
        except HdglmError as exc:
            fit_error = f"{type(exc).__name__}: {exc}"
        G = gram(data.X2)
    else:
        G = gram(data.X)
    null_value = np.zeros(design.p)

    for method in methods:
        if fit_error:
            out[method] = (np.nan, np.nan, fit_error)
            continue
        try:
            if method == "proposed-global":
                if design.nuisance:
                    raise ValidationError("proposed-global requires a global design (p1 = 0)")
                res = proposed_global_test(data, fam, null_value, G=G)
            elif method == "proposed-nuisance":
                if not design.nuisance:
                    raise ValidationError("proposed-nuisance requires p1 > 0")
                res = proposed_nuisance_test(data, fam, null_value, fit, G2=G)
            elif method == "goeman-asymptotic":
                res = goeman_asymptotic_test(data, fam, null_value, fit, G=G)
            elif method == "goeman-montecarlo":
                res = goeman_montecarlo_test(data, fam, null_value, fit, B=design.mc_draws,
                                             seed=mc_ss, G=G)
            else:
                raise ValidationError(f"unknown method {method!r}")
            out[method] = (res.p_value, res.z, "")
        except ValidationError:
            raise
        except HdglmError as exc:
            out[method] = (np.nan, np.nan, f"{type(exc).__name__}: {exc}")
    return out


def _run_chunk(args):
    design, methods, scenario, reps = args
    return [(r, _one_replication(design, methods, scenario, r)) for r in reps]


@dataclass
class PowerProfile:
    """Empirical rejection rates per (method, alpha).

    ``pvalues[(method, scenario)]`` and ``zscores[...]`` keep the raw
    per-replication values (NaN marks a failed replication).
    """

    design: SimulationDesign
    methods: tuple[str, ...]
    pvalues: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)
    zscores: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)
    errors: dict[tuple[str, str], list[str]] = field(default_factory=dict)

    def _rate(self, method: str, scenario: str, alpha: float):
        p = self.pvalues.get((method, scenario))
        if p is None:
            return math.nan, math.nan
        ok = p[~np.isnan(p)]
        if ok.size == 0:
            return math.nan, math.nan
        r = float(np.count_nonzero(ok <= alpha)) / ok.size
        return r, math.sqrt(r * (1.0 - r) / ok.size)

    def failures(self, method: str) -> int:
        return int(sum(np.count_nonzero(np.isnan(p))
                       for (m, _), p in self.pvalues.items() if m == method))

    def rejection_counts(self, method: str, scenario: str) -> list[int]:
        p = self.pvalues[(method, scenario)]
        return [int(np.count_nonzero(p[~np.isnan(p)] <= a)) for a in self.design.alphas]

    def size(self, method: str, alpha: float) -> float:
        return self._rate(method, "null", alpha)[0]

    def power(self, method: str, alpha: float) -> float:
        return self._rate(method, "alt", alpha)[0]

    def rows(self) -> list[dict]:
        d = self.design
        out = []
        for method in self.methods:
            for a in d.alphas:
                size, size_se = self._rate(method, "null", a)
                power, power_se = self._rate(method, "alt", a)
                out.append({"method": method, "family": d.family, "n": d.n, "p": d.p,
                            "alpha": a, "size": size, "size_se": size_se,
                            "power": power, "power_se": power_se,
                            "failures": self.failures(method)})
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["method", "family", "n", "p", "alpha", "size", "size_se",
                "power", "power_se", "failures"]
        writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        for row in self.rows():
            writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v)
                             for k, v in row.items()})
        return buf.getvalue()


def run_power_study(design: SimulationDesign, methods: Iterable[str] | None = None,
                    parallelism: int = 1, scenarios: Iterable[str] = ("null", "alt"),
                    progress: Callable[[int, int], None] | None = None,
                    max_failure_rate: float = MAX_FAILURE_RATE) -> PowerProfile:
    """Empirical size (``null``) and power (``alt``) for each method.

    Raises
    ------
    SimulationFailureError
        If more than ``max_failure_rate`` of the replications of any scenario
        failed for some method.  The partial profile is attached as
        ``exc.profile``.
    """
    methods = _default_methods(design) if methods is None else tuple(methods)
    scenarios = tuple(scenarios)
    for s in scenarios:
        if s not in SCENARIOS:
            raise ValidationError(f"unknown scenario {s!r}")
    if methods and design.replications < 100:
        log.warning("only %d replications; rates will be noisy", design.replications)
    profile = PowerProfile(design, methods)
    if not methods:
        return profile

    R = design.replications
    total = R * len(scenarios)
    done = 0
    chunk = 100
    for scenario in scenarios:
        P = np.full((len(methods), R), np.nan)
        Z = np.full((len(methods), R), np.nan)
        errs: list[list[str]] = [[] for _ in methods]
        jobs = [(design, methods, scenario, range(s, min(s + chunk, R)))
                for s in range(0, R, chunk)]

        def collect(results):
            nonlocal done
            for r, res in results:
                for k, m in enumerate(methods):
                    P[k, r], Z[k, r], e = res[m]
                    if e:
                        errs[k].append(f"rep {r}: {e}")
            done += len(results)
            if progress is not None:
                progress(done, total)

        if parallelism > 1:
            with ProcessPoolExecutor(max_workers=parallelism) as pool:
                for results in pool.map(_run_chunk, jobs):
                    collect(results)
        else:
            for job in jobs:
                collect(_run_chunk(job))

        for k, m in enumerate(methods):
            profile.pvalues[(m, scenario)] = P[k]
            profile.zscores[(m, scenario)] = Z[k]
            profile.errors[(m, scenario)] = errs[k]

    worst = max((len(v) / R for v in profile.errors.values()), default=0.0)
    if worst > max_failure_rate:
        (m, s), msgs = max(profile.errors.items(), key=lambda kv: len(kv[1]))
        exc = SimulationFailureError(
            f"{len(msgs)} of {R} {s} replications failed for {m} "
            f"(budget {max_failure_rate:.0%}); first: {msgs[0]}")
        exc.profile = profile
        raise exc
    return profile


def with_replications(design: SimulationDesign, replications: int) -> SimulationDesign:
    """Copy of ``design`` with a different replication count (same rho/beta1)."""
    return replace(design, replications=replications)
