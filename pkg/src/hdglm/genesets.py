"""Gene-set screening with the nuisance-parameter and global tests.

Inputs
------
* expression matrix: CSV/TSV, first column sample ID, header row of gene IDs;
* phenotype table: CSV/TSV with sample ID, a 0/1 response, then numeric covariates;
* gene sets: GMT, one set per line ``set_id <TAB> description <TAB> gene ...``.

For each set the tested block is the set's expression columns and the nuisance
block the phenotype covariates (plus an intercept).  The nuisance fit depends
only on ``Y`` and the covariates, so it is computed once per family and shared
by all sets.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .estimation import FitOptions, FitResult, fit_nuisance
from .exceptions import HdglmError, NotConvergedError, ValidationError
from .families import Dataset, get_family, residuals_and_weights
from .fdr import benjamini_hochberg
from .inference import TestResult, gram, nuisance_test_from_weights, proposed_global_test

log = logging.getLogger(__name__)

__all__ = [
    "ExpressionStudy",
    "GeneSet",
    "SetResult",
    "GeneSetRun",
    "IngestionReport",
    "read_expression",
    "read_phenotype",
    "read_gmt",
    "load_study",
    "screen",
    "global_screen",
    "agreement_table",
    "synthetic_study",
    "write_study",
]

BINARY_FAMILIES = ("logistic", "probit")


@dataclass
class IngestionReport:
    dropped_samples: list[str] = field(default_factory=list)
    dropped_genes: dict[str, list[str]] = field(default_factory=dict)
    skipped_sets: list[str] = field(default_factory=list)
    unmatched_samples: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"dropped_samples": self.dropped_samples,
                "dropped_genes": self.dropped_genes,
                "skipped_sets": self.skipped_sets,
                "unmatched_samples": self.unmatched_samples}


@dataclass(frozen=True)
class ExpressionStudy:
    """Sample-aligned phenotype, covariates and expression."""

    samples: tuple[str, ...]
    response: np.ndarray
    covariate_names: tuple[str, ...]
    covariates: np.ndarray
    genes: tuple[str, ...]
    expression: np.ndarray

    def __post_init__(self):
        n = len(self.samples)
        resp = np.asarray(self.response, dtype=float)
        cov = np.asarray(self.covariates, dtype=float).reshape(n, -1)
        expr = np.asarray(self.expression, dtype=float)
        if resp.shape != (n,) or expr.shape != (n, len(self.genes)):
            raise ValidationError("response/expression shapes do not match the sample list")
        if cov.shape[1] != len(self.covariate_names):
            raise ValidationError("covariate names do not match covariate columns")
        bad = (resp != 0) & (resp != 1)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ValidationError(f"sample {self.samples[i]!r}: response {resp[i]:g} is not 0/1")
        object.__setattr__(self, "response", resp)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "expression", expr)

    @property
    def n(self) -> int:
        return len(self.samples)

    def gene_index(self) -> dict[str, int]:
        return {g: j for j, g in enumerate(self.genes)}

    def nuisance_matrix(self, intercept: bool = True) -> np.ndarray:
        if intercept:
            return np.hstack([np.ones((self.n, 1)), self.covariates])
        return self.covariates

    def standardized_expression(self) -> np.ndarray:
        """Per-gene centering and scaling; constant genes are only centred."""
        E = self.expression - self.expression.mean(axis=0)
        sd = E.std(axis=0, ddof=1)
        sd[sd == 0] = 1.0
        return E / sd


@dataclass(frozen=True)
class GeneSet:
    set_id: str
    name: str
    genes: tuple[str, ...]


@dataclass(frozen=True)
class SetResult:
    set_id: str
    size: int
    result: TestResult | None
    p_adjusted: float = math.nan
    rejected: bool = False
    error: str = ""


@dataclass
class GeneSetRun:
    """Per-set results of one screening pass."""

    mode: str
    family: str
    q: float
    results: dict[str, SetResult]
    report: IngestionReport = field(default_factory=IngestionReport)

    def ok(self) -> list[SetResult]:
        return [r for r in self.results.values() if r.result is not None]

    def failed(self) -> list[SetResult]:
        return [r for r in self.results.values() if r.result is None]

    def rejected_ids(self) -> set[str]:
        return {r.set_id for r in self.results.values() if r.rejected}

    def p_values(self) -> dict[str, float]:
        return {k: r.result.p_value for k, r in self.results.items() if r.result is not None}

    def z_values(self) -> dict[str, float]:
        return {k: r.result.z for k, r in self.results.items() if r.result is not None}

    def rows(self) -> list[dict]:
        out = []
        for sid in sorted(self.results):
            r = self.results[sid]
            res = r.result
            out.append({
                "set_id": sid, "size": r.size,
                "statistic": res.statistic if res else math.nan,
                "z": res.z if res else math.nan,
                "p": res.p_value if res else math.nan,
                "p_adjusted": r.p_adjusted, "rejected": int(r.rejected),
                "error": r.error,
            })
        return out

    def histograms(self, bins: int = 10) -> dict:
        """Histogram counts of p-values (on [0, 1]) and z-scores."""
        p = np.array(list(self.p_values().values()))
        z = np.array(list(self.z_values().values()))
        ph, pe = np.histogram(p, bins=bins, range=(0.0, 1.0))
        out = {"p_value": {"edges": pe.tolist(), "counts": ph.tolist()}}
        if z.size:
            zh, ze = np.histogram(z, bins=bins)
            out["z"] = {"edges": ze.tolist(), "counts": zh.tolist()}
        return out

    def summary(self) -> dict:
        return {"mode": self.mode, "family": self.family, "q": self.q,
                "tested": len(self.ok()), "failed": len(self.failed()),
                "rejected": len(self.rejected_ids()),
                "failures": {r.set_id: r.error for r in self.failed()},
                "histograms": self.histograms(),
                "ingestion": self.report.to_dict()}


# ------------------------------------------------------------------ ingestion


def _sniff_delimiter(path: Path) -> str:
    if path.suffix.lower() in (".tsv", ".tab", ".txt"):
        return "\t"
    with open(path, newline="") as fh:
        head = fh.readline()
    return "\t" if head.count("\t") > head.count(",") else ","


def _read_table(path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"file not found: {path}")
    delim = _sniff_delimiter(path)
    with open(path, newline="") as fh:
        rows = [(i + 1, row) for i, row in enumerate(csv.reader(fh, delimiter=delim))
                if row and any(c.strip() for c in row)]
    if not rows:
        raise ValidationError(f"{path}: empty file")
    header = [c.strip() for c in rows[0][1]]
    return header, rows[1:]


def _parse_float(text: str) -> float:
    text = text.strip()
    if text == "" or text.upper() in ("NA", "NAN", "NULL", "."):
        return math.nan
    return float(text)


def read_expression(path):
    """Returns ``(sample_ids, gene_ids, matrix)``; missing values become NaN."""
    header, rows = _read_table(path)
    genes = header[1:]
    if not genes:
        raise ValidationError(f"{path}: header has no gene columns")
    samples, values = [], []
    for lineno, row in rows:
        if len(row) != len(header):
            raise ValidationError(
                f"{path}:{lineno}: expected {len(header)} fields, found {len(row)}")
        try:
            values.append([_parse_float(c) for c in row[1:]])
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: non-numeric expression value ({exc})")
        samples.append(row[0].strip())
    return samples, genes, np.array(values, dtype=float).reshape(len(samples), len(genes))


def read_phenotype(path):
    """Returns ``(sample_ids, response, covariate_names, covariates)``."""
    header, rows = _read_table(path)
    if len(header) < 2:
        raise ValidationError(f"{path}: need a sample ID column and a response column")
    names = header[2:]
    samples, resp, cov = [], [], []
    for lineno, row in rows:
        if len(row) != len(header):
            raise ValidationError(
                f"{path}:{lineno}: expected {len(header)} fields, found {len(row)}")
        sid = row[0].strip()
        try:
            y = _parse_float(row[1])
            x = [_parse_float(c) for c in row[2:]]
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: sample {sid!r}: non-numeric value ({exc})")
        if not math.isnan(y) and y not in (0.0, 1.0):
            raise ValidationError(
                f"{path}:{lineno}: sample {sid!r} has response {row[1].strip()!r}; "
                "expected 0 or 1")
        samples.append(sid)
        resp.append(y)
        cov.append(x)
    return samples, np.array(resp), names, np.array(cov, dtype=float).reshape(len(samples), len(names))


def read_gmt(path) -> list[GeneSet]:
    """Parse a GMT file; lines need at least set ID, description and one gene."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"file not found: {path}")
    sets, seen = [], set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) < 3:
                raise ValidationError(
                    f"{path}:{lineno}: GMT line has {len(fields)} tab-separated field(s); "
                    "need set ID, description and at least one gene")
            sid = fields[0].strip()
            if not sid:
                raise ValidationError(f"{path}:{lineno}: empty set ID")
            if sid in seen:
                raise ValidationError(f"{path}:{lineno}: duplicate set ID {sid!r}")
            seen.add(sid)
            genes = tuple(dict.fromkeys(g.strip() for g in fields[2:] if g.strip()))
            sets.append(GeneSet(sid, fields[1].strip(), genes))
    return sets


def load_study(expression_path, phenotype_path, geneset_path):
    """Read, validate and align the three inputs.

    Samples are matched by ID; samples missing from either table, or with any
    missing value, are dropped and logged.  Genes absent from the expression
    matrix are dropped from their sets; sets left empty are skipped.

    Returns
    -------
    study : ExpressionStudy
    genesets : list of GeneSet
    report : IngestionReport
    """
    report = IngestionReport()
    e_samples, genes, expr = read_expression(expression_path)
    p_samples, resp, names, cov = read_phenotype(phenotype_path)
    for label, ids in (("expression", e_samples), ("phenotype", p_samples)):
        dup = {s for s in ids if ids.count(s) > 1}
        if dup:
            raise ValidationError(f"duplicate sample IDs in {label} file: {sorted(dup)}")
    if len(set(genes)) != len(genes):
        raise ValidationError("duplicate gene IDs in expression header")

    e_index = {s: i for i, s in enumerate(e_samples)}
    common = [s for s in p_samples if s in e_index]
    report.unmatched_samples = sorted(set(p_samples) ^ set(e_samples))
    if report.unmatched_samples:
        log.warning("%d sample(s) present in only one file: %s",
                    len(report.unmatched_samples), report.unmatched_samples[:5])
    if not common:
        raise ValidationError("no sample IDs shared between expression and phenotype files")

    p_index = {s: i for i, s in enumerate(p_samples)}
    rows_p = [p_index[s] for s in common]
    rows_e = [e_index[s] for s in common]
    R, C, E = resp[rows_p], cov[rows_p], expr[rows_e]
    keep = ~(np.isnan(R) | np.isnan(C).any(axis=1) | np.isnan(E).any(axis=1))
    report.dropped_samples = [s for s, k in zip(common, keep) if not k]
    if report.dropped_samples:
        log.warning("dropped %d sample(s) with missing values: %s",
                    len(report.dropped_samples), report.dropped_samples[:5])
    samples = tuple(s for s, k in zip(common, keep) if k)
    if len(samples) < 3:
        raise ValidationError(f"only {len(samples)} complete sample(s) after alignment")
    study = ExpressionStudy(samples, R[keep], tuple(names), C[keep], tuple(genes), E[keep])

    gidx = study.gene_index()
    genesets = []
    for gs in read_gmt(geneset_path):
        missing = [g for g in gs.genes if g not in gidx]
        present = tuple(g for g in gs.genes if g in gidx)
        if missing:
            report.dropped_genes[gs.set_id] = missing
            log.warning("set %s: dropped %d unknown gene(s): %s", gs.set_id, len(missing),
                        missing[:5])
        if not present:
            report.skipped_sets.append(gs.set_id)
            log.warning("set %s: no genes left; skipped", gs.set_id)
            continue
        genesets.append(GeneSet(gs.set_id, gs.name, present))
    return study, genesets, report


# ------------------------------------------------------------------ screening


def _set_columns(study: ExpressionStudy, gs: GeneSet, index: dict[str, int]) -> list[int]:
    return [index[g] for g in gs.genes if g in index]


def _finalize(mode, family, q, raw: dict[str, SetResult], report) -> GeneSetRun:
    ok = sorted(sid for sid, r in raw.items() if r.result is not None)
    results = dict(raw)
    if ok:
        rejected, adjusted = benjamini_hochberg([raw[s].result.p_value for s in ok], q)
        for s, rej, adj in zip(ok, rejected, adjusted):
            r = raw[s]
            results[s] = SetResult(s, r.size, r.result, float(adj), bool(rej))
    return GeneSetRun(mode, family, q, results, report)


def _map_sets(fn, genesets, parallelism: int) -> dict[str, SetResult]:
    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            return dict(zip((g.set_id for g in genesets), pool.map(fn, genesets)))
    return {g.set_id: fn(g) for g in genesets}


def fit_study_nuisance(study: ExpressionStudy, family, *, intercept: bool = True,
                       fit_opts: FitOptions | None = None) -> FitResult:
    """Nuisance fit on covariates alone (tested block fixed at zero)."""
    X1 = study.nuisance_matrix(intercept)
    if X1.shape[1] == 0:
        return FitResult(np.empty(0), 0, 0.0, True)
    if X1.shape[1] >= study.n:
        raise ValidationError(f"p1={X1.shape[1]} nuisance columns need n > p1 (n={study.n})")
    # a one-column dummy tested block with zero coefficient leaves the fit unchanged
    data = Dataset(study.response, np.hstack([X1, np.zeros((study.n, 1))]), p1=X1.shape[1])
    return fit_nuisance(data, family, np.zeros(1), fit_opts)


def screen(study: ExpressionStudy, genesets: list[GeneSet], family="logistic",
           q: float = 0.01, fit_opts: FitOptions | None = None, parallelism: int = 1, *,
           intercept: bool = True, standardize: bool = True,
           allow_unconverged: bool = False,
           report: IngestionReport | None = None) -> GeneSetRun:
    """Nuisance-parameter test of ``beta_g = 0`` for every gene set, then BH at ``q``."""
    fam = get_family(family)
    if fam.name not in BINARY_FAMILIES:
        raise ValidationError(f"gene-set screening needs a binary family, got {fam.name}")
    fit = fit_study_nuisance(study, fam, intercept=intercept, fit_opts=fit_opts)
    if not fit.converged and not allow_unconverged:
        raise NotConvergedError(
            f"{fam.name} nuisance fit did not converge (score {fit.final_score_norm:.3g})")
    X1 = study.nuisance_matrix(intercept)
    base = Dataset(study.response, np.hstack([X1, np.zeros((study.n, 1))]), p1=X1.shape[1])
    eps0, psi0, _ = residuals_and_weights(base, fam, np.append(fit.beta1_hat, 0.0))
    E = study.standardized_expression() if standardize else study.expression
    index = study.gene_index()

    def one(gs: GeneSet) -> SetResult:
        cols = _set_columns(study, gs, index)
        if not cols:
            return SetResult(gs.set_id, 0, None, error="empty gene set")
        try:
            res = nuisance_test_from_weights(eps0, psi0, gram(E[:, cols]))
        except HdglmError as exc:
            return SetResult(gs.set_id, len(cols), None, error=f"{type(exc).__name__}: {exc}")
        return SetResult(gs.set_id, len(cols), res)

    raw = _map_sets(one, genesets, parallelism)
    return _finalize("nuisance", fam.name, q, raw, report or IngestionReport())


def global_screen(study: ExpressionStudy, genesets: list[GeneSet], q: float = 0.01,
                  family="logistic", parallelism: int = 1, *, standardize: bool = True,
                  report: IngestionReport | None = None) -> GeneSetRun:
    """Proposed global test of ``beta_g = 0`` on ``[covariates, set genes]`` (no intercept).

    Under ``beta = 0`` both binary families have mean 1/2 and constant ``psi``,
    so the standardised statistic is identical for logistic and probit.
    """
    fam = get_family(family)
    if fam.name not in BINARY_FAMILIES:
        raise ValidationError(f"gene-set screening needs a binary family, got {fam.name}")
    E = study.standardized_expression() if standardize else study.expression
    index = study.gene_index()
    X1 = study.covariates

    def one(gs: GeneSet) -> SetResult:
        cols = _set_columns(study, gs, index)
        if not cols:
            return SetResult(gs.set_id, 0, None, error="empty gene set")
        X = np.hstack([X1, E[:, cols]])
        try:
            res = proposed_global_test(Dataset(study.response, X), fam, np.zeros(X.shape[1]))
        except HdglmError as exc:
            return SetResult(gs.set_id, len(cols), None, error=f"{type(exc).__name__}: {exc}")
        return SetResult(gs.set_id, len(cols), res)

    raw = _map_sets(one, genesets, parallelism)
    return _finalize("global", fam.name, q, raw, report or IngestionReport())


def agreement_table(run_a: GeneSetRun, run_b: GeneSetRun) -> dict:
    """2 x 2 rejection/non-rejection cross-classification over sets tested in both runs."""
    common = sorted(set(s for s, r in run_a.results.items() if r.result is not None)
                    & set(s for s, r in run_b.results.items() if r.result is not None))
    a = run_a.rejected_ids()
    b = run_b.rejected_ids()
    table = [[0, 0], [0, 0]]  # rows: run_a reject/accept, cols: run_b reject/accept
    for s in common:
        table[0 if s in a else 1][0 if s in b else 1] += 1
    return {"rows": run_a.family, "cols": run_b.family, "order": ["rejected", "not rejected"],
            "table": table, "n_sets": len(common)}


# ------------------------------------------------------------------ synthetic data


def synthetic_study(seed: int, *, n: int = 150, n_sets: int = 100, set_size: int = 40,
                    n_signal: int = 10, signal_genes: int = 10, loading: float = 0.35,
                    latent_effect: float = 1.5, n_covariates: int = 3,
                    covariate_effect: float = 0.5, family: str = "logistic"):
    """Disjoint gene sets with planted signal in the first ``n_signal`` sets.

    The response depends on the covariates and on a latent activity ``z``;
    ``signal_genes`` members of each signal set load on ``z`` with correlation
    ``loading``.  All other genes are independent of ``(Y, covariates)``, so
    the remaining sets are exact nulls.

    Returns ``(study, genesets, signal_ids)``.
    """
    fam = get_family(family)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(11,)))
    G = n_sets * set_size
    expr = rng.standard_normal((n, G))
    cov = rng.standard_normal((n, n_covariates))
    z = rng.standard_normal(n)
    genesets, signal_ids = [], []
    for k in range(n_sets):
        members = tuple(f"G{k * set_size + j:05d}" for j in range(set_size))
        sid = f"SET{k:03d}"
        genesets.append(GeneSet(sid, f"synthetic set {k}", members))
        if k < n_signal:
            signal_ids.append(sid)
            cols = slice(k * set_size, k * set_size + signal_genes)
            expr[:, cols] = (loading * z[:, None]
                             + np.sqrt(1.0 - loading ** 2) * expr[:, cols])
    eta = 0.2 + cov @ np.full(n_covariates, covariate_effect) + latent_effect * z
    y = (rng.random(n) < fam.g(eta)).astype(float)
    study = ExpressionStudy(
        samples=tuple(f"S{i:04d}" for i in range(n)), response=y,
        covariate_names=tuple(f"cov{j}" for j in range(n_covariates)), covariates=cov,
        genes=tuple(f"G{j:05d}" for j in range(G)), expression=expr)
    return study, genesets, signal_ids


def write_study(study: ExpressionStudy, genesets: list[GeneSet], directory) -> tuple[Path, Path, Path]:
    """Write ``expression.csv``, ``phenotype.csv`` and ``sets.gmt`` under ``directory``.

    Values are written with ``repr`` so a round trip through :func:`load_study`
    is exact.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    expr_path, pheno_path, gmt_path = d / "expression.csv", d / "phenotype.csv", d / "sets.gmt"
    with open(expr_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", *study.genes])
        for s, row in zip(study.samples, study.expression):
            w.writerow([s, *map(repr, row.tolist())])
    with open(pheno_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "response", *study.covariate_names])
        for s, y, row in zip(study.samples, study.response, study.covariates):
            w.writerow([s, int(y), *map(repr, row.tolist())])
    with open(gmt_path, "w") as fh:
        for gs in genesets:
            fh.write("\t".join([gs.set_id, gs.name, *gs.genes]) + "\n")
    return expr_path, pheno_path, gmt_path
