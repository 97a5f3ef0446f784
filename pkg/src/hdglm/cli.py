"""Command-line interface: ``hdglm test | simulate | genesets``.

Exit codes: 0 success, 2 input or validation error, 3 degenerate statistic
(or a fit that cannot be used), 4 simulation failure budget exceeded.

Any long option may also come from a ``key = value`` file given with
``--config``; options on the command line win.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .estimation import FitOptions, fit_nuisance
from .exceptions import (DegenerateStatisticError, EstimationError, HdglmError,
                         NotConvergedError, SimulationFailureError, ValidationError)
from .families import Dataset, get_family
from .genesets import agreement_table, global_screen, load_study, screen
from .inference import (goeman_asymptotic_test, goeman_montecarlo_test, proposed_global_test,
                        proposed_nuisance_test)
from .simulation import SimulationDesign, run_power_study

log = logging.getLogger("hdglm")

EXIT_OK, EXIT_INPUT, EXIT_DEGENERATE, EXIT_SIMULATION = 0, 2, 3, 4
GENESET_FAILURE_BUDGET = 0.05

_METHOD_ALIASES = {"goeman-mc": "goeman-montecarlo", "goeman": "goeman-asymptotic",
                   "proposed": "proposed-global"}


class InputError(ValidationError):
    pass


def _method(name: str) -> str:
    return _METHOD_ALIASES.get(name, name)


def _csv_list(text: str | None) -> list[str]:
    if not text:
        return []
    return [t.strip() for t in text.split(",") if t.strip()]


# ------------------------------------------------------------------ input


def read_dataset(path, response: str | None, nuisance_cols: list[str],
                 covariates: list[str] | None = None):
    """Read a CSV with a header; returns ``(Dataset, column_names)``.

    The nuisance columns come first in the design matrix, followed by the
    remaining (tested) covariates in file order.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if len(rows) < 2:
        raise InputError(f"{path}: need a header and at least one data row")
    header = [c.strip() for c in rows[0]]
    if len(set(header)) != len(header):
        raise InputError(f"{path}: duplicate column names in header")
    response = response or header[0]
    for name in [response, *nuisance_cols, *(covariates or [])]:
        if name not in header:
            raise InputError(f"{path}: no column named {name!r}")
    if response in nuisance_cols:
        raise InputError(f"response column {response!r} listed as a nuisance column")
    tested = covariates or [c for c in header if c != response and c not in nuisance_cols]
    if not tested:
        raise InputError(f"{path}: no tested covariate columns")
    cols = [*nuisance_cols, *tested]
    idx = {c: j for j, c in enumerate(header)}
    Y, X = [], []
    for lineno, row in enumerate(rows[1:], 2):
        if len(row) != len(header):
            raise InputError(f"{path}: row {lineno} has {len(row)} fields, header has {len(header)}")
        vals = []
        for c in [response, *cols]:
            text = row[idx[c]].strip()
            try:
                v = float(text)
            except ValueError:
                raise InputError(f"{path}: row {lineno}, column {c!r}: non-numeric value {text!r}")
            if not math.isfinite(v):
                raise InputError(f"{path}: row {lineno}, column {c!r}: non-finite value {text!r}")
            vals.append(v)
        Y.append(vals[0])
        X.append(vals[1:])
    data = Dataset(np.array(Y), np.array(X), p1=len(nuisance_cols))
    return data, cols


def _beta0(text: str | None, length: int) -> np.ndarray:
    if not text:
        return np.zeros(length)
    vals = [float(v) for v in _csv_list(text)]
    if len(vals) == 1:
        return np.full(length, vals[0])
    if len(vals) != length:
        raise InputError(f"--beta0 has {len(vals)} values; expected 1 or {length}")
    return np.array(vals)


def _write(text: str, out: str | None) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


# ------------------------------------------------------------------ subcommands


def cmd_test(args) -> int:
    method = _method(args.method)
    nuisance = _csv_list(args.nuisance_cols)
    data, cols = read_dataset(args.data, args.response, nuisance, _csv_list(args.covariates) or None)
    family = get_family(args.family)
    data.check_family(family)
    if method == "proposed-nuisance" and not nuisance:
        raise InputError("method proposed-nuisance requires --nuisance-cols")
    if method == "proposed-global" and nuisance:
        raise InputError("method proposed-global tests every coefficient; drop --nuisance-cols "
                         "or use proposed-nuisance")
    diagnostics: dict = {"family": family.name, "columns": cols}
    fit = None
    if nuisance:
        beta0 = _beta0(args.beta0, data.p2)
        fit = fit_nuisance(data, family, beta0, FitOptions(max_iterations=args.max_iterations))
        diagnostics.update(p1=data.p1, p2=data.p2, converged=fit.converged,
                           iterations=fit.iterations, score_norm=fit.final_score_norm,
                           beta1_hat=[float(b) for b in fit.beta1_hat])
    else:
        beta0 = _beta0(args.beta0, data.p)

    allow = args.allow_unconverged
    if method == "proposed-global":
        res = proposed_global_test(data, family, beta0)
    elif method == "proposed-nuisance":
        res = proposed_nuisance_test(data, family, beta0, fit, allow_unconverged=allow)
    elif method == "goeman-asymptotic":
        res = goeman_asymptotic_test(data, family, beta0, fit, allow_unconverged=allow)
    elif method == "goeman-montecarlo":
        if args.seed is None:
            raise InputError("--seed is required for goeman-montecarlo")
        res = goeman_montecarlo_test(data, family, beta0, fit, B=args.B, seed=args.seed,
                                     allow_unconverged=allow)
        diagnostics["seed"] = args.seed
    else:
        raise InputError(f"unknown method {args.method!r}")
    diagnostics.update({"standardizer": res.standardizer, **res.meta})
    out = {"method": res.method, "statistic": res.statistic, "z": res.z,
           "p_value": res.p_value, "n": data.n, "p": data.p, "diagnostics": diagnostics}
    _write(_dumps(out), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    design = SimulationDesign(
        family=args.family, n=args.n, p=args.p, p1=args.p1, T=args.T,
        signal_norm2=args.signal_norm2, n_nonzero=args.n_nonzero,
        replications=args.reps, seed=args.seed, mc_draws=args.B,
        nuisance_covariates=args.nuisance_covariates)
    methods = [_method(m) for m in _csv_list(args.methods)] or None

    def progress(done, total):
        log.info("replications %d/%d", done, total)

    status = EXIT_OK
    try:
        profile = run_power_study(design, methods, parallelism=args.parallelism,
                                  progress=progress)
    except SimulationFailureError as exc:
        log.error("%s", exc)
        profile, status = exc.profile, EXIT_SIMULATION
    _write(profile.to_csv(), args.out)
    if args.design_out or args.out not in (None, "-"):
        design_path = args.design_out or str(Path(args.out).with_suffix(".design.json"))
        meta = {"design": design.to_dict(), "methods": list(profile.methods),
                "failures": {m: profile.failures(m) for m in profile.methods}}
        _write(_dumps(meta), design_path)
    return status


def _family_list(values) -> list[str]:
    names = []
    for v in values or ["logistic"]:
        names.extend(_csv_list(v))
    return list(dict.fromkeys(get_family(n).name for n in names))


def _run_csv(run) -> str:
    buf = io.StringIO()
    cols = ["set_id", "size", "statistic", "z", "p", "p_adjusted", "rejected"]
    w = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for row in run.rows():
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def cmd_genesets(args) -> int:
    study, genesets, report = load_study(args.expression, args.phenotype, args.gmt)
    families = _family_list(args.family)
    runs = {}
    for fam in families:
        if args.mode == "nuisance":
            runs[fam] = screen(study, genesets, fam, q=args.q, parallelism=args.parallelism,
                               intercept=not args.no_intercept,
                               standardize=not args.no_standardize,
                               allow_unconverged=args.allow_unconverged, report=report)
        else:
            runs[fam] = global_screen(study, genesets, q=args.q, family=fam,
                                      parallelism=args.parallelism,
                                      standardize=not args.no_standardize, report=report)
    out = Path(args.out)
    written = []
    for fam, run in runs.items():
        path = out if len(runs) == 1 else out.with_name(f"{out.stem}.{fam}{out.suffix}")
        _write(_run_csv(run), str(path))
        written.append(str(path))
    summary = {"mode": args.mode, "q": args.q, "n_samples": study.n,
               "n_sets": len(genesets), "outputs": written,
               "runs": {f: r.summary() for f, r in runs.items()}}
    if len(runs) == 2:
        a, b = runs.values()
        summary["agreement"] = agreement_table(a, b)
    summary_path = args.summary or str(out.with_suffix(".summary.json"))
    _write(_dumps(summary), summary_path)

    worst = max(len(r.failed()) / max(len(genesets), 1) for r in runs.values())
    if worst >= GENESET_FAILURE_BUDGET:
        log.error("%.1f%% of gene sets failed (budget %.0f%%)", 100 * worst,
                  100 * GENESET_FAILURE_BUDGET)
        return EXIT_DEGENERATE
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hdglm", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="key = value file supplying option defaults")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="test one dataset")
    t.add_argument("data", help="CSV with a header row")
    t.add_argument("--family", default="logistic")
    t.add_argument("--method", default="proposed-global",
                   help="proposed-global, proposed-nuisance, goeman-asymptotic, goeman-mc")
    t.add_argument("--response", help="response column (default: first column)")
    t.add_argument("--nuisance-cols", help="comma-separated nuisance columns")
    t.add_argument("--covariates", help="comma-separated tested columns (default: the rest)")
    t.add_argument("--beta0", help="null value of the tested coefficients: one value or a list")
    t.add_argument("--B", type=int, default=1000, help="Monte-Carlo draws for goeman-mc")
    t.add_argument("--seed", type=int)
    t.add_argument("--max-iterations", type=int, default=100)
    t.add_argument("--allow-unconverged", action="store_true")
    t.add_argument("--out", help="JSON output path (default: stdout)")
    t.set_defaults(func=cmd_test)

    s = sub.add_parser("simulate", help="size/power study")
    s.add_argument("--family", default="logistic")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--p", type=int, required=True)
    s.add_argument("--p1", type=int, default=0)
    s.add_argument("--T", type=int, default=5)
    s.add_argument("--reps", type=int, default=1000)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--methods", help="comma-separated methods (default depends on p1)")
    s.add_argument("--signal-norm2", type=float, default=2.0)
    s.add_argument("--n-nonzero", type=int, default=5)
    s.add_argument("--B", type=int, default=1000, help="draws for goeman-montecarlo")
    s.add_argument("--nuisance-covariates", default="iid-normal",
                   choices=["iid-normal", "ma-independent", "ma-shared"])
    s.add_argument("--parallelism", type=int, default=1)
    s.add_argument("--out", help="CSV output path (default: stdout)")
    s.add_argument("--design-out", help="design JSON path (default: <out>.design.json)")
    s.set_defaults(func=cmd_simulate)

    g = sub.add_parser("genesets", help="gene-set screening with BH control")
    g.add_argument("--expression", required=True)
    g.add_argument("--phenotype", required=True)
    g.add_argument("--gmt", required=True)
    g.add_argument("--mode", choices=["nuisance", "global"], default="nuisance")
    g.add_argument("--family", action="append",
                   help="logistic and/or probit; repeat or comma-separate for both")
    g.add_argument("--q", type=float, default=0.01)
    g.add_argument("--parallelism", type=int, default=1)
    g.add_argument("--no-intercept", action="store_true")
    g.add_argument("--no-standardize", action="store_true")
    g.add_argument("--allow-unconverged", action="store_true")
    g.add_argument("--out", required=True, help="CSV path; one file per family")
    g.add_argument("--summary", help="JSON summary path (default: <out>.summary.json)")
    g.set_defaults(func=cmd_genesets)
    return ap


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _read_config(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"config file not found: {path}")
    text = path.read_text()
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text if text.lstrip().startswith("[") else "[hdglm]\n" + text)
    except configparser.Error as exc:
        raise InputError(f"{path}: {exc}")
    out = {}
    for section in cp.sections():
        for k, v in cp.items(section):
            out[k.replace("-", "_")] = v.strip().strip('"')
    return out


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = _read_config(known.config)
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for sp in sub.choices.values():
        for action in sp._actions:
            if action.dest not in values:
                continue
            v = values[action.dest]
            if isinstance(action, argparse._StoreTrueAction):
                if v.lower() not in _TRUE | _FALSE:
                    raise InputError(f"config key {action.dest!r}: expected a boolean, got {v!r}")
                v = v.lower() in _TRUE
            elif isinstance(action, argparse._AppendAction):
                v = [v]
            elif action.type is not None:
                try:
                    v = action.type(v)
                except ValueError:
                    raise InputError(f"config key {action.dest!r}: bad value {v!r}")
            action.default = v
            action.required = False


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    logging.basicConfig(level=logging.INFO if "-v" in argv or "--verbose" in argv
                        else logging.WARNING, format="hdglm: %(message)s", stream=sys.stderr)
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        if getattr(args, "command", None) == "simulate":
            logging.getLogger().setLevel(logging.INFO)
        return args.func(args)
    except SystemExit as exc:  # argparse usage errors
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    except (DegenerateStatisticError, NotConvergedError, EstimationError) as exc:
        print(f"hdglm: error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except SimulationFailureError as exc:
        print(f"hdglm: error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except (HdglmError, ValueError, OSError) as exc:
        print(f"hdglm: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
