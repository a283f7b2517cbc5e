"""Command-line front end: ``lsade estimate | simulate | weights``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .core import ALGORITHMS, Dataset, make_folds
from .estimators import (
    check_estimand_algorithm,
    estimate_Psi,
    estimate_psi,
    ic_diagnostics,
    parse_algorithm,
)
from .nuisance import NuisanceConfig, estimate_nuisances
from .regression import LearnerSpec
from .simulation import SCHEMA_VERSION, SimConfig, dumps, long_csv, run_study
from .weights import FAMILIES, ExposureFamily, weight_closed_form, weight_numeric

log = logging.getLogger("lsade")

MIN_ESTIMATE_ROWS = 10


class UsageError(Exception):
    """Invalid or contradictory command-line configuration."""


class CSVFormatError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def load_csv(path, outcome: str, exposure: str, covariates: Optional[Sequence[str]] = None) -> Dataset:
    """Read a headed, comma-separated UTF-8 file into a :class:`Dataset`.

    ``covariates=None`` uses every column other than outcome and exposure.
    Columns that are present but not requested are ignored with a warning.
    Row numbers in error messages are 1-based file lines (the header is line 1).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CSVFormatError(f"{path}: file is empty (header row required)") from None
        if len(set(header)) != len(header):
            raise CSVFormatError(f"{path}: duplicate column names in header")
        if covariates is None:
            covariates = [h for h in header if h not in (outcome, exposure)]
        wanted = [outcome, exposure, *covariates]
        for name in wanted:
            if name not in header:
                raise CSVFormatError(f"{path}: column {name!r} not found (have {header})")
        if not covariates:
            raise CSVFormatError(f"{path}: no covariate columns")
        extra = [h for h in header if h not in wanted]
        if extra:
            log.warning("ignoring unused columns: %s", ", ".join(extra))
        idx = [header.index(c) for c in wanted]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise CSVFormatError(f"{path}: line {lineno} has {len(row)} fields, expected {len(header)}")
            vals = []
            for j in idx:
                cell = row[j].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise CSVFormatError(
                        f"{path}: line {lineno}, column {header[j]!r}: non-numeric value {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise CSVFormatError(
                        f"{path}: line {lineno}, column {header[j]!r}: non-finite value {cell!r}"
                    )
                vals.append(v)
            rows.append(vals)
    if len(rows) < 2:
        raise CSVFormatError(f"{path}: need at least 2 data rows, found {len(rows)}")
    arr = np.array(rows, dtype=np.float64)
    log.info("loaded %d rows from %s", len(rows), path)
    return Dataset(y=arr[:, 0], a=arr[:, 1], z=arr[:, 2:])


def _learner_specs(args, file_cfg: dict) -> dict:
    base = {"kind": {"polyridge": "PolyRidge", "kernel": "KernelSmoother"}[args.learner]}
    if args.degree is not None:
        base["degree"] = args.degree
    learners = file_cfg.get("learners", {})
    out = {}
    for which in ("pi", "mu", "aux"):
        d = dict(base)
        d.update(learners.get("default", {}))
        d.update(learners.get(which, {}))
        out[which] = LearnerSpec.from_dict(d)
    return out


def _read_config(path) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    return cfg


def _apply_file_defaults(parser: argparse.ArgumentParser, argv, cfg: dict) -> argparse.Namespace:
    """Config-file values act as defaults; explicit flags win."""
    known = {a.dest for a in parser._actions}
    defaults = {k.replace("-", "_"): v for k, v in cfg.items() if k != "learners"}
    unknown = set(defaults) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    parser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _estimands(value: str) -> tuple:
    return ("Psi", "psi") if value == "both" else (value,)


def _write(text: str, output: Optional[str]) -> None:
    if output in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    Path(output).write_text(text, encoding="utf-8")


def cmd_estimate(args, learners: dict) -> int:
    estimands = _estimands(args.estimand)
    check_estimand_algorithm(estimands, args.algorithm, args.folds)
    split, variant = parse_algorithm(args.algorithm)
    covs = args.covariates.split(",") if args.covariates else None
    if covs is None:
        with open(args.input, newline="", encoding="utf-8") as fh:
            header = [h.strip() for h in next(csv.reader(fh), [])]
        covs = [h for h in header if h not in (args.outcome, args.exposure)]
    data = load_csv(args.input, args.outcome, args.exposure, covs)
    if data.n < MIN_ESTIMATE_ROWS:
        raise UsageError(
            f"{args.input} has {data.n} rows; estimation needs at least {MIN_ESTIMATE_ROWS} "
            "to fit nuisance models and form a variance estimate"
        )
    K = args.folds if split else 1
    if K > data.n:
        raise UsageError(f"--folds {K} exceeds the number of rows ({data.n})")
    folds = make_folds(data.n, K, args.seed)
    nconf = NuisanceConfig(
        variant=variant,
        learner_pi=learners["pi"].build(),
        learner_mu=learners["mu"].build(),
        learner_aux=learners["aux"].build(),
        beta_floor=args.beta_floor,
    )
    nuis = estimate_nuisances(data, folds, nconf)
    reports = [
        (estimate_Psi if e == "Psi" else estimate_psi)(data, nuis, algorithm=args.algorithm, folds=K)
        for e in estimands
    ]
    config = {
        "command": "estimate",
        "lsade_version": __version__,
        "input": str(args.input),
        "outcome": args.outcome,
        "exposure": args.exposure,
        "covariates": covs,
        "n": data.n,
        "p": data.p,
        "estimands": list(estimands),
        "algorithm": args.algorithm,
        "folds": K,
        "seed": args.seed,
        "beta_floor": args.beta_floor,
        "learners": {k: v.to_dict() for k, v in learners.items()},
    }
    if args.format == "json":
        results = []
        for r in reports:
            d = r.to_dict()
            d["diagnostics"] = {**d["diagnostics"], "ic": ic_diagnostics(r)}
            results.append(d)
        text = dumps({"version": SCHEMA_VERSION, "config": config, "results": results}) + "\n"
    else:
        rows = [
            (r.estimand, r.algorithm, r.n, r.folds, r.point, r.variance, r.ci_lower, r.ci_upper, r.p_value)
            for r in reports
        ]
        text = _csv_text(["estimand", "algorithm", "n", "folds", "point", "variance", "ci_lower", "ci_upper", "p_value"], rows)
    _write(text, args.output)
    for r in reports:
        print(r.summary(), file=sys.stderr if args.output in (None, "-") else sys.stdout)
    return 0


def _csv_text(header, rows) -> str:
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def cmd_simulate(args, learners: dict) -> int:
    estimands = _estimands(args.estimand)
    results, rows, configs = [], [], []
    for n in args.n:
        cfg = SimConfig(
            n=n,
            reps=args.reps,
            seed=args.seed,
            algorithm=args.algorithm,
            K=args.folds,
            estimands=estimands,
            nuisance=args.nuisance,
            learner_pi=learners["pi"],
            learner_mu=learners["mu"],
            learner_aux=learners["aux"],
            beta_floor=args.beta_floor,
        )
        res = run_study(cfg, n_jobs=args.threads)
        configs.append(cfg.to_dict())
        for d in res.to_dict(include_reps=args.keep_reps)["results"]:
            results.append({"n": n, "algorithm": cfg.label, **d})
        rows.extend(res.long_rows())
        for e, s in res.summaries.items():
            msg = (
                f"{e} (Alg {cfg.label}, n={n}, reps={args.reps}): scaled bias {s.scaled_bias:.4g}, "
                f"scaled variance {s.scaled_variance:.4g}, coverage {s.coverage:.3f}"
            )
            print(msg, file=sys.stderr if args.output in (None, "-") else sys.stdout)
    if args.format == "json":
        text = dumps({"version": SCHEMA_VERSION, "config": {"command": "simulate", "lsade_version": __version__, "cells": configs}, "results": results}) + "\n"
    else:
        text = long_csv(rows)
    _write(text, args.output)
    return 0


def _parse_grid(spec: str) -> np.ndarray:
    try:
        lo, hi, count = spec.split(":")
        lo, hi, count = float(lo), float(hi), int(count)
    except ValueError:
        raise UsageError(f"--grid must look like lo:hi:count, got {spec!r}") from None
    if count < 1:
        raise UsageError("--grid count must be >= 1")
    return np.linspace(lo, hi, count)


def _family(args) -> ExposureFamily:
    f = args.family.replace("-", "_")
    need = {
        "normal": ("mean", "variance"),
        "gamma": ("shape", "rate"),
        "inverse_gamma": ("shape", "scale"),
        "beta": ("alpha", "beta"),
        "beta_prime": ("alpha", "beta"),
        "student_t": ("dof", "loc", "scale"),
    }[f]
    defaults = {"mean": 0.0, "variance": 1.0, "loc": 0.0, "scale": 1.0 if f == "student_t" else None}
    vals = []
    for name in need:
        v = getattr(args, name)
        if v is None:
            v = defaults.get(name)
        if v is None:
            raise UsageError(f"--family {args.family} needs --{name}")
        vals.append(v)
    try:
        return ExposureFamily(f, tuple(vals))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_weights(args) -> int:
    fam = _family(args)
    grid = _parse_grid(args.grid)
    fn = weight_closed_form if args.method == "closed" else weight_numeric
    rows = []
    for a in grid:
        try:
            rows.append((float(a), float(fn(fam, float(a)))))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    _write(_csv_text(["a", "w"], rows), args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lsade", description="Least-squares weighted average derivative effects")
    p.add_argument("--version", action="version", version=f"lsade {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, with_learners=True):
        sp.add_argument("--config", help="JSON file whose keys act as defaults for the flags")
        sp.add_argument("--output", "-o", default="-", help="output file ('-' = stdout)")
        sp.add_argument("--format", choices=("json", "csv"), default="json")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("-v", "--verbose", action="store_true")
        if with_learners:
            sp.add_argument("--estimand", choices=("Psi", "psi", "both"), default="both")
            sp.add_argument("--algorithm", choices=ALGORITHMS, default="2B")
            sp.add_argument("--folds", type=int, default=5, help="cross-fitting folds (default 5; 10-20 typical for real data)")
            sp.add_argument("--learner", choices=("polyridge", "kernel"), default="polyridge")
            sp.add_argument("--degree", type=int, default=None, help="PolyRidge degree")
            sp.add_argument("--beta-floor", type=float, default=None)
            sp.add_argument("--threads", type=int, default=1)

    est = sub.add_parser("estimate", help="estimate psi / Psi from a CSV file")
    est.add_argument("--input", "-i", required=True)
    est.add_argument("--outcome", default="y")
    est.add_argument("--exposure", default="a")
    est.add_argument("--covariates", default=None, help="comma-separated names (default: all other columns)")
    common(est)

    sim = sub.add_parser("simulate", help="Monte Carlo study on the built-in structural model")
    sim.add_argument("--n", type=int, nargs="+", default=[1000])
    sim.add_argument("--reps", type=int, default=100)
    sim.add_argument("--nuisance", choices=("learned", "oracle"), default="learned")
    sim.add_argument("--keep-reps", action="store_true", help="include per-replication estimates in JSON")
    common(sim)

    w = sub.add_parser("weights", help="exposure weight w(a) on a grid, as CSV")
    w.add_argument("--family", required=True, choices=FAMILIES + tuple(f.replace("_", "-") for f in FAMILIES))
    for name in ("mean", "variance", "shape", "rate", "scale", "alpha", "beta", "dof", "loc"):
        w.add_argument(f"--{name}", type=float, default=None)
    w.add_argument("--grid", required=True, help="lo:hi:count")
    w.add_argument("--method", choices=("closed", "numeric"), default="closed")
    w.add_argument("--output", "-o", default="-")
    return p


def _error(kind: str, exc: BaseException, code: int) -> int:
    payload = {"version": SCHEMA_VERSION, "error": {"type": kind, "message": str(exc)}}
    sys.stderr.write(json.dumps(payload) + "\n")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _read_config(getattr(args, "config", None))
        if cfg:
            sub = parser._subparsers._group_actions[0].choices[args.command]
            args = _apply_file_defaults(sub, argv[1:], cfg)
            args.command = argv[0]
        logging.basicConfig(
            level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
            format="%(levelname)s: %(message)s",
        )
        if args.command == "weights":
            return cmd_weights(args)
        if args.folds < 1:
            raise UsageError("--folds must be >= 1")
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        learners = _learner_specs(args, cfg)
        try:
            check_estimand_algorithm(_estimands(args.estimand), args.algorithm, args.folds)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        if args.command == "estimate":
            return cmd_estimate(args, learners)
        return cmd_simulate(args, learners)
    except UsageError as exc:
        return _error("usage", exc, 2)
    except (ValueError, OSError) as exc:
        return _error("input", exc, 1)
    except Exception as exc:  # noqa: BLE001 - reported as machine-readable JSON
        return _error(type(exc).__name__, exc, 1)


if __name__ == "__main__":
    sys.exit(main())
