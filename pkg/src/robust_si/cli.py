"""Command-line front end: CSV ingestion, per-instance analysis and the simulation harnesses.

Exit codes: 0 success, 2 nothing detected, 3 bad input, 4 numerical failure.
Failures print ``<ErrorClass>: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InputError, MissingColumn, NoOutliersDetected, ParseError, RobustSIError
from .experiments import SimConfig, hl_config, run_fpr, run_hl_compare, run_tpr, tpr_config
from .inference import SelectiveReport, analyze
from .model import LAD, Dataset, DetectionRule, EstimatorSpec, Huber, Threshold, TopK

REPORT_COLUMNS = ("index", "z_obs", "naive_p", "bonferroni_p", "selective_p", "ci_lo", "ci_hi",
                  "truncation", "mass_outside_window_bound")


@dataclass(frozen=True)
class AnalysisConfig:
    estimator: EstimatorSpec
    rule: DetectionRule
    alpha: float = 0.05
    window_mult: float = 20.0
    sigma2: float = 1.0
    sigma_file: str | None = None
    seed: int = 0


def _num(x: float) -> str:
    """17 significant digits; enough to round-trip any finite double."""
    return format(float(x), ".17g")


def _json_num(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return _num(x)


def _parse_cell(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"row {row}, column {column!r}: cannot parse {text!r} as a number") from None
    if not math.isfinite(value):
        raise ParseError(f"row {row}, column {column!r}: value {text!r} is not finite")
    return value


def read_sigma(path: str | Path, n: int) -> np.ndarray:
    """``n x n`` covariance from a headerless CSV file."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for r, line in enumerate(csv.reader(fh), start=1):
            if not line:
                continue
            rows.append([_parse_cell(c.strip(), r, str(k)) for k, c in enumerate(line)])
    Sigma = np.array(rows, dtype=float)
    if Sigma.shape != (n, n):
        raise InputError(f"covariance file has shape {Sigma.shape}, expected {(n, n)}")
    return Sigma


def ingest_csv(path: str | Path, response_column: str, feature_columns: Sequence[str] | None = None,
               add_intercept: bool = True, sigma2: float = 1.0, sigma_file: str | Path | None = None) -> Dataset:
    """Read a headed CSV file into a :class:`Dataset`.

    Rows are numbered as file lines, so the first data row is row 2.
    ``feature_columns`` defaults to every column other than the response.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path} is empty") from None
        features = [h for h in header if h != response_column] if feature_columns is None else list(feature_columns)
        for name in [response_column, *features]:
            if name not in header:
                raise MissingColumn(f"column {name!r} not found in header {header}")
        cols = [header.index(c) for c in features]
        ycol = header.index(response_column)
        X_rows, y = [], []
        for r, line in enumerate(reader, start=2):
            if not line or all(not c.strip() for c in line):
                continue
            if len(line) != len(header):
                raise ParseError(f"row {r}: expected {len(header)} fields, got {len(line)}")
            X_rows.append([_parse_cell(line[c].strip(), r, header[c]) for c in cols])
            y.append(_parse_cell(line[ycol].strip(), r, response_column))
    X = np.array(X_rows, dtype=float).reshape(len(y), len(cols))
    if add_intercept:
        X = np.column_stack([np.ones(len(y)), X])
    if X.shape[1] == 0:
        raise InputError("no feature columns and no intercept")
    if sigma_file is not None:
        return Dataset(X, np.array(y), read_sigma(sigma_file, len(y)))
    if not sigma2 > 0:
        raise InputError(f"sigma2 must be positive, got {sigma2}")
    return Dataset.with_noise_variance(X, np.array(y), sigma2)


def emit_dataset(X: np.ndarray, y: np.ndarray, feature_names: Sequence[str] | None = None,
                 response_column: str = "y") -> bytes:
    """CSV of ``X`` and ``y`` at 17 significant digits; the inverse of :func:`ingest_csv`."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(X.shape[1])]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*names, response_column])
    for row, yi in zip(X, np.asarray(y, dtype=float)):
        w.writerow([_num(v) for v in row] + [_num(yi)])
    return buf.getvalue().encode()


def cmd_analyze(config: AnalysisConfig, dataset: Dataset) -> list[SelectiveReport]:
    """One report per detected instance, ordered by index."""
    reports = analyze(dataset, config.estimator, config.rule, config.alpha, config.window_mult)
    if not reports:
        hint = "lower --xi" if isinstance(config.rule, Threshold) else "raise --k"
        raise NoOutliersDetected(f"the rule flagged no instance; {hint}")
    return reports


def _truncation_text(report: SelectiveReport) -> str:
    return ";".join(f"{_num(lo)}:{_num(hi)}" for lo, hi in report.truncation)


def _report_values(rep: SelectiveReport) -> list:
    return [rep.target_index, rep.z_obs, rep.naive_p, rep.bonferroni_p, rep.selective_p,
            rep.ci[0], rep.ci[1], rep.truncation, rep.mass_outside_window_bound]


def emit_report(reports: Sequence[SelectiveReport], fmt: str = "json") -> bytes:
    """Serialize reports as JSON (array of objects) or CSV with a fixed column order."""
    if fmt == "json":
        objs = []
        for rep in reports:
            fields = []
            for name, value in zip(REPORT_COLUMNS, _report_values(rep)):
                if name == "index":
                    text = str(int(value))
                elif name == "truncation":
                    text = "[" + ", ".join(f"[{_json_num(lo)}, {_json_num(hi)}]" for lo, hi in value) + "]"
                else:
                    text = _json_num(value)
                fields.append(f"{json.dumps(name)}: {text}")
            objs.append("{" + ", ".join(fields) + "}")
        return ("[" + ",\n ".join(objs) + "]\n").encode()
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for rep in reports:
            vals = _report_values(rep)
            w.writerow([str(vals[0]), *(_num(v) for v in vals[1:7]), _truncation_text(rep), _num(vals[8])])
        return buf.getvalue().encode()
    raise InputError(f"unknown format {fmt!r}")


def _rates_bytes(rates: dict, fmt: str) -> bytes:
    if fmt == "json":
        body = ", ".join(f"{json.dumps(k)}: {_json_num(v) if isinstance(v, float) else json.dumps(v)}"
                         for k, v in rates.items())
        return ("{" + body + "}\n").encode()
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(rates.keys())
        w.writerow([_num(v) if isinstance(v, float) else v for v in rates.values()])
        return buf.getvalue().encode()
    raise InputError(f"unknown format {fmt!r}")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which is reserved for "nothing detected"
    def error(self, message):
        raise InputError(message)


def _estimator(args) -> EstimatorSpec:
    if args.estimator == "lad":
        return LAD()
    if args.delta is None:
        raise InputError("--delta is required for the Huber estimator")
    return Huber(args.delta)


def _rule(args) -> DetectionRule:
    if args.rule == "threshold":
        return Threshold(args.xi)
    if args.k is None:
        raise InputError("--k is required for the top-K rule")
    return TopK(args.k)


def _common(p: argparse.ArgumentParser):
    p.add_argument("--estimator", choices=("lad", "huber"), default="lad")
    p.add_argument("--delta", type=float, default=None, help="Huber tuning parameter")
    p.add_argument("--rule", choices=("threshold", "topk"), default="threshold")
    p.add_argument("--xi", type=float, default=1.0, help="threshold on |residual|")
    p.add_argument("--k", type=int, default=None, help="number of flagged instances for top-K")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--window-mult", type=float, default=20.0)
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("json", "csv"), default="json")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="robust-si", description="Selective inference for outliers flagged by robust regression.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", help="p-values for every flagged instance of a CSV dataset")
    a.add_argument("csv_path")
    a.add_argument("--response", required=True)
    a.add_argument("--features", nargs="*", default=None)
    a.add_argument("--no-intercept", action="store_true")
    a.add_argument("--sigma-file", default=None, help="headerless CSV with the n x n noise covariance")
    _common(a)

    for name, help_text in (("simulate-fpr", "null rejection rates"), ("simulate-tpr", "power for a shifted first instance")):
        s = sub.add_parser(name, help=help_text)
        _common(s)
        s.add_argument("--n", type=int, default=20)
        s.add_argument("--p", type=int, default=5)
        s.add_argument("--trials", type=int, default=1000)
        if name == "simulate-tpr":
            s.add_argument("--u1", type=float, default=5.0, help="shift of the first instance")

    c = sub.add_parser("compare-hl", help="path-based versus sign-conditioned power")
    c.add_argument("--n", type=int, default=50)
    c.add_argument("--p", type=int, default=5)
    c.add_argument("--lam", type=float, default=3.0, help="shared delta = xi = lambda")
    c.add_argument("--n-shifted", type=int, default=10)
    c.add_argument("--shift", type=float, default=2.0)
    c.add_argument("--trials", type=int, default=300)
    c.add_argument("--alpha", type=float, default=0.05)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--format", choices=("json", "csv"), default="json")
    return parser


def _dispatch(args) -> bytes:
    if args.command == "analyze":
        config = AnalysisConfig(_estimator(args), _rule(args), args.alpha, args.window_mult, args.sigma2,
                                args.sigma_file, args.seed)
        ds = ingest_csv(args.csv_path, args.response, args.features, not args.no_intercept,
                        args.sigma2, args.sigma_file)
        return emit_report(cmd_analyze(config, ds), args.format)
    if args.command == "simulate-fpr":
        cfg = SimConfig(n=args.n, p=args.p, sigma2=args.sigma2, estimator=_estimator(args), rule=_rule(args),
                        alpha=args.alpha, trials=args.trials, seed=args.seed, window_mult=args.window_mult)
        r = run_fpr(cfg)
        rates = {"fpr_naive": r.fpr_naive, "fpr_bonf": r.fpr_bonf, "fpr_plh": r.fpr_plh,
                 "trials": len(r.outcomes), "attempts": r.attempts, "failures": len(r.failures)}
        return _rates_bytes(rates, args.format)
    if args.command == "simulate-tpr":
        base = tpr_config(_estimator(args), _rule(args), args.u1, args.n, args.p, args.trials, args.seed)
        cfg = SimConfig(n=base.n, p=base.p, shift=base.shift, sigma2=args.sigma2, estimator=base.estimator,
                        rule=base.rule, alpha=args.alpha, trials=base.trials, seed=base.seed,
                        window_mult=args.window_mult)
        r = run_tpr(cfg)
        rates = {"tpr_naive": r.tpr_naive, "tpr_bonf": r.tpr_bonf, "tpr_plh": r.tpr_plh,
                 "trials": len(r.outcomes), "attempts": r.attempts, "failures": len(r.failures)}
        return _rates_bytes(rates, args.format)
    if args.command == "compare-hl":
        cfg = hl_config(n=args.n, p=args.p, lam=args.lam, K=args.n_shifted, u=args.shift, trials=args.trials,
                        seed=args.seed, alpha=args.alpha)
        r = run_hl_compare(cfg)
        rates = {"tpr_plh": r.tpr_plh, "tpr_hl": r.tpr_hl, "containment_failures": r.containment_failures,
                 "detection_mismatches": r.detection_mismatches, "trials": len(r.outcomes),
                 "attempts": r.attempts, "failures": len(r.failures)}
        return _rates_bytes(rates, args.format)
    raise InputError(f"unknown command {args.command!r}")


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        out = _dispatch(args)
    except RobustSIError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    sys.stdout.buffer.write(out)
    sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
