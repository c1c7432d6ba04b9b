"""Command-line interface: ``regcontrast <command> [options]``.

Exit codes: 0 success, 1 invalid input or usage, 2 solver failure
(infeasible constraints, separation, budget exhausted).
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from typing import Optional, Sequence

from .core import Method
from .data import CsvSchema, GeneratorConfig, dataset_to_csv, generate_synthetic_example, load_csv
from .errors import InfeasibleError, SolverError, ValidationError
from .report import (
    FORMATS,
    METHOD_ORDER,
    PipelineOptions,
    make_weights,
    render_balance,
    render_report,
    run_methods,
)

METHOD_CHOICES = tuple(m.value for m in Method)


class _Parser(argparse.ArgumentParser):
    # usage errors share the validation exit code
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _methods(text: str) -> list:
    out = []
    for tok in text.split(","):
        tok = tok.strip().lower()
        if tok == "all":
            out.extend(METHOD_CHOICES)
        elif tok in METHOD_CHOICES:
            out.append(tok)
        else:
            raise argparse.ArgumentTypeError(
                f"unknown method {tok!r}; choose from {', '.join(METHOD_CHOICES)} or all")
    return out


def _tolerances(text: str):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or comma-separated numbers, got {text!r}") from None
    if any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError("tolerances must be >= 0")
    return vals[0] if len(vals) == 1 else tuple(vals)


def _data_args(p: argparse.ArgumentParser, method_default: str) -> None:
    p.add_argument("--data", required=True, help="input CSV file")
    p.add_argument("--id", default="id", help="id column (default: id)")
    p.add_argument("--treatment", default="treatment", help="treatment column, values 0/1")
    p.add_argument("--outcome", default="outcome", help="outcome column")
    p.add_argument("--covariates", help="comma-separated covariate columns (default: all other columns)")
    p.add_argument("--method", type=_methods, default=_methods(method_default),
                   help=f"{'|'.join(METHOD_CHOICES)}|all, or a comma-separated list")
    p.add_argument("--delta", type=_tolerances, default=0.02,
                   help="SBW balance tolerance in pooled sd units (scalar or per covariate; default 0.02)")
    p.add_argument("--tolerance", type=_tolerances, default=0.05,
                   help="profile-matching tolerance in pooled sd units (default 0.05)")
    p.add_argument("--metric", default="mahalanobis", choices=("mahalanobis", "normalized_euclidean"))
    p.add_argument("--target", default="att", choices=("att",))
    p.add_argument("--seed", type=int, default=None, help="accepted for reproducible scripts; methods are deterministic")
    p.add_argument("--out", default="-", help="output file, '-' for stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="regcontrast", description="Weighting and matching estimators of the ATT with balance diagnostics.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver warnings")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analyze", help="estimate the ATT with one or more methods")
    _data_args(p, "all")
    p.add_argument("--format", default="text", choices=FORMATS)

    p = sub.add_parser("weights", help="per-unit weights as CSV")
    _data_args(p, "uri")
    p.add_argument("--format", default="csv", choices=("csv",))

    p = sub.add_parser("balance", help="covariate balance tables")
    _data_args(p, "uniform")
    p.add_argument("--format", default="text", choices=("text", "json", "csv"))

    p = sub.add_parser("compare", help="run every method and emit one combined report")
    _data_args(p, "all")
    p.add_argument("--format", default="text", choices=FORMATS)

    p = sub.add_parser("generate", help="write a synthetic dataset as CSV")
    d = GeneratorConfig()
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--n-treated", type=int, default=d.n_treated)
    p.add_argument("--n-control", type=int, default=d.n_control)
    p.add_argument("--true-att", type=float, default=d.true_att)
    p.add_argument("--outcome-model", default=d.outcome_model, choices=("linear", "curved"))
    p.add_argument("--no-outlier", action="store_true", help="omit the high-income control unit")
    p.add_argument("--out", default="-")
    return parser


def _load(args):
    covs = None if args.covariates is None else tuple(c.strip() for c in args.covariates.split(",") if c.strip())
    return load_csv(args.data, CsvSchema(args.id, args.treatment, args.outcome, covs))


def _options(args) -> PipelineOptions:
    return PipelineOptions(delta=args.delta, tolerance=args.tolerance, metric=args.metric,
                           target=args.target, seed=args.seed)


def _ordered(methods) -> list:
    wanted = set(methods)
    return [m for m in METHOD_ORDER if m.value in wanted]


def _weights_csv(dataset, methods, options) -> bytes:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["method", "id", "treatment", "weight"])
    for m in _ordered(methods):
        w = make_weights(dataset, m, options).weights
        for i, uid in enumerate(dataset.ids):
            wr.writerow([m.value, uid, int(dataset.treated[i]), repr(float(w[i]))])
    return buf.getvalue().encode("utf-8")


def _write(data: bytes, out: str) -> None:
    if out == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        with open(out, "wb") as fh:
            fh.write(data)


def _run(args) -> bytes:
    if args.command == "generate":
        d = GeneratorConfig()
        cfg = GeneratorConfig(n_treated=args.n_treated, n_control=args.n_control, true_att=args.true_att,
                              outcome_model=args.outcome_model, seed=args.seed,
                              outlier=None if args.no_outlier else d.outlier)
        return dataset_to_csv(generate_synthetic_example(cfg)).encode("utf-8")
    dataset = _load(args)
    options = _options(args)
    if args.command == "weights":
        return _weights_csv(dataset, args.method, options)
    reports = run_methods(dataset, args.method, options)
    if args.command == "balance":
        return render_balance(reports, args.format)
    return render_report(reports, args.format)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        data = _run(args)
        _write(data, args.out)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
