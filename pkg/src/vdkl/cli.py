"""
Command-line front end.

Every output starts with a run record (subcommand, effective config, seed,
package version) so a file can be replayed from its own header.  CSV files
carry it as a ``#`` comment line and JSON files under ``"run"``.  Nothing
time- or host-dependent is written, so identical invocations produce
byte-identical files.

Exit codes: 0 success, 1 verification failure, 2 usage or config error,
3 numerical error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from vdkl import __version__
from vdkl import io as vio
from vdkl.datasets import resolve
from vdkl.kl import kl_grad_u, kl_series_oracle, kl_value
from vdkl.probe import (
    constant_likelihood,
    divergence_report,
    gaussian_likelihood,
    logistic_likelihood,
    origin_grid,
    report_to_csv,
    report_to_dict,
    tail_grid,
)
from vdkl.vdnet import NetworkConfig, TrainConfig, sparsity_report, train
from vdkl.verify import perturbed_digamma, run_checks

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

KL_TABLE_COLUMNS = ("u", "kl_value", "kl_grad_u", "series_oracle_diff")
SERIES_ORACLE_MAX_U = 30.0
VERIFY_COLUMNS = ("check", "status", "error", "tolerance", "detail")
CONFIG_KEYS = {"network", "train", "dataset", "threshold"}


class UsageError(Exception):
    """Bad flags or config; maps to exit code 2."""


def run_record(command, config, seed):
    return {"command": command, "config": config, "seed": seed, "version": __version__}


def _emit(text: str, out: str | None):
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise UsageError(f"cannot write {out}: {exc.strerror}") from None


def _dump_json(doc) -> str:
    return json.dumps(doc, indent=1, allow_nan=False) + "\n"


def _rows_to_csv(record, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(vio.header_line(record))
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row[k] is None else (repr(row[k]) if isinstance(row[k], float) else row[k])) for k in columns})
    return buf.getvalue()


# ---------------------------------------------------------------------------
# kl-table


def kl_grid(u_min, u_max, points, kind):
    if not (0.0 <= u_min < u_max) or points < 2:
        raise UsageError("need 0 <= u_min < u_max and points >= 2")
    if kind == "linear":
        return np.linspace(u_min, u_max, points)
    if u_min > 0:
        return np.geomspace(u_min, u_max, points)
    # log grid anchored at zero: the origin plus a geometric grid from 1e-6
    start = min(1e-6, u_max / 10.0)
    return np.concatenate([[0.0], np.geomspace(start, u_max, points - 1)])


def cmd_kl_table(args):
    config = dict(u_min=args.u_min, u_max=args.u_max, points=args.points, grid=args.grid, c=args.c)
    record = run_record("kl-table", config, args.seed)
    rows = []
    for u in kl_grid(args.u_min, args.u_max, args.points, args.grid):
        u = float(u)
        val = kl_value(u, args.c)
        diff = abs(val - kl_series_oracle(u, args.c)) if u <= SERIES_ORACLE_MAX_U else None
        rows.append({"u": u, "kl_value": val, "kl_grad_u": kl_grad_u(u), "series_oracle_diff": diff})
    if args.format == "json":
        text = _dump_json({"run": record, "columns": list(KL_TABLE_COLUMNS), "rows": rows})
    else:
        text = _rows_to_csv(record, KL_TABLE_COLUMNS, rows)
    _emit(text, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args):
    config = {"inject_digamma_fault": args.inject_digamma_fault}
    record = run_record("verify", config, args.seed)
    psi = perturbed_digamma(args.inject_digamma_fault) if args.inject_digamma_fault else None
    results = run_checks(seed=args.seed, digamma_fn=psi)
    rows = [r.as_row() for r in results]
    failed = [r.name for r in results if not r.passed]
    if args.format == "json":
        text = _dump_json({"run": record, "passed": not failed, "failed": failed, "checks": rows})
    else:
        text = _rows_to_csv(record, VERIFY_COLUMNS, rows)
    _emit(text, args.out)
    if failed:
        print("verification failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


# ---------------------------------------------------------------------------
# probe


def _origin_likelihood(args):
    if args.likelihood == "sigmoid":
        return logistic_likelihood(1.0, 1)
    if args.likelihood == "gaussian":
        return gaussian_likelihood(args.y, 1.0)
    return constant_likelihood(1.0)


def cmd_probe(args):
    config = dict(kind=args.kind, c=args.c, points=args.points)
    if args.kind == "logistic-tail":
        config.update(k=args.k, K=args.K, side=args.side)
        reports = tail_grid(args.k, args.K, args.points, args.c, args.side)
        result = divergence_report(reports, "tail", args.threshold)
    else:
        config.update(delta0=args.delta0, delta=args.delta, likelihood=args.likelihood, y=args.y)
        reports = origin_grid(_origin_likelihood(args), args.delta0, args.delta, args.points, args.c)
        result = divergence_report(reports, "origin", args.threshold)
    config["threshold"] = result.threshold
    record = run_record("probe", config, args.seed)
    if args.format == "json":
        text = _dump_json({"run": record, **report_to_dict(result)})
    else:
        text = report_to_csv(result, json.dumps(record, sort_keys=True))
    _emit(text, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# train / sparsity


def _json_error_context(path, text, exc):
    lines = text.splitlines()
    line = lines[exc.lineno - 1] if 0 < exc.lineno <= len(lines) else ""
    return f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}\n    {line}\n    {' ' * (exc.colno - 1)}^"


def load_run_config(path):
    """Parse a training config file into ``(NetworkConfig, TrainConfig, dataset_spec, threshold)``."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(_json_error_context(path, text, exc)) from None
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: top level must be a JSON object")
    unknown = set(doc) - CONFIG_KEYS
    if unknown:
        raise UsageError(f"{path}: unknown keys {sorted(unknown)}; expected {sorted(CONFIG_KEYS)}")
    for key in ("network", "dataset"):
        if key not in doc:
            raise UsageError(f"{path}: missing required key {key!r}")
    net_cfg = _build(NetworkConfig, doc["network"], path, "network")
    train_cfg = _build(TrainConfig, doc.get("train", {}), path, "train")
    if not isinstance(doc["dataset"], dict):
        raise UsageError(f"{path}: 'dataset' must be an object")
    threshold = doc.get("threshold", 3.0)
    if not isinstance(threshold, (int, float)):
        raise UsageError(f"{path}: 'threshold' must be a number")
    return net_cfg, train_cfg, doc["dataset"], float(threshold)


def _build(cls, section, path, name):
    if not isinstance(section, dict):
        raise UsageError(f"{path}: {name!r} must be an object")
    allowed = {f.name for f in fields(cls)}
    unknown = set(section) - allowed
    if unknown:
        raise UsageError(f"{path}: unknown {name} keys {sorted(unknown)}; allowed {sorted(allowed)}")
    try:
        return cls(**section)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{path}: invalid {name} section: {exc}") from None


def _resolve_dataset(spec, where):
    try:
        return resolve(spec)
    except (TypeError, ValueError, OSError) as exc:
        raise UsageError(f"{where}: cannot build dataset: {exc}") from None


def _sparsity_text(report, record, fmt):
    if fmt == "json":
        return _dump_json(vio.sparsity_to_dict(report, record))
    return vio.sparsity_to_csv(report, record)


def cmd_train(args):
    net_cfg, train_cfg, data_spec, threshold = load_run_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.c is not None:
        overrides["prior_c"] = args.c
    if overrides:
        train_cfg = TrainConfig(**{**asdict(train_cfg), **overrides})
    data = _resolve_dataset(data_spec, args.config)
    effective = {
        "network": asdict(net_cfg),
        "train": asdict(train_cfg),
        "dataset": data.spec,
        "threshold": threshold,
    }
    record = run_record("train", effective, train_cfg.seed)
    print(_dump_json(effective), end="")

    try:
        result = train(net_cfg, train_cfg, data)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    report = sparsity_report(result.net, threshold, data.x_test, data.y_test)
    metrics = {
        "rmse_train": result.trace[-1].rmse_train,
        "rmse_test": result.trace[-1].rmse_test,
        "min_weight_kl": result.min_weight_kl[-1],
        "min_weight_kl_over_training": min(result.min_weight_kl),
        "kl_at_zero": kl_value(0.0, train_cfg.prior_c),
    }

    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        doc = vio.checkpoint_dict(result.net, net_cfg, train_cfg, data.spec)
        doc["threshold"] = threshold
        doc["metrics"] = metrics
        (out / "checkpoint.json").write_text(_dump_json(doc))
        (out / "trace.csv").write_text(vio.trace_to_csv(result.trace, record))
        (out / f"sparsity.{args.format}").write_text(_sparsity_text(report, record, args.format))
    except OSError as exc:
        raise UsageError(f"cannot write outputs under {out}: {exc}") from None
    return EXIT_OK


def cmd_sparsity(args):
    try:
        net, doc = vio.load_checkpoint(args.checkpoint)
    except OSError as exc:
        raise UsageError(f"cannot read checkpoint {args.checkpoint}: {exc.strerror}") from None
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise UsageError(f"{args.checkpoint}: not a valid checkpoint ({exc})") from None
    data = _resolve_dataset(doc["dataset"], args.checkpoint)
    config = {"checkpoint": str(args.checkpoint), "threshold": args.threshold}
    record = run_record("sparsity", config, doc.get("seed") if args.seed is None else args.seed)
    report = sparsity_report(net, args.threshold, data.x_test, data.y_test)
    _emit(_sparsity_text(report, record, args.format), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

_COLUMN_HELP = {
    "kl-table": "CSV columns: u, kl_value, kl_grad_u, series_oracle_diff (blank when u > 30).",
    "verify": "CSV columns: check, status, error, tolerance, detail.",
    "probe": "CSV columns: lo, hi, estimate, lower_bound, abs_err, slope; a comment line carries slope and verdict.",
    "train": "Writes checkpoint.json, trace.csv (epoch, objective, kl_total, rmse_train, rmse_test) "
    "and sparsity.csv|json (layer, out, in, log10_alpha, pruned) into --out.",
    "sparsity": "CSV columns: layer, out, in, log10_alpha, pruned.",
}


def _common(seed_default=0, c_default=1.0, out_help="output file (default: stdout)"):
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=seed_default, help="random seed, recorded in output headers")
    p.add_argument("--out", default=None, help=out_help)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--c", type=float, default=c_default, help="prior constant C > 0")
    return p


def _positive(kind):
    def parse(text):
        value = kind(text)
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
        return value

    return parse


def build_parser():
    parser = argparse.ArgumentParser(prog="vdkl", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=f"vdkl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, **common):
        return sub.add_parser(
            name, help=help_text, description=help_text, epilog=_COLUMN_HELP[name], parents=[_common(**common)]
        )

    p = add("kl-table", "tabulate the exact KL and its u-gradient")
    p.add_argument("--u-min", type=float, default=0.0)
    p.add_argument("--u-max", type=float, default=50.0)
    p.add_argument("--points", type=int, default=101)
    p.add_argument("--grid", choices=("log", "linear"), default="log")
    p.set_defaults(func=cmd_kl_table)

    p = add("verify", "run the oracle suite; exit 1 if any check fails")
    p.add_argument("--inject-digamma-fault", type=float, default=0.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = add("probe", "probe prior x likelihood mass near the origin or in a logistic tail")
    p.add_argument("--kind", choices=("origin", "logistic-tail"), default="logistic-tail")
    p.add_argument("--k", type=_positive(float), default=10.0, help="inner tail edge")
    p.add_argument("--K", type=_positive(float), default=None, help="outer tail edge (default k e^points)")
    p.add_argument("--side", choices=("right", "left"), default="right")
    p.add_argument("--points", type=int, default=8)
    p.add_argument("--delta0", type=_positive(float), default=1e-2, help="outer annulus radius")
    p.add_argument("--delta", type=_positive(float), default=None, help="inner annulus radius (default delta0 e^-points)")
    p.add_argument("--likelihood", choices=("sigmoid", "gaussian", "constant"), default="sigmoid")
    p.add_argument("--y", type=float, default=0.0, help="observation for the gaussian likelihood")
    p.add_argument("--threshold", type=float, default=None, help="slope threshold (default 0.1 C)")
    p.set_defaults(func=cmd_probe)

    p = add("train", "train a variational dropout network from a JSON config", seed_default=None,
            c_default=None, out_help="output directory (default: vdkl-run)")
    p.add_argument("config", help="path to the JSON run config")
    p.set_defaults(func=cmd_train, out_default="vdkl-run")

    p = add("sparsity", "threshold-prune a checkpoint and report held-out RMSE", seed_default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--threshold", type=float, default=3.0, help="prune weights with log10 alpha above this")
    p.set_defaults(func=cmd_sparsity)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.out is None and getattr(args, "out_default", None):
        args.out = args.out_default
    if args.c is not None and not (args.c > 0 and math.isfinite(args.c)):
        parser.error("--c must be a finite positive number")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"vdkl {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ArithmeticError as exc:
        print(f"vdkl {args.command}: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # DomainError and InsufficientGridError: invalid parameters
        print(f"vdkl {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
