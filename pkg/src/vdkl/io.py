"""Checkpoint, trace and report serialisation."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict
from pathlib import Path

import numpy as np

from vdkl.vdnet import DenseVDLayer, NetworkConfig, SparsityReport, TrainConfig, VDNetwork

SCHEMA_VERSION = 1
TRACE_COLUMNS = ("epoch", "objective", "kl_total", "rmse_train", "rmse_test")
NOISE_PARAM = {"multiplicative": "log_alpha", "additive": "log_sigma", "deterministic": None}


def checkpoint_dict(net: VDNetwork, net_cfg: NetworkConfig, train_cfg: TrainConfig, dataset_spec=None) -> dict:
    layers = []
    for layer in net.layers:
        layers.append(
            {
                "mode": layer.mode,
                "shape": list(layer.shape),
                "noise_param": NOISE_PARAM[layer.mode],
                "theta": layer.theta.ravel().tolist(),
                "noise": layer.noise.ravel().tolist(),
                "bias": layer.bias.tolist(),
            }
        )
    return {
        "schema_version": SCHEMA_VERSION,
        "network": asdict(net_cfg),
        "layers": layers,
        "train_cfg": asdict(train_cfg),
        "dataset": dataset_spec or {},
        "seed": train_cfg.seed,
    }


def save_checkpoint(path, net, net_cfg, train_cfg, dataset_spec=None):
    doc = checkpoint_dict(net, net_cfg, train_cfg, dataset_spec)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")
    return doc


def net_from_dict(doc: dict) -> VDNetwork:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported checkpoint schema {doc.get('schema_version')!r}")
    layers = []
    for entry in doc["layers"]:
        shape = tuple(entry["shape"])
        layers.append(
            DenseVDLayer(
                np.array(entry["theta"], dtype=float).reshape(shape),
                np.array(entry["noise"], dtype=float).reshape(shape),
                np.array(entry["bias"], dtype=float),
                entry["mode"],
            )
        )
    cfg = doc["network"]
    return VDNetwork(layers, cfg["activation"], cfg["sigma_n"])


def load_checkpoint(path):
    """Return ``(net, doc)`` for a checkpoint written by :func:`save_checkpoint`."""
    doc = json.loads(Path(path).read_text())
    return net_from_dict(doc), doc


def header_line(record: dict) -> str:
    return "# " + json.dumps(record, sort_keys=True) + "\n"


def trace_to_csv(trace, record: dict | None = None) -> str:
    buf = io.StringIO()
    if record is not None:
        buf.write(header_line(record))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for row in trace:
        writer.writerow([row.epoch, repr(row.objective), repr(row.kl_total), repr(row.rmse_train), repr(row.rmse_test)])
    return buf.getvalue()


def read_trace_csv(path):
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return [
        {k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()} for row in csv.DictReader(lines)
    ]


def _finite_or_str(x):
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def sparsity_rows(report: SparsityReport):
    for li, arr in enumerate(report.log10_alpha):
        for (o, i), val in np.ndenumerate(arr):
            yield {"layer": li, "out": o, "in": i, "log10_alpha": float(val), "pruned": int(val > report.threshold)}


def sparsity_to_dict(report: SparsityReport, record: dict | None = None) -> dict:
    return {
        "run": record or {},
        "threshold": report.threshold,
        "pruned_fraction": report.pruned_fraction,
        "n_pruned": report.n_pruned,
        "n_weights": report.n_weights,
        "rmse_before": report.rmse_before,
        "rmse_after": report.rmse_after,
        "weights": [dict(r, log10_alpha=_finite_or_str(r["log10_alpha"])) for r in sparsity_rows(report)],
    }


def sparsity_to_csv(report: SparsityReport, record: dict | None = None) -> str:
    buf = io.StringIO()
    if record is not None:
        buf.write(header_line(record))
    buf.write(
        f"# threshold={report.threshold!r} pruned_fraction={report.pruned_fraction!r} "
        f"rmse_before={report.rmse_before!r} rmse_after={report.rmse_after!r}\n"
    )
    writer = csv.DictWriter(buf, fieldnames=("layer", "out", "in", "log10_alpha", "pruned"), lineterminator="\n")
    writer.writeheader()
    for row in sparsity_rows(report):
        writer.writerow(row)
    return buf.getvalue()
