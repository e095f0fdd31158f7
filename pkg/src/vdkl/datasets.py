"""Built-in regression tasks and CSV ingestion."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from vdkl.vdnet import Dataset


def linear_redundant(n=200, n_signal=2, n_noise=8, sigma_n=0.1, seed=0) -> Dataset:
    """y = 2 x0 - 1.5 x1 + N(0, sigma_n^2); the remaining features are pure noise.

    Train and test sets of ``n`` rows each are drawn from one generator.
    """
    rng = np.random.default_rng(seed)
    coef = np.zeros(n_signal + n_noise)
    coef[:n_signal] = [2.0, -1.5][:n_signal] + [1.0] * max(0, n_signal - 2)

    def draw():
        x = rng.standard_normal((n, n_signal + n_noise))
        return x, x @ coef + sigma_n * rng.standard_normal(n)

    x_train, y_train = draw()
    x_test, y_test = draw()
    spec = dict(name="linear_redundant", n=n, n_signal=n_signal, n_noise=n_noise, sigma_n=sigma_n, seed=seed)
    return Dataset(x_train, y_train, x_test, y_test, "linear_redundant", list(range(n_signal)), spec)


def sine(n=100, sigma_n=0.1, seed=0) -> Dataset:
    """y = sin(x) + N(0, sigma_n^2), x uniform on [-3, 3]."""
    rng = np.random.default_rng(seed)

    def draw():
        x = rng.uniform(-3.0, 3.0, size=(n, 1))
        return x, np.sin(x[:, 0]) + sigma_n * rng.standard_normal(n)

    x_train, y_train = draw()
    x_test, y_test = draw()
    return Dataset(x_train, y_train, x_test, y_test, "sine", [0], dict(name="sine", n=n, sigma_n=sigma_n, seed=seed))


BUILTIN = {"linear_redundant": linear_redundant, "sine": sine}


def load_csv(path, test_fraction=0.2) -> Dataset:
    """Read a headed CSV whose last column is the target.

    The final ``test_fraction`` of rows (in file order) is held out.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 3:
        raise ValueError(f"{path}: need a header and at least two data rows")
    header, body = rows[0], rows[1:]
    try:
        data = np.array([[float(v) for v in row] for row in body if row], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric value ({exc})") from None
    if data.ndim != 2 or data.shape[1] != len(header) or data.shape[1] < 2:
        raise ValueError(f"{path}: inconsistent column count")
    n_test = max(1, int(round(test_fraction * len(data))))
    x, y = data[:, :-1], data[:, -1]
    spec = dict(csv=str(path), test_fraction=test_fraction)
    return Dataset(x[:-n_test], y[:-n_test], x[-n_test:], y[-n_test:], path.stem, [], spec)


def resolve(spec: dict) -> Dataset:
    """Build a dataset from its config entry: ``{"name": ..., **kwargs}`` or ``{"csv": path}``."""
    spec = dict(spec)
    if "csv" in spec:
        return load_csv(spec["csv"], spec.get("test_fraction", 0.2))
    name = spec.pop("name", None)
    if name not in BUILTIN:
        raise ValueError(f"unknown dataset {name!r}; built-ins are {sorted(BUILTIN)}")
    return BUILTIN[name](**spec)
