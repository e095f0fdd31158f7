"""
Feed-forward regression network with variational Gaussian dropout layers.

Each weight carries a Gaussian pseudo-posterior in one of two
parametrisations:

``multiplicative``
    w = theta * eps, eps ~ N(1, alpha); stored as ``(theta, log_alpha)``.
    The KL term depends on alpha only (u = 1/alpha).
``additive``
    w ~ N(theta, sigma^2); stored as ``(theta, log_sigma)``.
    u = theta^2 / (2 sigma^2), so u = 0 is reached exactly at theta = 0.

A ``deterministic`` layer has no noise and no KL term.  Pre-activations are
sampled with the local reparametrisation trick, the KL term is the exact
log-uniform KL from :mod:`vdkl.kl`, and gradients are computed by a hand
written reverse pass.  Biases are deterministic and unregularised.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from vdkl.errors import StateError, TrainingDivergedError
from vdkl.kl import (
    DEFAULT_SERIES,
    MeanVarParams,
    SeriesConfig,
    kl_evaluate,
    kl_grad_u_array,
    kl_value_array,
    reduced_u,
)

MODES = ("multiplicative", "additive", "deterministic")
ACTIVATIONS = ("relu", "identity")

LOG_ALPHA_RANGE = (-20.0, 20.0)
LOG_SIGMA_RANGE = (-20.0, 10.0)
INIT_LOG_ALPHA = -3.0


# ---------------------------------------------------------------------------
# layers


@dataclass
class DenseVDLayer:
    """Dense layer; ``theta`` and ``noise`` have shape (out, in).

    ``noise`` holds log(alpha) in multiplicative mode and log(sigma) in
    additive mode; it is ignored in deterministic mode.
    """

    theta: np.ndarray
    noise: np.ndarray
    bias: np.ndarray
    mode: str = "additive"

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.noise = np.asarray(self.noise, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.theta.ndim != 2 or self.theta.shape != self.noise.shape:
            raise ValueError(f"theta {self.theta.shape} and noise {self.noise.shape} must be equal 2-d shapes")
        if self.bias.shape != (self.theta.shape[0],):
            raise ValueError(f"bias must have length {self.theta.shape[0]}, got {self.bias.shape}")

    @property
    def shape(self):
        return self.theta.shape

    @property
    def in_features(self):
        return self.theta.shape[1]

    @property
    def out_features(self):
        return self.theta.shape[0]

    @property
    def alpha(self):
        if self.mode != "multiplicative":
            raise AttributeError("alpha is only stored in multiplicative mode")
        return np.exp(self.noise)

    def weight_variance(self):
        if self.mode == "multiplicative":
            return np.exp(self.noise) * self.theta**2
        if self.mode == "additive":
            return np.exp(2.0 * self.noise)
        return np.zeros_like(self.theta)

    def reduced_u(self):
        if self.mode == "multiplicative":
            return np.exp(-self.noise)
        if self.mode == "additive":
            return 0.5 * self.theta**2 * np.exp(-2.0 * self.noise)
        raise ValueError("deterministic layers carry no KL term")

    def kl_per_weight(self, c=1.0, cfg: SeriesConfig = DEFAULT_SERIES):
        if self.mode == "deterministic":
            return np.zeros_like(self.theta)
        return kl_value_array(self.reduced_u(), c, cfg)

    def kl_grads(self, cfg: SeriesConfig = DEFAULT_SERIES):
        """Gradients of the summed KL w.r.t. (theta, noise)."""
        if self.mode == "deterministic":
            return np.zeros_like(self.theta), np.zeros_like(self.noise)
        u = self.reduced_u()
        g = kl_grad_u_array(u, cfg)
        if self.mode == "multiplicative":
            # u = exp(-log_alpha); theta never enters
            return np.zeros_like(self.theta), -u * g
        inv_var = np.exp(-2.0 * self.noise)
        return g * self.theta * inv_var, -2.0 * u * g

    def log10_alpha(self):
        """Per-weight log10 of the variance-to-squared-mean ratio."""
        if self.mode == "multiplicative":
            return self.noise / math.log(10.0)
        if self.mode == "additive":
            with np.errstate(divide="ignore"):
                out = (2.0 * self.noise - 2.0 * np.log(np.abs(self.theta))) / math.log(10.0)
            return out
        raise ValueError("deterministic layers have no alpha")

    def clamp(self):
        if self.mode == "multiplicative":
            np.clip(self.noise, *LOG_ALPHA_RANGE, out=self.noise)
        elif self.mode == "additive":
            np.clip(self.noise, *LOG_SIGMA_RANGE, out=self.noise)


def init_layer(n_in, n_out, mode, rng):
    theta = rng.normal(0.0, math.sqrt(2.0 / n_in), size=(n_out, n_in))
    if mode == "multiplicative":
        noise = np.full_like(theta, INIT_LOG_ALPHA)
    elif mode == "additive":
        noise = np.log(0.05 * np.abs(theta) + 1e-8)
    else:
        noise = np.zeros_like(theta)
    return DenseVDLayer(theta, noise, np.zeros(n_out), mode)


@dataclass
class LayerCache:
    inputs: np.ndarray
    eps: np.ndarray | None
    std: np.ndarray | None


def forward_local_reparam(layer: DenseVDLayer, inputs, rng=None, eps=None):
    """Sample pre-activations of ``layer`` for a batch of ``inputs``.

    Each pre-activation is Normal with mean ``A theta^T + b`` and variance
    ``(A*A) V^T`` where ``V`` is the per-weight variance.  Standard normal
    draws come from ``rng`` (a ``numpy.random.Generator``, advanced in place)
    unless ``eps`` is given.  Returns ``(outputs, cache)``.
    """
    a = np.asarray(inputs, dtype=float)
    if a.ndim != 2 or a.shape[1] != layer.in_features:
        raise ValueError(f"expected inputs of shape (n, {layer.in_features}), got {a.shape}")
    mean = a @ layer.theta.T + layer.bias
    if layer.mode == "deterministic":
        return mean, LayerCache(a, None, None)
    var = (a * a) @ layer.weight_variance().T
    std = np.sqrt(var)
    if eps is None:
        if rng is None:
            raise ValueError("need rng or eps for a stochastic layer")
        eps = rng.standard_normal(mean.shape)
    return mean + std * eps, LayerCache(a, eps, std)


@dataclass
class CorrelatedVDLayer:
    """Layer whose weight rows share one noise scalar: w_i = s_i theta_i, s_i ~ N(1, alpha_i).

    ``theta`` has shape (out, in); row ``i`` of the weight matrix in the
    (in, out) convention is column ``i`` here, so ``row_alpha`` has length
    ``in``.  ``prior_scope`` says whether the log-uniform prior is placed on
    the full weights or on the scalars ``s_i`` only.
    """

    theta: np.ndarray
    row_alpha: np.ndarray
    prior_scope: str = "full_weights"
    bias: np.ndarray | None = None

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.row_alpha = np.asarray(self.row_alpha, dtype=float)
        if self.row_alpha.shape != (self.theta.shape[1],):
            raise ValueError("row_alpha needs one entry per input row")
        if np.any(~(self.row_alpha > 0)):
            raise ValueError("every row_alpha must be > 0")
        if self.prior_scope not in ("full_weights", "scalars_only"):
            raise ValueError(f"unknown prior_scope {self.prior_scope!r}")

    def forward(self, inputs, rng):
        a = np.asarray(inputs, dtype=float)
        s = 1.0 + np.sqrt(self.row_alpha) * rng.standard_normal(a.shape)
        out = (a * s) @ self.theta.T
        if self.bias is not None:
            out = out + self.bias
        return out


@dataclass(frozen=True)
class InfiniteKL:
    """The row-shared posterior lives on a measure-zero subspace of weight space."""

    reason: str = "posterior is degenerate; KL to a full-support prior is infinite"


@dataclass(frozen=True)
class ScalarOnlyKL:
    per_row: list
    unregularised_param_count: int

    @property
    def total(self):
        return sum(ev.value for ev in self.per_row)


def correlated_kl_diagnostic(layer: CorrelatedVDLayer, c=1.0, cfg: SeriesConfig = DEFAULT_SERIES):
    """Classify the KL term of a correlated-noise layer.

    With the prior over full weights the answer is :class:`InfiniteKL` for
    any ``theta``.  With the prior over the scalars only, each ``s_i`` gets
    the KL of N(1, alpha_i) against C/|s| (u = 1/(2 alpha_i)) and every
    theta entry (plus bias) is left without a regulariser.
    """
    if layer.prior_scope == "full_weights":
        return InfiniteKL()
    per_row = [kl_evaluate(reduced_u(MeanVarParams(1.0, float(a))), c, cfg) for a in layer.row_alpha]
    count = layer.theta.size + (0 if layer.bias is None else np.asarray(layer.bias).size)
    return ScalarOnlyKL(per_row, int(count))


# ---------------------------------------------------------------------------
# network


@dataclass
class NetworkConfig:
    sizes: list
    modes: list | str = "additive"
    activation: str = "relu"
    sigma_n: float = 0.1

    def __post_init__(self):
        self.sizes = [int(s) for s in self.sizes]
        if len(self.sizes) < 2 or any(s < 1 for s in self.sizes):
            raise ValueError(f"sizes must list >= 2 positive widths, got {self.sizes}")
        if isinstance(self.modes, str):
            self.modes = [self.modes] * (len(self.sizes) - 1)
        self.modes = list(self.modes)
        if len(self.modes) != len(self.sizes) - 1:
            raise ValueError("need one mode per layer")
        for m in self.modes:
            if m not in MODES:
                raise ValueError(f"unknown mode {m!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not self.sigma_n > 0:
            raise ValueError("sigma_n must be > 0")

    @property
    def n_weights(self) -> int:
        """Total parameter count D: weight entries plus biases."""
        return sum(a * b + b for a, b in zip(self.sizes[:-1], self.sizes[1:]))


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 300
    batch_size: int = 50
    seed: int = 0
    kl_scale: float = 1.0
    prior_c: float = 1.0
    optimizer: str = "adam"
    momentum: float = 0.9
    lr_decay: float = 1.0  # final / initial learning rate, geometric per epoch

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.kl_scale < 0:
            raise ValueError("kl_scale must be >= 0")
        if not self.prior_c > 0:
            raise ValueError("prior_c must be > 0")
        if self.optimizer not in ("sgd", "momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")

    def lr_at(self, epoch: int) -> float:
        if self.epochs == 1:
            return self.learning_rate
        return self.learning_rate * self.lr_decay ** ((epoch - 1) / (self.epochs - 1))


class VDNetwork:
    """Stack of :class:`DenseVDLayer` with a Gaussian likelihood of fixed noise."""

    def __init__(self, layers, activation="relu", sigma_n=0.1, series: SeriesConfig = DEFAULT_SERIES):
        self.layers = list(layers)
        self.activation = activation
        self.sigma_n = float(sigma_n)
        self.series = series
        self._cache = None

    @classmethod
    def from_config(cls, cfg: NetworkConfig, rng):
        layers = [
            init_layer(n_in, n_out, mode, rng)
            for n_in, n_out, mode in zip(cfg.sizes[:-1], cfg.sizes[1:], cfg.modes)
        ]
        return cls(layers, cfg.activation, cfg.sigma_n)

    def copy(self):
        return VDNetwork(copy.deepcopy(self.layers), self.activation, self.sigma_n, self.series)

    def _act(self, h):
        return np.maximum(h, 0.0) if self.activation == "relu" else h

    def predict_mean(self, x):
        """Deterministic prediction using the mean weights theta."""
        h = np.asarray(x, dtype=float)
        for i, layer in enumerate(self.layers):
            h = h @ layer.theta.T + layer.bias
            if i < len(self.layers) - 1:
                h = self._act(h)
        return h[:, 0] if h.shape[1] == 1 else h

    def rmse(self, x, y):
        pred = self.predict_mean(x)
        return float(np.sqrt(np.mean((pred - np.asarray(y, dtype=float)) ** 2)))

    def kl_per_layer(self, c=1.0):
        return [float(layer.kl_per_weight(c, self.series).sum()) for layer in self.layers]

    def min_weight_kl(self, c=1.0):
        vals = [layer.kl_per_weight(c, self.series).min() for layer in self.layers if layer.mode != "deterministic"]
        return float(min(vals)) if vals else math.nan

    def forward(self, x, rng):
        caches, pre = [], []
        h = np.asarray(x, dtype=float)
        for i, layer in enumerate(self.layers):
            z, cache = forward_local_reparam(layer, h, rng)
            caches.append(cache)
            pre.append(z)
            h = self._act(z) if i < len(self.layers) - 1 else z
        return h, caches, pre

    def parameters(self):
        for layer in self.layers:
            yield layer.theta
            yield layer.noise
            yield layer.bias


def gaussian_loglik(pred, y, sigma_n):
    r = np.asarray(y, dtype=float) - pred
    # overflow yields -inf, which train() reports as divergence
    with np.errstate(over="ignore"):
        return float(np.sum(-0.5 * math.log(2.0 * math.pi * sigma_n**2) - 0.5 * r * r / sigma_n**2))


def elbo_objective(net: VDNetwork, x, y, train_cfg: TrainConfig, rng, n_total=None):
    """Single-sample pseudo-ELBO estimate for a batch.

    The batch log-likelihood is scaled by ``n_total / batch`` so that it
    estimates the full-data term; the KL term is exact.  Returns
    ``(objective, per_layer_kl)`` and records the forward pass for
    :func:`backward`.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if x.shape[0] != y.shape[0]:
        raise ValueError("x and y have different lengths")
    n_total = x.shape[0] if n_total is None else n_total
    scale = n_total / x.shape[0]
    out, caches, pre = net.forward(x, rng)
    pred = out[:, 0]
    loglik = scale * gaussian_loglik(pred, y, net.sigma_n)
    kls = net.kl_per_layer(train_cfg.prior_c)
    objective = loglik - train_cfg.kl_scale * sum(kls)
    net._cache = dict(caches=caches, pre=pre, pred=pred, y=y, scale=scale)
    return objective, kls


def backward(net: VDNetwork, train_cfg: TrainConfig):
    """Gradients of the last :func:`elbo_objective` call.

    Returns one dict per layer with keys ``theta``, ``noise`` (w.r.t. the
    stored log-parameter) and ``bias``.  The likelihood part is the pathwise
    gradient through the recorded noise draw; the KL part comes from the
    exact chain rules.  The recorded pass is consumed.
    """
    if net._cache is None:
        raise StateError("backward() needs a preceding elbo_objective() on the same network")
    cache, net._cache = net._cache, None
    sigma2 = net.sigma_n**2
    grad_out = (cache["scale"] * (cache["y"] - cache["pred"]) / sigma2)[:, None]
    grads = [None] * len(net.layers)
    g = grad_out
    for i in reversed(range(len(net.layers))):
        layer, lc = net.layers[i], cache["caches"][i]
        if i < len(net.layers) - 1 and net.activation == "relu":
            g = g * (cache["pre"][i] > 0)
        a = lc.inputs
        d_theta = g.T @ a
        d_bias = g.sum(axis=0)
        d_a = g @ layer.theta
        d_noise = np.zeros_like(layer.noise)
        if layer.mode != "deterministic":
            d_std = g * lc.eps
            with np.errstate(divide="ignore", invalid="ignore"):
                d_var = np.where(lc.std > 0, 0.5 * d_std / lc.std, 0.0)
            a2 = a * a
            d_wvar = d_var.T @ a2
            wvar = layer.weight_variance()
            d_a = d_a + 2.0 * a * (d_var @ wvar)
            if layer.mode == "multiplicative":
                alpha = np.exp(layer.noise)
                d_theta += d_wvar * 2.0 * alpha * layer.theta
                d_noise += d_wvar * wvar
            else:
                d_noise += d_wvar * 2.0 * wvar
            k_theta, k_noise = layer.kl_grads(net.series)
            d_theta -= train_cfg.kl_scale * k_theta
            d_noise -= train_cfg.kl_scale * k_noise
        grads[i] = {"theta": d_theta, "noise": d_noise, "bias": d_bias}
        g = d_a
    return grads


# ---------------------------------------------------------------------------
# training


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    name: str = "custom"
    signal_features: list = field(default_factory=list)
    spec: dict = field(default_factory=dict)


@dataclass
class TraceRow:
    epoch: int
    objective: float
    kl_total: float
    rmse_train: float
    rmse_test: float


@dataclass
class TrainResult:
    net: VDNetwork
    trace: list
    min_weight_kl: list


class _Optimizer:
    def __init__(self, cfg: TrainConfig, params):
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def ascend(self, params, grads, lr):
        cfg = self.cfg
        self.t += 1
        for i, (p, g) in enumerate(zip(params, grads)):
            if cfg.optimizer == "sgd":
                p += lr * g
            elif cfg.optimizer == "momentum":
                self.m[i] = cfg.momentum * self.m[i] + g
                p += lr * self.m[i]
            else:
                b1, b2 = 0.9, 0.999
                self.m[i] = b1 * self.m[i] + (1 - b1) * g
                self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
                m_hat = self.m[i] / (1 - b1**self.t)
                v_hat = self.v[i] / (1 - b2**self.t)
                p += lr * m_hat / (np.sqrt(v_hat) + 1e-8)


def train(net_cfg: NetworkConfig, train_cfg: TrainConfig, data: Dataset, net: VDNetwork | None = None):
    """Gradient ascent on the pseudo-ELBO; deterministic for a fixed seed."""
    if data.x_train.shape[1] != net_cfg.sizes[0]:
        raise ValueError(f"dataset has {data.x_train.shape[1]} features, network expects {net_cfg.sizes[0]}")
    if net_cfg.sizes[-1] != 1:
        raise ValueError("regression networks need a single output unit")
    rng = np.random.default_rng(train_cfg.seed)
    if net is None:
        net = VDNetwork.from_config(net_cfg, rng)
    params = list(net.parameters())
    opt = _Optimizer(train_cfg, params)
    n = data.x_train.shape[0]
    bs = min(train_cfg.batch_size, n)
    trace, min_kl = [], []
    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(n)
        lr = train_cfg.lr_at(epoch)
        objectives = []
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            obj, _ = elbo_objective(net, data.x_train[idx], data.y_train[idx], train_cfg, rng, n_total=n)
            if not math.isfinite(obj):
                raise TrainingDivergedError(f"objective became {obj} at epoch {epoch}")
            grads = backward(net, train_cfg)
            flat = [g[key] for g in grads for key in ("theta", "noise", "bias")]
            opt.ascend(params, flat, lr)
            for layer in net.layers:
                layer.clamp()
            objectives.append(obj)
        kl_total = sum(net.kl_per_layer(train_cfg.prior_c))
        trace.append(
            TraceRow(
                epoch=epoch,
                objective=float(np.mean(objectives)),
                kl_total=float(kl_total),
                rmse_train=net.rmse(data.x_train, data.y_train),
                rmse_test=net.rmse(data.x_test, data.y_test),
            )
        )
        min_kl.append(net.min_weight_kl(train_cfg.prior_c))
    return TrainResult(net, trace, min_kl)


# ---------------------------------------------------------------------------
# sparsity


@dataclass
class SparsityReport:
    log10_alpha: list
    threshold: float
    pruned_fraction: float
    rmse_before: float
    rmse_after: float
    n_pruned: int = 0
    n_weights: int = 0


def prune(net: VDNetwork, threshold: float) -> VDNetwork:
    """Copy of ``net`` with every weight whose log10 alpha exceeds ``threshold`` zeroed."""
    pruned = net.copy()
    for layer in pruned.layers:
        if layer.mode == "deterministic":
            continue
        mask = layer.log10_alpha() > threshold
        layer.theta[mask] = 0.0
        layer.noise[mask] = LOG_SIGMA_RANGE[0] if layer.mode == "additive" else LOG_ALPHA_RANGE[0]
    return pruned


def sparsity_report(net: VDNetwork, threshold: float, x_test, y_test) -> SparsityReport:
    """Threshold pruning on log10 alpha and its effect on held-out RMSE.

    In additive mode a weight with theta = 0 has log10 alpha = +inf and is
    always pruned.
    """
    noisy = [layer for layer in net.layers if layer.mode != "deterministic"]
    if not noisy:
        raise ValueError("sparsity needs at least one additive or multiplicative layer")
    log10 = [layer.log10_alpha() for layer in noisy]
    total = sum(a.size for a in log10)
    count = int(sum(np.count_nonzero(a > threshold) for a in log10))
    return SparsityReport(
        log10_alpha=log10,
        threshold=float(threshold),
        pruned_fraction=count / total,
        rmse_before=net.rmse(x_test, y_test),
        rmse_after=prune(net, threshold).rmse(x_test, y_test),
        n_pruned=count,
        n_weights=total,
    )
