"""
Exact KL divergence between N(mu, sigma^2) and the log-uniform prior C/|w|.

The divergence depends on the Gaussian only through the reduced parameter
``u = mu^2 / (2 sigma^2)``::

    KL(u) = -0.5 log(2 pi e) - log C + 0.5 (log 2 + S(u))
    S(u)  = exp(-u) sum_k u^k / k! * psi(1/2 + k)

``S(u)`` is the mean of psi(1/2 + K) for K ~ Poisson(u).  Its derivative is
``2 D+(sqrt(u)) / sqrt(u)``, so ``dKL/du = D+(sqrt(u)) / sqrt(u)`` (1 at u = 0).

Evaluation regimes for S(u):

* ``u <= switch_u``: forward sum written as
  ``psi(1/2) + exp(-u) sum_{k>=1} u^k/k! (psi(1/2+k) - psi(1/2))``; every
  summand is positive, which keeps the value strictly increasing in u even
  when u is a few ulps above zero.
* ``switch_u < u <= asymptotic_u``: Poisson weights in log space, summed
  outward from the mode ``floor(u)`` until tail bounds certify ``tol``.
* ``u > asymptotic_u``: ``log u - sum_n (2n-1)!! / (n 2^n u^n)``.

The prior constant C only shifts the value by ``-log C``; it never enters a
gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from vdkl.errors import ConvergenceError, DomainError
from vdkl.specfun import EULER_GAMMA, dawson, digamma, expint_ei

LOG_2PI_E = math.log(2.0 * math.pi * math.e)
LOG2 = math.log(2.0)
PSI_HALF = -EULER_GAMMA - 2.0 * LOG2


@dataclass(frozen=True)
class SeriesConfig:
    tol: float = 1e-12
    max_terms: int = 10_000
    switch_u: float = 25.0
    asymptotic_u: float = 1e3
    u_max: float = 1e12
    grad_series_u: float = 1.0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not self.switch_u > 0:
            raise ValueError("switch_u must be positive")
        if self.max_terms < 1:
            raise ValueError("max_terms must be >= 1")


DEFAULT_SERIES = SeriesConfig()


@dataclass(frozen=True)
class MeanVarParams:
    mu: float
    sigma2: float

    def __post_init__(self):
        if not math.isfinite(self.mu):
            raise ValueError(f"mu must be finite, got {self.mu!r}")
        if not (math.isfinite(self.sigma2) and self.sigma2 > 0):
            raise ValueError(f"sigma2 must be positive and finite, got {self.sigma2!r}")


@dataclass(frozen=True)
class MultiplicativeParams:
    """q(w) = N(theta, alpha * theta^2), i.e. w = theta * eps with eps ~ N(1, alpha)."""

    theta: float
    alpha: float

    def __post_init__(self):
        if not math.isfinite(self.theta):
            raise ValueError(f"theta must be finite, got {self.theta!r}")
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha!r}")


@dataclass(frozen=True)
class AdditiveParams:
    """q(w) = N(theta, exp(2 * log_sigma))."""

    theta: float
    log_sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.theta) and math.isfinite(self.log_sigma)):
            raise ValueError("theta and log_sigma must be finite")


@dataclass(frozen=True)
class KlEvaluation:
    u: float
    value: float
    grad_u: float


def _check_c(c):
    if not (math.isfinite(c) and c > 0):
        raise DomainError(f"prior constant C must be positive and finite, got {c!r}")


def _check_u(u, cfg):
    if not math.isfinite(u) or u < 0:
        raise DomainError(f"u must be finite and >= 0, got {u!r}")
    if u > cfg.u_max:
        raise DomainError(f"u={u!r} exceeds the supported range (u_max={cfg.u_max})")


def reduced_u(params: MeanVarParams) -> float:
    """u = mu^2 / (2 sigma^2)."""
    return params.mu * params.mu / (2.0 * params.sigma2)


# --------------------------------------------------------------------------
# Poisson-weighted digamma mean  E[psi(a + K)],  K ~ Poisson(u)


def _poisson_digamma_forward(u, a, cfg):
    psi_a = digamma(a)
    if u == 0.0:
        return psi_a
    term = 1.0  # u^k / k!
    harmonic = 0.0  # psi(a + k) - psi(a)
    total = 0.0
    scale = math.exp(-u)
    for k in range(1, cfg.max_terms + 1):
        term *= u / k
        harmonic += 1.0 / (a + k - 1)
        contrib = term * harmonic
        total += contrib
        # once k + 1 >= 2u the term ratio is <= 1/2 and the tail is <= 3 * contrib
        if k + 1 >= 2.0 * u and 3.0 * contrib * scale < 1e-3 * cfg.tol:
            return psi_a + scale * total
    raise ConvergenceError(f"Poisson-digamma series did not converge at u={u}")


def _log_poisson(k, u, log_u):
    return -u + k * log_u - math.lgamma(k + 1.0)


def _poisson_digamma_centered(u, a, cfg):
    # Summed as psi(a + k0) + sum_k w_k (psi(a + k) - psi(a + k0)).  The
    # log-space weights carry a common rounding error of order
    # lgamma(k) * eps; in this form it only scales the small differences.
    log_u = math.log(u)
    k0 = int(math.floor(u))
    psi0 = digamma(a + k0)
    psi_a = digamma(a)
    total = 0.0
    used = 1

    # upward from the mode
    k, diff = k0, 0.0
    while True:
        diff += 1.0 / (a + k)
        k += 1
        weight = math.exp(_log_poisson(k, u, log_u))
        total += weight * diff
        used += 1
        ratio = u / (k + 1.0)
        if ratio < 1.0:
            # the difference grows by < 1/(a+k) per step
            bound = weight * (diff * ratio / (1.0 - ratio) + ratio / ((1.0 - ratio) ** 2 * (a + k)))
            if bound < 1e-3 * cfg.tol:
                break
        if used > cfg.max_terms:
            raise ConvergenceError(f"centered Poisson sum did not converge at u={u}")

    # downward from the mode
    k, diff = k0, 0.0
    while k > 0:
        k -= 1
        diff -= 1.0 / (a + k)
        weight = math.exp(_log_poisson(k, u, log_u))
        total += weight * diff
        used += 1
        ratio = k / u
        # |psi(a + j) - psi0| <= psi0 - psi(a) for j <= k
        bound = weight * (psi0 - psi_a) * ratio / (1.0 - ratio)
        if bound < 1e-3 * cfg.tol:
            break
        if used > cfg.max_terms:
            raise ConvergenceError(f"centered Poisson sum did not converge at u={u}")
    return psi0 + total


def _half_digamma_asymptotic(u, cfg):
    # E[psi(1/2 + K)] ~ log u - sum_n (2n-1)!! / (n 2^n u^n)
    z = 0.5 / u
    coef = 1.0  # (2n-1)!! z^n
    total = 0.0
    prev = math.inf
    for n in range(1, cfg.max_terms + 1):
        coef *= (2 * n - 1) * z
        term = coef / n
        if term >= prev:
            break
        total += term
        if term < 1e-3 * cfg.tol:
            return math.log(u) - total
        prev = term
    raise ConvergenceError(f"asymptotic expansion not accurate enough at u={u}")


def poisson_digamma_mean(u: float, a: float = 0.5, cfg: SeriesConfig = DEFAULT_SERIES) -> float:
    """E[psi(a + K)] for K ~ Poisson(u)."""
    _check_u(u, cfg)
    if u <= cfg.switch_u:
        return _poisson_digamma_forward(u, a, cfg)
    if a == 0.5 and u > cfg.asymptotic_u:
        return _half_digamma_asymptotic(u, cfg)
    return _poisson_digamma_centered(u, a, cfg)


# --------------------------------------------------------------------------
# KL value and gradients


def kl_value(u: float, c: float = 1.0, cfg: SeriesConfig = DEFAULT_SERIES) -> float:
    """KL(N(mu, sigma^2) || C/|w|) as a function of u = mu^2/(2 sigma^2)."""
    _check_c(c)
    s = poisson_digamma_mean(float(u), 0.5, cfg)
    return -0.5 * LOG_2PI_E - math.log(c) + 0.5 * (LOG2 + s)


def kl_grad_u(u: float, cfg: SeriesConfig = DEFAULT_SERIES) -> float:
    """dKL/du = D+(sqrt(u)) / sqrt(u), equal to 1 at u = 0.

    Near the origin the equivalent series
    ``0.5 exp(-u) sum_k u^k / (k! (1/2 + k))`` avoids the 0/0 form.
    """
    u = float(u)
    _check_u(u, cfg)
    if u <= cfg.grad_series_u:
        term = 1.0
        total = 2.0
        for k in range(1, cfg.max_terms + 1):
            term *= u / k
            contrib = term / (0.5 + k)
            total += contrib
            if contrib < 1e-3 * cfg.tol:
                return 0.5 * math.exp(-u) * total
        raise ConvergenceError(f"gradient series did not converge at u={u}")
    r = math.sqrt(u)
    return dawson(r) / r


def kl_evaluate(u: float, c: float = 1.0, cfg: SeriesConfig = DEFAULT_SERIES) -> KlEvaluation:
    return KlEvaluation(u=u, value=kl_value(u, c, cfg), grad_u=kl_grad_u(u, cfg))


def kl_grad_mean_var(params: MeanVarParams, cfg: SeriesConfig = DEFAULT_SERIES):
    """Return (dKL/dmu, dKL/dsigma2)."""
    g = kl_grad_u(reduced_u(params), cfg)
    mu, s2 = params.mu, params.sigma2
    return g * mu / s2, -g * mu * mu / (2.0 * s2 * s2)


def kl_multiplicative(
    params: MultiplicativeParams, c: float = 1.0, cfg: SeriesConfig = DEFAULT_SERIES
) -> KlEvaluation:
    """KL for q(w) = N(theta, alpha theta^2); depends on alpha alone (u = 1/alpha)."""
    return kl_evaluate(1.0 / params.alpha, c, cfg)


def kl_multiplicative_grad(params: MultiplicativeParams, cfg: SeriesConfig = DEFAULT_SERIES):
    """Return (dKL/dtheta, dKL/dalpha); the first is identically zero."""
    alpha = params.alpha
    return 0.0, -kl_grad_u(1.0 / alpha, cfg) / (alpha * alpha)


def kl_additive(params: AdditiveParams, c: float = 1.0, cfg: SeriesConfig = DEFAULT_SERIES):
    """KL for q(w) = N(theta, sigma^2) with free (theta, log_sigma).

    Returns ``(KlEvaluation, (dKL/dtheta, dKL/dlog_sigma))``.
    """
    inv_var = math.exp(-2.0 * params.log_sigma)
    u = 0.5 * params.theta * params.theta * inv_var
    ev = kl_evaluate(u, c, cfg)
    return ev, (ev.grad_u * params.theta * inv_var, -2.0 * u * ev.grad_u)


# --------------------------------------------------------------------------
# vectorised evaluation for the network code
#
# Same regimes and formulas as the scalar routines above, evaluated on whole
# arrays at once; they agree with the scalar path to ~1e-13.

_HALF_HARMONIC = None


def _half_harmonic_table(n):
    # psi(1/2 + k) - psi(1/2) for k = 0..n-1
    global _HALF_HARMONIC
    if _HALF_HARMONIC is None or _HALF_HARMONIC.size < n:
        size = max(n, 4096)
        steps = 1.0 / (0.5 + np.arange(size - 1))
        _HALF_HARMONIC = np.concatenate([[0.0], np.cumsum(steps)])
    return _HALF_HARMONIC[:n]


def _series_small_vec(u, n_terms):
    k = np.arange(1, n_terms + 1)
    terms = np.cumprod(u[:, None] / k[None, :], axis=1)
    h = _half_harmonic_table(n_terms + 1)[1:]
    return PSI_HALF + np.exp(-u) * (terms @ h)


def _series_centered_vec(u):
    width = int(np.ceil(15.0 * np.sqrt(u.max()) + 40))
    k0 = np.floor(u).astype(int)
    ks = k0[:, None] + np.arange(-width, width + 1)[None, :]
    valid = ks >= 0
    ks = np.where(valid, ks, 0)
    logp = -u[:, None] + ks * np.log(u)[:, None] - gammaln(ks + 1.0)
    weights = np.where(valid, np.exp(logp), 0.0)
    table = _half_harmonic_table(int(ks.max()) + 1)
    # differences from the mode, as in the scalar path
    diff = table[ks] - table[k0][:, None]
    return PSI_HALF + table[k0] + np.sum(weights * diff, axis=1)


def _series_asymptotic_vec(u):
    z = 0.5 / u
    total = np.zeros_like(u)
    coef = np.ones_like(u)
    for n in range(1, 40):
        coef = coef * (2 * n - 1) * z
        total += coef / n
    return np.log(u) - total


def _check_u_array(u, cfg):
    if u.size and (not np.all(np.isfinite(u)) or u.min() < 0):
        raise DomainError("u must be finite and >= 0")
    if u.size and u.max() > cfg.u_max:
        raise DomainError(f"u={u.max()!r} exceeds the supported range (u_max={cfg.u_max})")


def kl_value_array(u, c: float = 1.0, cfg: SeriesConfig = DEFAULT_SERIES) -> np.ndarray:
    """Elementwise :func:`kl_value` for an array of u."""
    _check_c(c)
    u = np.asarray(u, dtype=float)
    flat = u.ravel()
    _check_u_array(flat, cfg)
    s = np.empty_like(flat)
    small = flat <= cfg.switch_u
    big = flat > cfg.asymptotic_u
    mid = ~small & ~big
    if small.any():
        n_terms = int(np.ceil(2.0 * flat[small].max() + 80))
        s[small] = _series_small_vec(flat[small], n_terms)
    if mid.any():
        s[mid] = _series_centered_vec(flat[mid])
    if big.any():
        s[big] = _series_asymptotic_vec(flat[big])
    return (-0.5 * LOG_2PI_E - math.log(c) + 0.5 * (LOG2 + s)).reshape(u.shape)


def _dawson_vec(x):
    out = np.empty_like(x)
    small = x <= 6.0
    if small.any():
        xs = x[small]
        n = np.arange(1, 161)
        powers = xs[:, None] * np.cumprod((xs * xs)[:, None] / n[None, :], axis=1)
        total = xs + powers @ (1.0 / (2 * n + 1))
        out[small] = np.exp(-xs * xs) * total
    if (~small).any():
        xl = x[~small]
        z = 0.5 / (xl * xl)
        coef = np.ones_like(xl)
        total = np.ones_like(xl)
        for n in range(1, 36):
            coef = coef * (2 * n - 1) * z
            total += coef
        out[~small] = total / (2.0 * xl)
    return out


def kl_grad_u_array(u, cfg: SeriesConfig = DEFAULT_SERIES) -> np.ndarray:
    """Elementwise :func:`kl_grad_u` for an array of u."""
    u = np.asarray(u, dtype=float)
    flat = u.ravel()
    _check_u_array(flat, cfg)
    out = np.empty_like(flat)
    small = flat <= cfg.grad_series_u
    if small.any():
        us = flat[small]
        k = np.arange(1, 41)
        terms = np.cumprod(us[:, None] / k[None, :], axis=1)
        out[small] = 0.5 * np.exp(-us) * (2.0 + terms @ (1.0 / (0.5 + k)))
    if (~small).any():
        r = np.sqrt(flat[~small])
        out[~small] = _dawson_vec(r) / r
    return out.reshape(u.shape)


# --------------------------------------------------------------------------
# independent references


def kl_series_oracle(u: float, c: float = 1.0, terms: int = 200) -> float:
    """Naive fixed-length summation of the KL series, for cross-checking.

    Each term is formed as exp(-u) u^k / k! * psi(1/2 + k) with psi taken
    straight from :func:`digamma`; no regime switching, no tail control.
    """
    if u < 0 or u > 30:
        raise DomainError(f"kl_series_oracle supports 0 <= u <= 30, got {u!r}")
    if terms < 1:
        raise ValueError("terms must be >= 1")
    _check_c(c)
    total = 0.0
    # k! overflows a double past 170; for u <= 30 those terms are below 1e-50
    for k in range(min(terms, 171)):
        weight = math.exp(-u) * u**k / math.factorial(k) if k else math.exp(-u)
        total += weight * digamma(0.5 + k)
    return -0.5 * LOG_2PI_E - math.log(c) + 0.5 * (LOG2 + total)


def kl_mc_oracle(params: MeanVarParams, c: float = 1.0, n: int = 1_000_000, seed: int = 0):
    """Monte Carlo estimate of E_q[log q(w) - log(C/|w|)].

    Returns ``(estimate, stderr)``.  Draws are reproducible for a fixed seed.
    """
    if n < 1000:
        raise ValueError("n must be >= 1000")
    _check_c(c)
    rng = np.random.default_rng(seed)
    mu, sigma = params.mu, math.sqrt(params.sigma2)
    w = rng.normal(mu, sigma, size=n)
    zero = w == 0.0
    while zero.any():
        w[zero] = rng.normal(mu, sigma, size=int(zero.sum()))
        zero = w == 0.0
    log_q = -0.5 * math.log(2.0 * math.pi * params.sigma2) - (w - mu) ** 2 / (2.0 * params.sigma2)
    sample = log_q - math.log(c) + np.log(np.abs(w))
    return float(sample.mean()), float(sample.std(ddof=1) / math.sqrt(n))


def logchisq_mean(lam: float, nu: int, cfg: SeriesConfig = DEFAULT_SERIES) -> float:
    """E[log v] for v ~ noncentral chi^2 with nu dof and noncentrality lam.

    Uses the Poisson(lam/2) mixture of central chi^2(nu + 2k) laws, each of
    which has E[log v] = psi(nu/2 + k) + log 2.
    """
    if not (math.isfinite(lam) and lam >= 0):
        raise DomainError(f"lam must be finite and >= 0, got {lam!r}")
    if int(nu) != nu or nu < 1:
        raise DomainError(f"nu must be a positive integer, got {nu!r}")
    return poisson_digamma_mean(0.5 * lam, 0.5 * nu, cfg) + LOG2


def verify_appendix_identities(u: float, tol: float = 1e-16, max_terms: int = 10_000) -> list:
    """Residuals of two exponential-generating-function identities at u.

    (a) ``sum_{k>=1} u^k H_k / k! = e^u (gamma + log u - Ei(-u))``
    (b) ``sum_{k>=1} u^k / (k! k) = Ei(u) - gamma - log u``

    The left-hand sides are summed directly; returns ``[|a|, |b|]``.
    """
    if not (0 < u <= 30):
        raise DomainError(f"u must lie in (0, 30], got {u!r}")
    term = 1.0
    harmonic = 0.0
    lhs_h = 0.0
    lhs_e = 0.0
    for k in range(1, max_terms + 1):
        term *= u / k
        harmonic += 1.0 / k
        a = term * harmonic
        b = term / k
        lhs_h += a
        lhs_e += b
        if k > 2 * u and a <= tol * lhs_h and b <= tol * lhs_e:
            break
    else:
        raise ConvergenceError(f"identity series did not converge at u={u}")
    log_u = math.log(u)
    rhs_h = math.exp(u) * (EULER_GAMMA + log_u - expint_ei(-u))
    rhs_e = expint_ei(u) - EULER_GAMMA - log_u
    return [abs(lhs_h - rhs_h), abs(lhs_e - rhs_e)]
