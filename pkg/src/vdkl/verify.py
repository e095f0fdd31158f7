"""
Oracle suite run by ``vdkl verify``.

Each check compares a library routine against an independent reference
(a recurrence, a quadrature, a naive series, a Monte Carlo estimate or a
finite difference) and records the worst discrepancy next to its
tolerance.  ``digamma_fn`` lets tests swap in a perturbed digamma to make
sure the digamma checks actually bite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, special

from vdkl.kl import (
    LOG2,
    MeanVarParams,
    kl_grad_u,
    kl_mc_oracle,
    kl_series_oracle,
    kl_value,
    logchisq_mean,
    verify_appendix_identities,
)
from vdkl.specfun import EULER_GAMMA, dawson, digamma, expint_ei


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    error: float
    tolerance: float
    detail: str = ""

    def as_row(self):
        return {
            "check": self.name,
            "status": "PASS" if self.passed else "FAIL",
            "error": self.error,
            "tolerance": self.tolerance,
            "detail": self.detail,
        }


def _result(name, error, tol, detail=""):
    return CheckResult(name, bool(error <= tol), float(error), float(tol), detail)


DIGAMMA_GRID = np.concatenate([np.linspace(0.05, 5.0, 100), np.geomspace(5.0, 1e4, 60)])


def check_digamma_reference(psi):
    err = max(abs(psi(x) - special.psi(x)) / max(1.0, abs(special.psi(x))) for x in DIGAMMA_GRID)
    return _result("digamma_reference", err, 1e-13, "relative error vs scipy.special.psi")


def check_digamma_recurrence(psi):
    err = max(abs(psi(x + 1.0) - psi(x) - 1.0 / x) for x in DIGAMMA_GRID)
    return _result("digamma_recurrence", err, 1e-12, "psi(x+1) - psi(x) = 1/x")


def check_digamma_harmonic(psi):
    # psi(1/2 + k) = psi(1/2) + 2 sum_{j<k} 1/(2j+1), psi(1/2) = -gamma - 2 log 2
    psi_half = -EULER_GAMMA - 2.0 * LOG2
    err, acc = 0.0, 0.0
    for k in range(0, 60):
        err = max(err, abs(psi(0.5 + k) - (psi_half + acc)))
        acc += 2.0 / (2 * k + 1)
    return _result("digamma_harmonic", err, 1e-12, "half-integer values vs harmonic sums")


def check_dawson_quadrature():
    err = 0.0
    for x in (0.1, 0.5, 1.0, 2.0, 3.5, 5.0, 8.0):
        ref = integrate.quad(lambda t: math.exp(t * t - x * x), 0.0, x, epsabs=0.0, epsrel=1e-13)[0]
        err = max(err, abs(dawson(x) - ref) / ref)
    return _result("dawson_quadrature", err, 1e-10, "relative error vs direct quadrature")


def check_dawson_ode():
    # D'(x) = 1 - 2 x D(x), checked with a 4th-order central difference
    err, h = 0.0, 1e-3
    for x in np.linspace(0.2, 10.0, 50):
        fd = (-dawson(x + 2 * h) + 8 * dawson(x + h) - 8 * dawson(x - h) + dawson(x - 2 * h)) / (12 * h)
        err = max(err, abs(fd - (1.0 - 2.0 * x * dawson(x))))
    return _result("dawson_ode", err, 1e-9, "D' = 1 - 2 x D")


def check_expint_reference():
    xs = [-25.0, -5.0, -1.5, -0.5, 0.1, 0.5, 1.0, 5.0, 25.0]
    err = max(abs(expint_ei(x) - special.expi(x)) / abs(special.expi(x)) for x in xs)
    return _result("expint_reference", err, 1e-12, "relative error vs scipy.special.expi")


def check_series_identities():
    err = max(max(verify_appendix_identities(u)) for u in (0.1, 0.5, 1.0, 2.0, 5.0, 10.0))
    return _result("series_identities", err, 1e-9, "harmonic-sum and Ei-series closed forms")


def check_logchisq_exact():
    err = abs(logchisq_mean(0.0, 1) - (special.psi(0.5) + LOG2))
    return _result("logchisq_exact", err, 1e-10, "E log chi^2_1 = psi(1/2) + log 2")


def check_logchisq_mc(seed):
    rng = np.random.default_rng(seed)
    n, lam = 1_000_000, 2.0
    z = rng.standard_normal(n) + math.sqrt(lam)
    samples = np.log(z * z)
    mean, se = samples.mean(), samples.std(ddof=1) / math.sqrt(n)
    z_score = abs(logchisq_mean(lam, 1) - mean) / se
    return _result("logchisq_mc", z_score, 4.0, "|exact - MC| / stderr, lambda=2, nu=1")


def check_kl_series():
    err = max(abs(kl_value(u) - kl_series_oracle(u)) for u in np.linspace(0.0, 30.0, 121))
    return _result("kl_series_oracle", err, 1e-9, "fast evaluation vs naive series")


def check_kl_mc(seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(20):
        mu = float(rng.uniform(-3.0, 3.0))
        sigma2 = float(np.exp(rng.uniform(-2.0, 1.5)))
        params = MeanVarParams(mu, sigma2)
        mean, se = kl_mc_oracle(params, n=1_000_000, seed=seed + i)
        u = mu * mu / (2.0 * sigma2)
        worst = max(worst, abs(kl_value(u) - mean) / se)
    return _result("kl_mc_triangulation", worst, 4.0, "max |exact - MC| / stderr over 20 (mu, sigma2) pairs")


def fd_grad(f, u, h=1e-5):
    """Central difference, or a second-order one-sided stencil when u < h."""
    if u < h:
        return (-3.0 * f(u) + 4.0 * f(u + h) - f(u + 2.0 * h)) / (2.0 * h)
    return (f(u + h) - f(u - h)) / (2.0 * h)


def check_kl_gradient():
    grid = np.concatenate([[0.0], np.geomspace(1e-6, 50.0, 200)])
    err = max(abs(kl_grad_u(u) - fd_grad(kl_value, u)) for u in grid)
    return _result("kl_gradient_fd", err, 1e-6, "dKL/du vs finite difference of KL")


def check_kl_monotone():
    grid = np.linspace(0.0, 50.0, 10_000)
    vals = np.array([kl_value(u) for u in grid])
    grads = np.array([kl_grad_u(u) for u in grid])
    steps = np.diff(vals)
    bad = int(np.count_nonzero(steps <= 0) + np.count_nonzero(grads <= 0))
    return _result("kl_monotone", float(bad), 0.0, "non-increasing steps or non-positive gradients")


def check_kl_origin():
    return _result("kl_grad_origin", abs(kl_grad_u(1e-10) - 1.0), 1e-5, "gradient continuous at u = 0")


DIGAMMA_CHECKS = ("digamma_reference", "digamma_recurrence", "digamma_harmonic")


def run_checks(seed: int = 0, digamma_fn: Callable[[float], float] | None = None) -> list:
    """Run every check and return the list of :class:`CheckResult`."""
    psi = digamma if digamma_fn is None else digamma_fn
    return [
        check_digamma_reference(psi),
        check_digamma_recurrence(psi),
        check_digamma_harmonic(psi),
        check_dawson_quadrature(),
        check_dawson_ode(),
        check_expint_reference(),
        check_series_identities(),
        check_logchisq_exact(),
        check_logchisq_mc(seed),
        check_kl_series(),
        check_kl_mc(seed),
        check_kl_gradient(),
        check_kl_monotone(),
        check_kl_origin(),
    ]


def perturbed_digamma(offset: float = 1e-3) -> Callable[[float], float]:
    """Test hook: digamma shifted by a constant."""
    return lambda x: digamma(x) + offset
