"""
Scalar special functions: digamma, Dawson's integral and the exponential
integral Ei.

Each routine is self-contained (stdlib ``math`` only) and truncates its
series by a term-ratio test.  A series that has not met its tolerance after
``max_terms`` terms raises :class:`~vdkl.errors.ConvergenceError`; partial
sums are never returned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from vdkl.errors import ConvergenceError, DomainError

EULER_GAMMA = 0.57721566490153286061

# B_{2n} / (2n) for n = 1..7
_DIGAMMA_ASYMPTOTIC = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
_DIGAMMA_SHIFT = 20.0

# Below this the Maclaurin series of exp(x^2) D(x) is summed, above it the
# asymptotic expansion.  At 6 the asymptotic remainder is ~1e-16 relative.
DAWSON_SWITCH = 6.0

EXPINT_MAX_ABS = 30.0


@dataclass(frozen=True)
class AccuracySpec:
    abs_tol: float = 1e-16
    rel_tol: float = 1e-16
    max_terms: int = 10_000

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("abs_tol and rel_tol must be positive")
        if self.max_terms < 1:
            raise ValueError("max_terms must be >= 1")


DEFAULT_ACCURACY = AccuracySpec()


def _check_finite(name, x):
    if not math.isfinite(x):
        raise DomainError(f"{name}: argument must be finite, got {x!r}")


def digamma(x: float) -> float:
    """Digamma function psi(x) for real x > 0.

    The argument is shifted up to ``x >= 20`` with psi(x) = psi(x+1) - 1/x and
    the asymptotic expansion with Bernoulli coefficients is applied there.
    """
    x = float(x)
    _check_finite("digamma", x)
    if x <= 0.0:
        raise DomainError(f"digamma: x must be > 0, got {x!r}")
    shift = 0.0
    while x < _DIGAMMA_SHIFT:
        shift += 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    tail = 0.0
    for coef in reversed(_DIGAMMA_ASYMPTOTIC):
        tail = (tail + coef) * inv2
    return math.log(x) - 0.5 / x - tail - shift


def dawson(x: float, acc: AccuracySpec = DEFAULT_ACCURACY) -> float:
    """Dawson's integral D+(x) = exp(-x^2) * int_0^x exp(t^2) dt for x >= 0."""
    x = float(x)
    _check_finite("dawson", x)
    if x < 0.0:
        raise DomainError(f"dawson: x must be >= 0, got {x!r}")
    if x == 0.0:
        return 0.0
    if x <= DAWSON_SWITCH:
        return _dawson_series(x, acc)
    return _dawson_asymptotic(x, acc)


def _dawson_series(x, acc):
    # exp(x^2) D(x) = sum_n x^(2n+1) / (n! (2n+1)); all terms positive
    x2 = x * x
    power = x  # x^(2n+1) / n!
    total = x
    for n in range(1, acc.max_terms + 1):
        power *= x2 / n
        term = power / (2 * n + 1)
        total += term
        # past n >= 2x^2 the term ratio is below 1/2, so the tail is <= term
        if n >= 2.0 * x2 and term <= acc.rel_tol * total:
            return math.exp(-x2) * total
    raise ConvergenceError(f"dawson series did not converge at x={x}")


def _dawson_asymptotic(x, acc):
    # D(x) ~ 1/(2x) * sum_n (2n-1)!! / (2x^2)^n
    z = 0.5 / (x * x)
    term = 1.0
    total = 1.0
    for n in range(1, acc.max_terms + 1):
        nxt = term * (2 * n - 1) * z
        if nxt >= term:
            # optimal truncation point of the divergent expansion
            break
        term = nxt
        total += term
        if term <= acc.rel_tol * total:
            break
    else:
        raise ConvergenceError(f"dawson asymptotic did not converge at x={x}")
    return total / (2.0 * x)


def expint_ei(x: float, acc: AccuracySpec = DEFAULT_ACCURACY) -> float:
    """Exponential integral Ei(x) = -int_{-x}^inf exp(-t)/t dt, 0 < |x| <= 30."""
    x = float(x)
    _check_finite("expint_ei", x)
    if x == 0.0:
        raise DomainError("expint_ei: logarithmic singularity at x = 0")
    if abs(x) > EXPINT_MAX_ABS:
        raise DomainError(f"expint_ei: |x| must be <= {EXPINT_MAX_ABS}, got {x!r}")
    if x < -1.0:
        return -_e1_continued_fraction(-x, acc)
    return EULER_GAMMA + math.log(abs(x)) + _ei_power_sum(x, acc)


def _ei_power_sum(x, acc):
    # sum_{k>=1} x^k / (k * k!)
    power = 1.0
    total = 0.0
    for k in range(1, acc.max_terms + 1):
        power *= x / k
        term = power / k
        total += term
        if k > abs(x) and abs(term) <= acc.rel_tol * abs(total):
            return total
    raise ConvergenceError(f"Ei power series did not converge at x={x}")


def _e1_continued_fraction(t, acc):
    # modified Lentz evaluation of E1(t), t > 1
    tiny = 1e-300
    b = t + 1.0
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, acc.max_terms + 1):
        an = -float(i * i)
        b += 2.0
        d = 1.0 / (an * d + b)
        c = b + an / c
        delta = c * d
        h *= delta
        if abs(delta - 1.0) <= 1e-15:
            return h * math.exp(-t)
    raise ConvergenceError(f"E1 continued fraction did not converge at t={t}")
