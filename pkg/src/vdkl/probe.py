"""
Numerical probes of prior x likelihood mass under the log-uniform prior.

Two regions are examined: the annulus ``delta <= |w| <= delta0`` around the
origin, and right/left tails ``[k, K]`` / ``[-K, -k]`` for one-observation
logistic regression.  Every integral is evaluated after substituting
``t = log|w|`` so that the prior ``C/|w| dw`` becomes the flat measure
``C dt``; a divergent mass then shows up as a straight line in the log
coordinate.  Divergence is reported as a fitted slope, never as an
"infinite" number.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from vdkl.errors import DomainError, InsufficientGridError, QuadratureError

QUAD_EPSREL = 1e-10
QUAD_LIMIT = 200
INF_SAMPLES = 1001


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@dataclass(frozen=True)
class Likelihood1D:
    """Likelihood of the data as a function of one weight ``w``."""

    eval: Callable[[float], float]
    label: str = "likelihood"

    def __call__(self, w):
        return self.eval(w)


def logistic_likelihood(x: float = 1.0, y: int = 1) -> Likelihood1D:
    """p(y | x, w) for a single observation, y in {0, 1}."""
    sign = 1.0 if y == 1 else -1.0
    return Likelihood1D(lambda w: sigmoid(sign * x * w), f"logistic(x={x:g}, y={y})")


def gaussian_likelihood(y: float = 0.0, scale: float = 1.0) -> Likelihood1D:
    """N(y; w, scale^2) as a function of w."""
    norm = 1.0 / (scale * math.sqrt(2.0 * math.pi))
    return Likelihood1D(
        lambda w: norm * math.exp(-0.5 * ((y - w) / scale) ** 2), f"gaussian(y={y:g}, scale={scale:g})"
    )


def constant_likelihood(value: float = 1.0) -> Likelihood1D:
    return Likelihood1D(lambda w: value, f"constant({value:g})")


@dataclass
class IntervalMassReport:
    lo: float
    hi: float
    estimate: float
    lower_bound: float | None
    abs_err: float
    prior_c: float
    label: str = ""
    notes: list = field(default_factory=list)

    def as_row(self, slope=None):
        return {
            "lo": self.lo,
            "hi": self.hi,
            "estimate": self.estimate,
            "lower_bound": self.lower_bound if self.lower_bound is not None else "",
            "abs_err": self.abs_err,
            "slope": "" if slope is None else slope,
        }


def _quad_log(integrand, t_lo, t_hi):
    with np.errstate(over="ignore"):
        value, err, info = integrate.quad(
            integrand, t_lo, t_hi, epsabs=0.0, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT, full_output=True
        )[:3]
    if info.get("last", 0) >= QUAD_LIMIT or not math.isfinite(value):
        raise QuadratureError(f"quadrature did not converge on [{t_lo}, {t_hi}]")
    return value, err


def interval_mass(lik: Likelihood1D, lo: float, hi: float, prior_c: float = 1.0):
    """int_lo^hi C/|w| lik(w) dw for an interval on one side of the origin.

    Returns ``(estimate, abs_err)``.
    """
    if not (lo < hi):
        raise DomainError(f"need lo < hi, got [{lo}, {hi}]")
    if lo < 0 < hi or lo == 0 or hi == 0:
        raise DomainError("interval must not touch the origin; use origin_mass")
    sign = 1.0 if lo > 0 else -1.0
    t_lo, t_hi = math.log(min(abs(lo), abs(hi))), math.log(max(abs(lo), abs(hi)))
    value, err = _quad_log(lambda t: prior_c * lik(sign * math.exp(t)), t_lo, t_hi)
    return value, err


def origin_mass(lik: Likelihood1D, delta: float, delta0: float, prior_c: float = 1.0) -> IntervalMassReport:
    """Mass of C/|w| * lik(w) on the annulus delta <= |w| <= delta0.

    The lower bound ``2 C r log(delta0/delta)`` uses ``r``, the smallest
    likelihood value seen on a dense log-spaced sample of both halves of the
    annulus.  Continuity of ``lik`` at 0 cannot be proven by sampling; the
    report carries a note saying so.
    """
    if not (0 < delta < delta0):
        raise DomainError(f"need 0 < delta < delta0, got delta={delta}, delta0={delta0}")
    t_lo, t_hi = math.log(delta), math.log(delta0)
    grid = np.exp(np.linspace(t_lo, t_hi, INF_SAMPLES))
    samples = [lik(w) for w in grid] + [lik(-w) for w in grid]
    r = min(samples)
    if r <= 0:
        raise DomainError("likelihood vanishes on the annulus; the origin probe needs lik > 0 near 0")
    value, err = _quad_log(lambda t: prior_c * (lik(math.exp(t)) + lik(-math.exp(t))), t_lo, t_hi)
    return IntervalMassReport(
        lo=delta,
        hi=delta0,
        estimate=value,
        lower_bound=2.0 * prior_c * r * math.log(delta0 / delta),
        abs_err=err,
        prior_c=prior_c,
        label=lik.label,
        notes=["continuity of the likelihood at 0 is assumed, not verified"],
    )


def logistic_tail_lower_bound(k: float, K: float, prior_c: float = 1.0) -> float:
    """C (log K - log k) / (1 + exp(-k)): the likelihood is at least sigmoid(k) on [k, K]."""
    if not (0 < k <= K):
        raise DomainError(f"need 0 < k <= K, got k={k}, K={K}")
    return prior_c * (math.log(K) - math.log(k)) / (1.0 + math.exp(-k))


def logistic_tail_mass(k: float, K: float, prior_c: float = 1.0, side: str = "right") -> IntervalMassReport:
    """Tail mass for one logistic observation.

    ``side="right"`` integrates over [k, K] with observation (x=1, y=1);
    ``side="left"`` over [-K, -k] with (x=-1, y=1).  Both share the same
    lower bound.
    """
    if not (0 < k < K < math.inf):
        raise DomainError(f"need 0 < k < K < inf, got k={k}, K={K}")
    if side == "right":
        lik, lo, hi = logistic_likelihood(1.0, 1), k, K
    elif side == "left":
        lik, lo, hi = logistic_likelihood(-1.0, 1), -K, -k
    else:
        raise ValueError(f"side must be 'right' or 'left', got {side!r}")
    value, err = interval_mass(lik, lo, hi, prior_c)
    return IntervalMassReport(
        lo=lo,
        hi=hi,
        estimate=value,
        lower_bound=logistic_tail_lower_bound(k, K, prior_c),
        abs_err=err,
        prior_c=prior_c,
        label=lik.label,
    )


@dataclass
class DivergenceReport:
    kind: str
    slope: float
    intercept: float
    r_squared: float
    threshold: float
    monotone: bool
    divergent: bool
    reports: list

    @property
    def verdict(self) -> str:
        return "divergent" if self.divergent else "not divergent"


def divergence_report(
    reports: Sequence[IntervalMassReport], kind: str, threshold: float | None = None
) -> DivergenceReport:
    """Fit the growth of the mass estimates against the prior's log-measure.

    ``kind="tail"`` regresses estimates on ``log K`` (the log-measure of
    [k, K] grows one-for-one with it).  ``kind="origin"`` regresses on
    ``2 log(1/delta)``, the log-measure of the two-sided annulus.  In both
    cases the slope therefore estimates ``C`` times the typical likelihood
    level on the newly added region.  The verdict is "divergent" when the
    slope exceeds ``threshold`` (default ``0.1 C``) and the estimates rise
    strictly along the grid.
    """
    if len(reports) < 4:
        raise InsufficientGridError(f"need at least 4 grid points, got {len(reports)}")
    prior_c = reports[0].prior_c
    if threshold is None:
        threshold = 0.1 * prior_c
    if kind == "tail":
        xs = np.array([math.log(max(abs(r.lo), abs(r.hi))) for r in reports])
    elif kind == "origin":
        xs = np.array([2.0 * math.log(1.0 / r.lo) for r in reports])
    else:
        raise ValueError(f"kind must be 'tail' or 'origin', got {kind!r}")
    ys = np.array([r.estimate for r in reports])
    order = np.argsort(xs)
    xs, ys = xs[order], ys[order]
    slope, intercept = np.polyfit(xs, ys, 1)
    fitted = slope * xs + intercept
    ss_res = float(np.sum((ys - fitted) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    monotone = bool(np.all(np.diff(ys) > 0))
    return DivergenceReport(
        kind=kind,
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r_squared,
        threshold=threshold,
        monotone=monotone,
        divergent=bool(slope > threshold and monotone),
        reports=[reports[i] for i in order],
    )


def tail_grid(k: float = 10.0, K: float | None = None, points: int = 8, prior_c: float = 1.0, side="right"):
    """Reports at K_i = k (K/k)^(i/points), i = 1..points; default K = k e^points."""
    if K is None:
        K = k * math.exp(points)
    if not (0 < k < K):
        raise DomainError(f"need 0 < k < K, got k={k}, K={K}")
    step = math.log(K / k) / points
    return [logistic_tail_mass(k, k * math.exp(step * i), prior_c, side) for i in range(1, points + 1)]


def origin_grid(lik: Likelihood1D, delta0: float = 1e-2, delta: float | None = None, points: int = 8, prior_c=1.0):
    """Reports at delta_i = delta0 (delta/delta0)^(i/points); default delta = delta0 e^-points."""
    if delta is None:
        delta = delta0 * math.exp(-points)
    if not (0 < delta < delta0):
        raise DomainError(f"need 0 < delta < delta0, got delta={delta}, delta0={delta0}")
    step = math.log(delta0 / delta) / points
    return [origin_mass(lik, delta0 * math.exp(-step * i), delta0, prior_c) for i in range(1, points + 1)]


CSV_COLUMNS = ("lo", "hi", "estimate", "lower_bound", "abs_err", "slope")


def report_to_csv(report: DivergenceReport, header: str = "") -> str:
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    buf.write(
        f"# kind={report.kind} slope={report.slope!r} r_squared={report.r_squared!r} "
        f"verdict={report.verdict}\n"
    )
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in report.reports:
        writer.writerow(r.as_row(report.slope))
    return buf.getvalue()


def report_to_dict(report: DivergenceReport) -> dict:
    return {
        "kind": report.kind,
        "slope": report.slope,
        "intercept": report.intercept,
        "r_squared": report.r_squared,
        "threshold": report.threshold,
        "monotone": report.monotone,
        "verdict": report.verdict,
        "rows": [dict(asdict(r)) for r in report.reports],
    }
