import math

import mpmath as mp
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vdkl.errors import DomainError, InsufficientGridError
from vdkl.probe import (
    CSV_COLUMNS,
    constant_likelihood,
    divergence_report,
    gaussian_likelihood,
    interval_mass,
    logistic_likelihood,
    logistic_tail_lower_bound,
    logistic_tail_mass,
    origin_grid,
    origin_mass,
    report_to_csv,
    report_to_dict,
    sigmoid,
    tail_grid,
)


def mp_tail(k, K, c=1.0):
    """Direct w-coordinate integral of C/w * sigmoid(w) on [k, K]."""
    return float(c * mp.quad(lambda w: 1 / (w * (1 + mp.exp(-w))), [k, 2 * k, K]))


class TestSigmoid:
    @given(st.floats(min_value=-700, max_value=700))
    def test_symmetry(self, z):
        assert sigmoid(z) + sigmoid(-z) == pytest.approx(1.0, abs=1e-15)

    def test_extremes_do_not_overflow(self):
        assert sigmoid(-1000.0) == 0.0
        assert sigmoid(1000.0) == 1.0


class TestIntervalMass:
    @pytest.mark.parametrize("k, K", [(0.1, 1.0), (1.0, 7.0), (10.0, 1e4)])
    def test_tail_against_direct_quadrature(self, k, K):
        est, err = interval_mass(logistic_likelihood(), k, K)
        assert est == pytest.approx(mp_tail(k, K), rel=1e-10)
        assert err < 1e-8

    def test_left_tail_mirrors_right(self):
        right = logistic_tail_mass(2.0, 50.0, side="right")
        left = logistic_tail_mass(2.0, 50.0, side="left")
        assert left.estimate == pytest.approx(right.estimate, rel=1e-12)
        assert (left.lo, left.hi) == (-50.0, -2.0)

    def test_gaussian_against_direct_quadrature(self):
        lik = gaussian_likelihood(0.5, 1.0)
        est, _ = interval_mass(lik, 0.2, 4.0, prior_c=2.0)
        ref = mp.quad(lambda w: 2.0 / w * mp.npdf(0.5, w, 1.0), [0.2, 4.0])
        assert est == pytest.approx(float(ref), rel=1e-10)

    @pytest.mark.parametrize("lo, hi", [(1.0, 1.0), (2.0, 1.0), (-1.0, 1.0), (0.0, 1.0)])
    def test_rejects_bad_intervals(self, lo, hi):
        with pytest.raises(DomainError):
            interval_mass(constant_likelihood(), lo, hi)


class TestOriginMass:
    @pytest.mark.parametrize("delta, delta0", [(1e-4, 1e-2), (1e-9, 1.0), (0.5, 0.9)])
    def test_constant_likelihood_is_two_sided_log_measure(self, delta, delta0):
        rep = origin_mass(constant_likelihood(1.0), delta, delta0, prior_c=1.5)
        assert rep.estimate == pytest.approx(2 * 1.5 * math.log(delta0 / delta), rel=1e-12)
        assert rep.lower_bound == pytest.approx(rep.estimate, rel=1e-12)

    def test_sigmoid_is_one_sided_log_measure(self):
        # sigmoid(w) + sigmoid(-w) = 1, so the annulus mass is C log(delta0/delta)
        rep = origin_mass(logistic_likelihood(), 1e-6, 1e-2)
        assert rep.estimate == pytest.approx(math.log(1e4), rel=1e-12)

    def test_lower_bound_holds(self):
        for lik in (logistic_likelihood(), gaussian_likelihood(0.0), gaussian_likelihood(1.0)):
            rep = origin_mass(lik, 1e-5, 0.5)
            assert rep.lower_bound <= rep.estimate
            assert rep.notes

    def test_vanishing_likelihood_rejected(self):
        with pytest.raises(DomainError):
            origin_mass(constant_likelihood(0.0), 1e-3, 1e-2)

    @pytest.mark.parametrize("delta, delta0", [(0.0, 1.0), (1.0, 1.0), (2.0, 1.0)])
    def test_rejects_bad_radii(self, delta, delta0):
        with pytest.raises(DomainError):
            origin_mass(constant_likelihood(), delta, delta0)


class TestLowerBound:
    def test_closed_form(self):
        assert logistic_tail_lower_bound(1.0, math.e) == pytest.approx(1.0 / (1.0 + math.exp(-1.0)))

    # the relative gap is about exp(-k); past k ~ 35 it drops below double precision
    @given(st.floats(min_value=0.01, max_value=20.0), st.floats(min_value=1.01, max_value=1e4))
    @settings(max_examples=40)
    def test_below_mass(self, k, ratio):
        rep = logistic_tail_mass(k, k * ratio)
        assert rep.estimate > rep.lower_bound

    def test_k_equals_K_gives_zero_bound(self):
        assert logistic_tail_lower_bound(3.0, 3.0) == 0.0

    def test_tail_mass_rejects_k_equals_K(self):
        with pytest.raises(DomainError):
            logistic_tail_mass(3.0, 3.0)


class TestDivergenceReport:
    def test_tail_slope_is_c(self):
        for c in (0.5, 1.0, 3.0):
            rep = divergence_report(tail_grid(10.0, points=8, prior_c=c), "tail")
            assert rep.slope == pytest.approx(c, rel=1e-6)
            assert rep.verdict == "divergent"
            assert rep.r_squared > 0.999999

    def test_origin_slopes(self):
        sig = divergence_report(origin_grid(logistic_likelihood()), "origin")
        const = divergence_report(origin_grid(constant_likelihood()), "origin")
        gauss = divergence_report(origin_grid(gaussian_likelihood(0.0)), "origin")
        assert sig.slope == pytest.approx(0.5, rel=1e-9)
        assert const.slope == pytest.approx(1.0, rel=1e-9)
        # N(0; w, 1) is flat near w = 0 at height 1/sqrt(2 pi)
        assert gauss.slope == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-3)
        assert all(r.verdict == "divergent" for r in (sig, const, gauss))

    def test_converging_mass_not_divergent(self):
        # a likelihood vanishing at the origin gives a bounded annulus mass
        lik = gaussian_likelihood(0.0, 1.0)
        vanishing = type(lik)(lambda w: abs(w) * lik(w), "w * gaussian")
        rep = divergence_report(origin_grid(vanishing, 1e-2, points=8), "origin")
        assert rep.verdict == "not divergent"

    def test_needs_four_points(self):
        with pytest.raises(InsufficientGridError):
            divergence_report(tail_grid(10.0, points=3), "tail")

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            divergence_report(tail_grid(10.0, points=4), "sideways")


class TestSerialisation:
    def test_csv_layout(self):
        rep = divergence_report(tail_grid(10.0, points=4), "tail")
        text = report_to_csv(rep, "seed=0")
        lines = text.splitlines()
        assert lines[0] == "# seed=0"
        assert "verdict=divergent" in lines[1]
        assert lines[2] == ",".join(CSV_COLUMNS)
        assert len(lines) == 3 + 4

    def test_dict_mirrors_rows(self):
        rep = divergence_report(origin_grid(logistic_likelihood(), points=5), "origin")
        doc = report_to_dict(rep)
        assert doc["verdict"] == "divergent"
        assert len(doc["rows"]) == 5
        assert doc["rows"][0]["estimate"] == rep.reports[0].estimate
