import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special, stats

from vdkl.errors import DomainError
from vdkl.kl import (
    AdditiveParams,
    MeanVarParams,
    MultiplicativeParams,
    SeriesConfig,
    kl_additive,
    kl_grad_mean_var,
    kl_grad_u,
    kl_grad_u_array,
    kl_mc_oracle,
    kl_multiplicative,
    kl_multiplicative_grad,
    kl_series_oracle,
    kl_value,
    kl_value_array,
    logchisq_mean,
    poisson_digamma_mean,
    reduced_u,
    verify_appendix_identities,
)
from vdkl.specfun import EULER_GAMMA, expint_ei

mp.mp.dps = 40

KL_AT_ZERO = -0.5 * math.log(2 * math.pi * math.e) + 0.5 * (math.log(2) + float(mp.digamma(0.5)))


def kummer_kl(u, c=1.0):
    """Closed form through the a-derivative of Kummer's M(a; 1/2; -u), evaluated in mpmath."""
    u = mp.mpf(u)
    d = mp.diff(lambda a: mp.hyp1f1(a, 0.5, -u), 0)
    return float(-0.5 * mp.log(mp.pi * mp.e) - mp.log(c) - 0.5 * (d + mp.euler + 2 * mp.log(2)))


def mp_grad(u):
    if u == 0:
        return 1.0
    x = mp.sqrt(mp.mpf(u))
    return float(mp.sqrt(mp.pi) / 2 * mp.exp(-x * x) * mp.erfi(x) / x)


# u values straddling every internal switch point
REGIME_U = [0.0, 1e-12, 1e-4, 0.5, 0.999, 1.0, 1.001, 3.0, 24.999, 25.0, 25.001, 80.0, 999.0, 1000.0, 1001.0, 1e5, 4.85e8]


class TestKlValue:
    @pytest.mark.parametrize("u", REGIME_U)
    def test_against_kummer_closed_form(self, u):
        assert kl_value(u) == pytest.approx(kummer_kl(u), abs=2e-12)

    def test_origin_value(self):
        # only the k = 0 summand survives at u = 0
        assert kl_value(0.0) == pytest.approx(KL_AT_ZERO, abs=1e-15)
        assert kl_value(0.0) == pytest.approx(-2.0541199559354117, abs=1e-15)

    @given(st.floats(min_value=0.0, max_value=1e6), st.floats(min_value=1e-3, max_value=1e3))
    @settings(max_examples=50)
    def test_prior_constant_shift(self, u, c):
        assert kl_value(u, c) == pytest.approx(kl_value(u) - math.log(c), abs=1e-12)

    @pytest.mark.parametrize("u", [0.0, 0.7, 9.0, 29.0])
    def test_against_naive_series(self, u):
        assert kl_value(u) == pytest.approx(kl_series_oracle(u), abs=1e-12)

    def test_large_u_behaviour(self):
        # for |mu| >> sigma, KL -> log(|mu|/sigma) - 1/2 log(2 pi e) = 1/2 log(2u) - 1/2 log(2 pi e)
        for u in (1e6, 1e9, 1e12):
            limit = 0.5 * math.log(2 * u) - 0.5 * math.log(2 * math.pi * math.e)
            assert kl_value(u) == pytest.approx(limit, abs=2.0 / u)

    def test_comparison_bound(self):
        # psi(1/2+k) < psi(1+k) = H_k - gamma for k >= 1, and the harmonic
        # generating function gives
        #   sum_k u^k/k! psi(1/2+k) < psi(1/2) + gamma + e^u (log u - Ei(-u)).
        # With -gamma in place of +gamma the inequality fails at small u.
        for u in (0.1, 0.5, 1.0, 2.0, 5.0, 10.0):
            weighted = math.exp(u) * poisson_digamma_mean(u)
            tail = math.exp(u) * (math.log(u) - expint_ei(-u))
            assert weighted < special.psi(0.5) + EULER_GAMMA + tail
        u = 0.1
        assert math.exp(u) * poisson_digamma_mean(u) > special.psi(0.5) - EULER_GAMMA + math.exp(u) * (
            math.log(u) - expint_ei(-u)
        )

    def test_regime_switches_are_seamless(self):
        cfg = SeriesConfig()
        for edge in (cfg.switch_u, cfg.asymptotic_u):
            lo, hi = kl_value(edge), kl_value(math.nextafter(edge, math.inf))
            assert abs(hi - lo) < 1e-12

    @pytest.mark.parametrize("u", [-1e-300, math.nan, math.inf, 1e13])
    def test_domain(self, u):
        with pytest.raises(DomainError):
            kl_value(u)

    @pytest.mark.parametrize("c", [0.0, -1.0, math.inf])
    def test_bad_prior_constant(self, c):
        with pytest.raises(DomainError):
            kl_value(1.0, c)


class TestKlGradient:
    @pytest.mark.parametrize("u", REGIME_U)
    def test_against_dawson_closed_form(self, u):
        assert kl_grad_u(u) == pytest.approx(mp_grad(u), rel=1e-13)

    def test_origin_value_is_one(self):
        assert kl_grad_u(0.0) == 1.0

    @given(st.floats(min_value=1e-3, max_value=5e3))
    @settings(max_examples=60)
    def test_matches_finite_difference(self, u):
        h = 1e-5 * u
        fd = (kl_value(u + h) - kl_value(u - h)) / (2 * h)
        assert kl_grad_u(u) == pytest.approx(fd, rel=1e-5, abs=1e-9)

    def test_positive_and_decreasing(self):
        g = kl_grad_u_array(np.geomspace(1e-8, 1e8, 400))
        assert np.all(g > 0)
        assert np.all(np.diff(g) < 0)

    def test_asymptote(self):
        # D+(x) ~ 1/(2x) so the gradient tends to 1/(2u)
        assert kl_grad_u(1e10) == pytest.approx(0.5e-10, rel=1e-9)


class TestArrayPaths:
    @given(st.lists(st.floats(min_value=0.0, max_value=1e9), min_size=1, max_size=40))
    @settings(max_examples=40)
    def test_match_scalar(self, us):
        arr = np.array(us)
        assert np.allclose(kl_value_array(arr), [kl_value(u) for u in us], rtol=0, atol=1e-11)
        assert np.allclose(kl_grad_u_array(arr), [kl_grad_u(u) for u in us], rtol=1e-13, atol=0)

    def test_shape_preserved(self):
        u = np.linspace(0, 40, 12).reshape(3, 4)
        assert kl_value_array(u).shape == (3, 4)
        assert kl_grad_u_array(u).shape == (3, 4)

    def test_rejects_negative(self):
        with pytest.raises(DomainError):
            kl_value_array(np.array([1.0, -0.5]))


class TestParametrisations:
    def test_reduced_u(self):
        assert reduced_u(MeanVarParams(3.0, 2.0)) == 2.25

    def test_mean_var_gradient(self):
        p = MeanVarParams(0.8, 0.3)
        dmu, ds2 = kl_grad_mean_var(p)
        h = 1e-6
        f = lambda mu, s2: kl_value(reduced_u(MeanVarParams(mu, s2)))
        assert dmu == pytest.approx((f(0.8 + h, 0.3) - f(0.8 - h, 0.3)) / (2 * h), rel=1e-7)
        assert ds2 == pytest.approx((f(0.8, 0.3 + h) - f(0.8, 0.3 - h)) / (2 * h), rel=1e-7)

    @pytest.mark.parametrize("alpha", [1e-3, 0.1, 1.0, 30.0])
    def test_multiplicative_depends_on_alpha_only(self, alpha):
        a = kl_multiplicative(MultiplicativeParams(0.2, alpha))
        b = kl_multiplicative(MultiplicativeParams(-17.0, alpha))
        assert a.u == pytest.approx(1.0 / alpha)
        assert a.value == b.value == kl_value(1.0 / alpha)
        dtheta, dalpha = kl_multiplicative_grad(MultiplicativeParams(0.2, alpha))
        h = 1e-6 * alpha
        fd = (kl_value(1 / (alpha + h)) - kl_value(1 / (alpha - h))) / (2 * h)
        assert dtheta == 0.0
        assert dalpha == pytest.approx(fd, rel=1e-6)

    def test_multiplicative_never_reaches_origin_value(self):
        for alpha in (1.0, 1e4, 1e8):
            assert kl_multiplicative(MultiplicativeParams(1.0, alpha)).value > kl_value(0.0)

    def test_additive_reaches_origin_value_at_zero_mean(self):
        ev, (dtheta, dls) = kl_additive(AdditiveParams(0.0, -2.0))
        assert ev.u == 0.0
        assert ev.value == kl_value(0.0)
        assert dtheta == 0.0 and dls == 0.0

    def test_additive_gradients(self):
        theta, ls = 0.4, -0.7
        _, (dtheta, dls) = kl_additive(AdditiveParams(theta, ls))
        f = lambda t, s: kl_additive(AdditiveParams(t, s))[0].value
        h = 1e-6
        assert dtheta == pytest.approx((f(theta + h, ls) - f(theta - h, ls)) / (2 * h), rel=1e-7)
        assert dls == pytest.approx((f(theta, ls + h) - f(theta, ls - h)) / (2 * h), rel=1e-7)

    @pytest.mark.parametrize(
        "build", [lambda: MeanVarParams(1.0, 0.0), lambda: MultiplicativeParams(1.0, -1.0), lambda: MeanVarParams(math.nan, 1.0)]
    )
    def test_invalid_params(self, build):
        with pytest.raises((DomainError, ValueError)):
            build()


class TestOracles:
    def test_mc_oracle_reproducible(self):
        p = MeanVarParams(1.0, 0.5)
        assert kl_mc_oracle(p, n=10_000, seed=3) == kl_mc_oracle(p, n=10_000, seed=3)
        assert kl_mc_oracle(p, n=10_000, seed=3) != kl_mc_oracle(p, n=10_000, seed=4)

    def test_mc_oracle_agrees(self):
        p = MeanVarParams(-1.3, 0.4)
        mean, se = kl_mc_oracle(p, n=200_000, seed=11)
        assert abs(mean - kl_value(reduced_u(p))) < 4 * se

    def test_mc_oracle_minimum_samples(self):
        with pytest.raises(ValueError):
            kl_mc_oracle(MeanVarParams(1.0, 1.0), n=10)

    def test_series_oracle_domain(self):
        with pytest.raises(DomainError):
            kl_series_oracle(31.0)


class TestLogChiSquare:
    @pytest.mark.parametrize("nu", [1, 2, 3, 7])
    def test_central(self, nu):
        # E log chi^2_nu = psi(nu/2) + log 2
        assert logchisq_mean(0.0, nu) == pytest.approx(special.psi(nu / 2) + math.log(2), abs=1e-14)

    @pytest.mark.parametrize("lam, nu", [(0.5, 1), (2.0, 1), (4.0, 3), (30.0, 2)])
    def test_against_density_quadrature(self, lam, nu):
        dist = stats.ncx2(nu, lam)
        ref = integrate.quad(lambda v: math.log(v) * dist.pdf(v), 0, np.inf, limit=400, epsabs=1e-13)[0]
        assert logchisq_mean(lam, nu) == pytest.approx(ref, abs=1e-8)

    def test_kl_link(self):
        # the KL series is 1/2 E log chi^2(2u, 1) plus constants
        for u in (0.0, 0.3, 12.0):
            via = -0.5 * math.log(2 * math.pi * math.e) + 0.5 * logchisq_mean(2 * u, 1)
            assert kl_value(u) == pytest.approx(via, abs=1e-13)

    @pytest.mark.parametrize("lam, nu", [(-1.0, 1), (1.0, 0), (1.0, 1.5)])
    def test_domain(self, lam, nu):
        with pytest.raises(DomainError):
            logchisq_mean(lam, nu)


class TestSeriesIdentities:
    @pytest.mark.parametrize("u", [0.1, 0.5, 1.0, 2.0, 5.0, 20.0])
    def test_residuals_small(self, u):
        scale = math.exp(u)
        assert max(verify_appendix_identities(u)) <= 1e-13 * max(1.0, scale)

    @pytest.mark.parametrize("u", [0.0, -1.0, 31.0])
    def test_domain(self, u):
        with pytest.raises(DomainError):
            verify_appendix_identities(u)
