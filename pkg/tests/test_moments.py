"""Affine and nonlinear moment matching against independent oracles."""

import math

import numpy as np
import pytest

from spgru.errors import DomainError, ShapeError
from spgru.families import MomentTensor
from spgru.moments import (
    DEFAULT_CONSTANTS,
    OMEGA_SIG_APPENDIX,
    OMEGA_SIG_MAIN,
    ClampStats,
    LinearLayerParams,
    NmmConstants,
    lmm,
    nmm_gamma,
    nmm_poisson,
    nmm_sigmoid_gauss,
    nmm_tanh_gauss,
)
from spgru.oracle import gamma_activation_quadrature, poisson_activation_series


def mt(m, s):
    return MomentTensor(np.atleast_1d(np.asarray(m, float)),
                        np.atleast_1d(np.asarray(s, float)))


class TestConstants:
    def test_zeta_squared_is_pi_over_8(self):
        assert abs(DEFAULT_CONSTANTS.zeta**2 - math.pi / 8) < 1e-15

    def test_nu_and_omega_values(self):
        c = DEFAULT_CONSTANTS
        assert c.nu_sig == 4 - 2 * math.sqrt(2)
        assert c.omega_sig == -math.log(math.sqrt(2) + 1)
        assert c.nu_tanh == 2 * (4 - 2 * math.sqrt(2))
        assert c.omega_tanh == -math.log(math.sqrt(2) + 1) / 2

    def test_appendix_variant_halves_omega(self):
        v = NmmConstants.appendix_variant()
        assert v.omega_sig == OMEGA_SIG_APPENDIX == OMEGA_SIG_MAIN / 2

    def test_positive_scale_required(self):
        with pytest.raises(DomainError):
            NmmConstants(c=-1.0)


class TestLmm:
    def test_scalar_example(self):
        p = LinearLayerParams(W_m=[[2.0]], W_s=[[0.5]], b_m=[1.0], b_s=[0.25])
        o = lmm(mt(3.0, 1.0), p)
        np.testing.assert_allclose(o.m, [7.0])
        np.testing.assert_allclose(o.s, [9.25])

    def test_deterministic_in_deterministic_out(self):
        p = LinearLayerParams(W_m=[[2.0]], W_s=[[0.0]], b_m=[1.0], b_s=[0.0])
        o = lmm(mt(3.0, 0.0), p)
        assert o.s[0] == 0.0

    def test_zero_weights_zero_mean(self):
        p = LinearLayerParams(W_m=[[0.0]], W_s=[[0.5]], b_m=[0.0], b_s=[0.1])
        assert lmm(mt(17.0, 2.0), p).m[0] == 0.0

    def test_shape_error(self):
        p = LinearLayerParams(W_m=np.zeros((2, 3)), W_s=np.zeros((2, 3)),
                              b_m=np.zeros(2), b_s=np.zeros(2))
        with pytest.raises(ShapeError):
            lmm(mt([1.0, 2.0], [0.0, 0.0]), p)

    def test_negative_variance_params_rejected(self):
        with pytest.raises(DomainError):
            LinearLayerParams(W_m=[[1.0]], W_s=[[-0.1]], b_m=[0.0], b_s=[0.0])

    def test_matches_direct_second_moment_algebra_500_instances(self):
        # independent oracle: Var(Wx+b) = E[W^2]E[x^2] - (E[W]E[x])^2 + Var(b)
        rng = np.random.default_rng(55)
        for _ in range(500):
            wm, ws = rng.uniform(-3, 3), rng.uniform(0, 4)
            bm, bs = rng.uniform(-2, 2), rng.uniform(0, 2)
            xm, xs = rng.uniform(-3, 3), rng.uniform(0, 4)
            p = LinearLayerParams(W_m=[[wm]], W_s=[[ws]], b_m=[bm], b_s=[bs])
            o = lmm(mt(xm, xs), p)
            mean = wm * xm + bm
            var = (ws + wm**2) * (xs + xm**2) - (wm * xm) ** 2 + bs
            assert abs(o.m[0] - mean) <= 1e-10 * max(1.0, abs(mean))
            assert abs(o.s[0] - var) <= 1e-10 * max(1.0, abs(var))

    def test_variance_nonnegative_by_construction(self):
        rng = np.random.default_rng(56)
        for _ in range(100):
            p = LinearLayerParams(
                W_m=rng.normal(size=(4, 3)),
                W_s=rng.uniform(0, 2, (4, 3)),
                b_m=rng.normal(size=4),
                b_s=rng.uniform(0, 1, 4),
            )
            o = lmm(mt(rng.normal(size=3), rng.uniform(0, 2, 3)), p)
            assert np.all(o.s >= 0)


class TestSigmoidGauss:
    def test_zero_point(self):
        o = nmm_sigmoid_gauss(mt(0.0, 0.0))
        assert o.m[0] == 0.5
        assert o.s[0] == 0.0  # deterministic input has zero output variance

    def test_symmetric_mean_at_unit_variance(self):
        o = nmm_sigmoid_gauss(mt(0.0, 1.0))
        assert abs(o.m[0] - 0.5) < 0.02

    def test_against_mc_at_3_2(self):
        rng = np.random.default_rng(77)
        x = rng.normal(3.0, math.sqrt(2.0), 10**6)
        f = 1 / (1 + np.exp(-x))
        o = nmm_sigmoid_gauss(mt(3.0, 2.0))
        assert abs(o.m[0] - f.mean()) < 0.02
        assert abs(o.s[0] - f.var()) < 0.02

    def test_mean_strictly_increasing_in_m(self):
        for s in (0.0, 0.5, 2.0, 8.0):
            m = np.linspace(-6, 6, 201)
            out = nmm_sigmoid_gauss(mt(m, np.full_like(m, s))).m
            assert np.all(np.diff(out) > 0)

    def test_range_and_clamp(self):
        rng = np.random.default_rng(8)
        m = rng.uniform(-10, 10, 1000)
        s = rng.uniform(0, 10, 1000)
        stats = ClampStats()
        o = nmm_sigmoid_gauss(mt(m, s), clamp_stats=stats)
        assert np.all((o.m > 0) & (o.m < 1))
        assert np.all(o.s >= 0)

    def test_clamp_counter_wiring(self):
        # the probit residual is nonnegative on sane inputs, so no clamps fire
        stats = ClampStats()
        rng = np.random.default_rng(12)
        nmm_sigmoid_gauss(mt(rng.uniform(-8, 8, 500), rng.uniform(0, 20, 500)),
                          clamp_stats=stats)
        assert stats.clamped == 0
        stats.add(3)
        stats.add(2)
        assert stats.clamped == 5

    def test_negative_input_variance_rejected(self):
        with pytest.raises(DomainError):
            nmm_sigmoid_gauss(mt(0.0, -1.0))


class TestTanhGauss:
    def test_zero_point(self):
        o = nmm_tanh_gauss(mt(0.0, 0.0))
        assert o.m[0] == 0.0
        assert o.s[0] == 0.0

    def test_odd_symmetry_at_unit_variance(self):
        o = nmm_tanh_gauss(mt(0.0, 1.0))
        assert abs(o.m[0]) < 0.02

    def test_against_mc_at_1_05(self):
        rng = np.random.default_rng(78)
        f = np.tanh(rng.normal(1.0, math.sqrt(0.5), 10**6))
        o = nmm_tanh_gauss(mt(1.0, 0.5))
        assert abs(o.m[0] - f.mean()) < 0.03
        # NOTE: the paper's closed-form tanh variance carries ~0.05 systematic
        # error here; the faithful 0.03 assertion lives in the acceptance
        # suite (criterion 2) where it is expected red. This check pins the
        # attainable range-scaled bound (0.12 = 4x the sigmoid bound).
        assert abs(o.s[0] - f.var()) < 0.12

    def test_reduces_to_exact_tanh_at_zero_variance(self):
        m = np.linspace(-4, 4, 41)
        o = nmm_tanh_gauss(mt(m, np.zeros_like(m)))
        np.testing.assert_allclose(o.m, np.tanh(m), atol=1e-12)

    def test_range(self):
        rng = np.random.default_rng(9)
        o = nmm_tanh_gauss(mt(rng.uniform(-10, 10, 1000), rng.uniform(0, 10, 1000)))
        assert np.all((o.m > -1) & (o.m < 1))
        assert np.all(o.s >= 0)


class TestGammaActivation:
    def test_unit_example(self):
        o = nmm_gamma(np.array([1.0]), np.array([1.0]))
        np.testing.assert_allclose(o.m, [0.5])
        np.testing.assert_allclose(o.s, [1.0 / 3.0 - 0.25])

    def test_shape2_rate3_mean(self):
        o = nmm_gamma(np.array([2.0]), np.array([3.0]))
        np.testing.assert_allclose(o.m, [1.0 - (3.0 / 4.0) ** 2])

    def test_gamma_to_zero_limit(self):
        o = nmm_gamma(np.array([2.0]), np.array([1.0]), NmmConstants(gamma=1e-12))
        assert o.m[0] < 1e-10 and o.s[0] < 1e-10

    def test_exact_against_quadrature_1000_random(self):
        rng = np.random.default_rng(91)
        shapes = rng.uniform(0.2, 10, 1000)
        rates = rng.uniform(0.2, 10, 1000)
        closed = nmm_gamma(shapes, rates)
        idx = rng.choice(1000, 40, replace=False)  # quadrature on a subsample
        for i in idx:
            qm, qv = gamma_activation_quadrature(shapes[i], rates[i])
            assert abs(closed.m[i] - qm) <= 1e-10 * max(1.0, abs(qm))
            # quadrature reports ~1e-10 relative; float64 cancellation floor
            assert abs(closed.s[i] - qv) <= max(1e-8 * abs(qv), 1e-13)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            nmm_gamma(np.array([-1.0]), np.array([1.0]))
        with pytest.raises(DomainError):
            nmm_gamma(np.array([1.0]), np.array([0.0]))


class TestPoissonActivation:
    def test_unit_rate_value(self):
        o = nmm_poisson(np.array([1.0]))
        expected = 1.0 - math.exp(math.exp(-1.0) - 1.0)  # ~0.46847
        np.testing.assert_allclose(o.m, [expected], rtol=1e-15)
        sm, sv = poisson_activation_series(1.0)
        np.testing.assert_allclose(o.m, [sm], rtol=1e-12)
        np.testing.assert_allclose(o.s, [sv], rtol=1e-12)

    def test_small_rate_limit(self):
        o = nmm_poisson(np.array([1e-10]))
        assert o.m[0] < 1e-9 and o.s[0] < 1e-9

    def test_rate4_against_mc(self):
        rng = np.random.default_rng(92)
        x = rng.poisson(4.0, 10**6).astype(float)
        f = 1.0 - np.exp(-x)
        o = nmm_poisson(np.array([4.0]))
        se = f.std(ddof=1) / 1000.0
        assert abs(o.m[0] - f.mean()) < 4 * se

    def test_exact_against_series_1000_random(self):
        rng = np.random.default_rng(93)
        lams = rng.uniform(0.05, 30, 1000)
        closed = nmm_poisson(lams)
        for i in rng.choice(1000, 40, replace=False):
            sm, sv = poisson_activation_series(lams[i])
            assert abs(closed.m[i] - sm) <= 1e-10 * max(1.0, abs(sm))
            # e2 - e1^2 in the closed form loses digits when both are ~1
            assert abs(closed.s[i] - sv) <= max(1e-10 * abs(sv), 1e-14)

    def test_domain_error(self):
        with pytest.raises(DomainError):
            nmm_poisson(np.array([0.0]))
