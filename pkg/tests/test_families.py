"""Natural/moment mappings: contract examples, round trips, sampling."""

import numpy as np
import pytest

from spgru.errors import DomainError, ShapeError
from spgru.families import (
    Family,
    MomentTensor,
    NaturalParams,
    from_moments,
    sample,
    to_moments,
)


class TestToMoments:
    def test_gaussian_direct(self):
        p = NaturalParams(np.array([2.0]), np.array([-1.0]), Family.GAUSSIAN)
        t = to_moments(p)
        np.testing.assert_allclose(t.m, [2.0])
        np.testing.assert_allclose(t.s, [1.0])

    def test_standard_normal(self):
        t = to_moments(NaturalParams(np.array([0.0]), np.array([-1.0]), Family.GAUSSIAN))
        assert t.m[0] == 0.0 and t.s[0] == 1.0

    def test_gamma_shape1_rate2(self):
        t = to_moments(NaturalParams(np.array([0.0]), np.array([-2.0]), Family.GAMMA))
        np.testing.assert_allclose(t.m, [0.5])
        np.testing.assert_allclose(t.s, [0.25])

    def test_poisson_mean_equals_variance(self):
        t = to_moments(NaturalParams(np.array([3.5]), np.array([0.0]), Family.POISSON))
        np.testing.assert_allclose(t.m, [3.5])
        np.testing.assert_allclose(t.s, [3.5])

    def test_domain_error_reports_index_and_value(self):
        p = NaturalParams(np.array([1.0, 2.0]), np.array([-1.0, 0.5]), Family.GAUSSIAN)
        with pytest.raises(DomainError, match=r"\(1,\).*0\.5"):
            to_moments(p)


class TestFromMoments:
    def test_gaussian_inverse(self):
        p = from_moments(MomentTensor(np.array([2.0]), np.array([1.0])), Family.GAUSSIAN)
        np.testing.assert_allclose(p.alpha, [2.0])
        np.testing.assert_allclose(p.beta, [-1.0])

    def test_gamma_inverse(self):
        p = from_moments(MomentTensor(np.array([0.5]), np.array([0.25])), Family.GAMMA)
        np.testing.assert_allclose(p.alpha, [0.0], atol=1e-15)
        np.testing.assert_allclose(p.beta, [-2.0])

    def test_gaussian_zero_mean(self):
        p = from_moments(MomentTensor(np.array([0.0]), np.array([4.0])), Family.GAUSSIAN)
        np.testing.assert_allclose(p.alpha, [0.0])
        np.testing.assert_allclose(p.beta, [-0.25])

    def test_zero_variance_rejected(self):
        with pytest.raises(DomainError):
            from_moments(MomentTensor(np.array([1.0]), np.array([0.0])), Family.GAUSSIAN)

    def test_nonpositive_mean_rejected_for_gamma_poisson(self):
        bad = MomentTensor(np.array([-1.0]), np.array([1.0]))
        for fam in (Family.GAMMA, Family.POISSON):
            with pytest.raises(DomainError):
                from_moments(bad, fam)

    def test_mismatched_shapes_rejected(self):
        with pytest.raises(ShapeError):
            MomentTensor(np.zeros(3), np.zeros(4))


def _random_valid(rng, family, size):
    if family is Family.GAUSSIAN:
        return NaturalParams(rng.uniform(-5, 5, size), -rng.uniform(0.1, 10, size), family)
    if family is Family.GAMMA:
        return NaturalParams(rng.uniform(-0.9, 8, size), -rng.uniform(0.1, 10, size), family)
    return NaturalParams(rng.uniform(0.05, 20, size), np.zeros(size), family)


@pytest.mark.parametrize("family", list(Family))
def test_round_trip_1000_random_draws(family):
    rng = np.random.default_rng(101)
    p = _random_valid(rng, family, 1000)
    q = from_moments(to_moments(p), family)
    np.testing.assert_allclose(q.alpha, p.alpha, rtol=1e-12, atol=1e-12)
    if family is not Family.POISSON:  # Poisson beta is an unread sentinel
        np.testing.assert_allclose(q.beta, p.beta, rtol=1e-12)


@pytest.mark.parametrize("family", list(Family))
def test_to_moments_output_valid(family):
    rng = np.random.default_rng(7)
    t = to_moments(_random_valid(rng, family, 500))
    assert np.all(t.s >= 0)
    assert t.m.shape == t.s.shape


class TestSampling:
    N = 10**6

    def test_gaussian_standard_normal_mean(self):
        p = NaturalParams(np.array([0.0]), np.array([-1.0]), Family.GAUSSIAN)
        x = sample(p, self.N, rng_seed=11)
        assert abs(x.mean()) < 4e-3  # 4 standard errors at n = 1e6

    def test_poisson_unit_rate_variance(self):
        p = NaturalParams(np.array([1.0]), np.array([0.0]), Family.POISSON)
        x = sample(p, self.N, rng_seed=12)
        assert abs(x.var() - 1.0) < 2e-2

    def test_gamma_exponential_mean(self):
        p = NaturalParams(np.array([0.0]), np.array([-1.0]), Family.GAMMA)
        x = sample(p, self.N, rng_seed=13)
        assert abs(x.mean() - 1.0) < 4e-3

    @pytest.mark.parametrize("family", list(Family))
    def test_empirical_moments_match_within_4se(self, family):
        rng = np.random.default_rng(31)
        p = _random_valid(rng, family, 3)
        t = to_moments(p)
        x = sample(p, self.N, rng_seed=32)
        se_mean = x.std(axis=0, ddof=1) / np.sqrt(self.N)
        assert np.all(np.abs(x.mean(axis=0) - t.m) < 4 * se_mean)
        c = x - x.mean(axis=0)
        se_var = np.sqrt((np.mean(c**4, axis=0) - np.mean(c**2, axis=0) ** 2) / self.N)
        assert np.all(np.abs(x.var(axis=0) - t.s) < 4 * se_var)

    def test_deterministic_for_fixed_seed(self):
        p = NaturalParams(np.array([1.0]), np.array([-2.0]), Family.GAUSSIAN)
        a = sample(p, 100, rng_seed=5)
        b = sample(p, 100, rng_seed=5)
        np.testing.assert_array_equal(a, b)

    def test_n_must_be_positive(self):
        p = NaturalParams(np.array([1.0]), np.array([-2.0]), Family.GAUSSIAN)
        with pytest.raises(ValueError):
            sample(p, 0, rng_seed=1)
