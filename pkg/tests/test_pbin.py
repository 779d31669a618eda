import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elflab import pbin
from elflab.pbin import (
    PBin,
    binomial_tail_lower,
    hoeffding_tail,
    homogenize_to_extremes,
    homogenize_to_uniform_chain,
    kl_bernoulli,
    lead_pack_bound,
    lead_pack_t_min_holds,
    modes,
    pbin_cdf,
    pbin_pmf,
    pbin_ratio_lower,
    pbin_tail,
    pbin_tail_lower,
    pbin_tail_upper,
    ratio,
    separation_step,
)


def brute_force_pmf(theta: np.ndarray) -> np.ndarray:
    """Independent oracle: sum the weights of all 2^t outcome vectors."""
    t = theta.size
    masks = (np.arange(1 << t)[:, None] >> np.arange(t)) & 1
    weights = np.prod(np.where(masks == 1, theta, 1.0 - theta), axis=1)
    return np.bincount(masks.sum(axis=1), weights=weights, minlength=t + 1)


class TestPmf:
    def test_fair_coins(self):
        assert np.allclose(pbin_pmf([0.5, 0.5]), [0.25, 0.5, 0.25])

    def test_deterministic(self):
        assert np.allclose(pbin_pmf([1.0]), [0.0, 1.0])

    @given(theta=st.lists(st.floats(0, 1), min_size=1, max_size=12))
    @settings(max_examples=100, deadline=None)
    def test_matches_enumeration(self, theta):
        th = np.asarray(theta)
        assert np.abs(pbin_pmf(th) - brute_force_pmf(th)).max() < 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            pbin_pmf([])


class TestCdfTail:
    def test_values(self):
        dist = PBin.from_params([0.5, 0.5])
        assert pbin_cdf(dist, 0) == 0.25
        assert pbin_cdf(dist, -1) == 0.0
        assert pbin_cdf(dist, 2) == pytest.approx(1.0, abs=1e-15)

    @given(theta=st.lists(st.floats(0.01, 0.99), min_size=1, max_size=10),
           data=st.data())
    @settings(max_examples=100, deadline=None)
    def test_cdf_plus_tail(self, theta, data):
        dist = PBin.from_params(theta)
        k = data.draw(st.integers(-1, dist.t))
        assert pbin_cdf(dist, k) + pbin_tail(dist, k) == pytest.approx(1.0, abs=1e-12)
        brute = brute_force_pmf(np.asarray(theta))
        assert pbin_cdf(dist, k) == pytest.approx(brute[: k + 1].sum(), abs=1e-12)


class TestModesAndRatio:
    def test_two_coins_single_mode(self):
        assert modes(PBin.from_params([0.5, 0.5])) == (1, 1)

    def test_three_coins_double_mode(self):
        assert modes(PBin.from_params([0.5, 0.5, 0.5])) == (1, 2)

    def test_binomial_ratio_values(self):
        dist = PBin.from_params([0.5, 0.5])
        assert ratio(dist, 1) == pytest.approx(0.5)
        assert ratio(dist, 2) == pytest.approx(2.0)
        assert ratio(dist, 0) == 0.0

    def test_rng_structure(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            t = int(rng.integers(2, 60))
            dist = PBin.from_params(rng.uniform(0.02, 0.98, t))
            m_l, m_r = modes(dist)
            assert m_r - m_l <= 1
            mean = t * dist.mean
            assert abs(m_l - mean) <= 1.0 + 1e-9 or abs(m_r - mean) <= 1.0 + 1e-9
            ratios = [ratio(dist, k) for k in range(t + 1)]
            assert all(ratios[k] < ratios[k + 1] for k in range(t))
            # unimodal: strictly increasing before m_L, strictly decreasing after m_R
            p = dist.pmf
            assert all(p[k] < p[k + 1] for k in range(m_l))
            assert all(p[k] > p[k + 1] for k in range(m_r, t))

    def test_zero_denominator(self):
        dist = PBin.from_params([1.0, 1.0])
        with pytest.raises(ZeroDivisionError):
            ratio(dist, 0)


class TestKlAndBinomialBounds:
    def test_kl_values(self):
        assert kl_bernoulli(0.5, 0.5) == 0.0
        assert kl_bernoulli(0.0, 0.5) == pytest.approx(math.log(2))
        expected = 0.3 * math.log(0.5) + 0.7 * math.log(1.75)
        assert kl_bernoulli(0.3, 0.6) == pytest.approx(expected, abs=1e-12)
        assert kl_bernoulli(0.3, 0.6) == pytest.approx(0.1838, abs=1e-4)

    def test_kl_domain(self):
        with pytest.raises(ValueError):
            kl_bernoulli(0.5, 1.0)

    def test_binomial_tail_lower_example(self):
        bound = binomial_tail_lower(4, 0.5, 0)
        assert bound == pytest.approx((1 / math.sqrt(8)) / 16, abs=1e-12)
        exact = pbin_cdf(PBin.from_params([0.5] * 4), 0)
        assert bound <= exact == 0.0625

    def test_binomial_tail_lower_at_t(self):
        assert binomial_tail_lower(10, 0.3, 10) <= 1.0

    def test_binomial_tail_lower_random(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            t = int(rng.integers(2, 200))
            th = float(rng.uniform(0.05, 0.95))
            k = int(rng.integers(0, t + 1))
            exact = pbin_cdf(PBin.from_params([th] * t), k)
            assert binomial_tail_lower(t, th, k) <= exact + 1e-13

    def test_hoeffding_example(self):
        assert hoeffding_tail(2, 0.5, 1) == pytest.approx(math.exp(-1))
        dist = PBin.from_params([0.5, 0.5])
        assert hoeffding_tail(2, 0.5, 1) >= pbin_tail(dist, 1)  # P[Y >= 2]
        assert hoeffding_tail(2, 0.5, 1) >= pbin_cdf(dist, 0)

    def test_hoeffding_random(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            t = int(rng.integers(2, 80))
            theta = rng.uniform(0, 1, t)
            dist = PBin.from_params(theta)
            mean = theta.sum()
            k = float(rng.uniform(0.5, t))
            bound = hoeffding_tail(t, dist.mean, k)
            up_idx = min(math.ceil(mean + k) - 1, t)
            lo_idx = max(math.floor(mean - k), -1)
            upper = pbin_tail(dist, up_idx)  # P[Y >= mean + k]
            lower = pbin_cdf(dist, lo_idx)  # P[Y <= mean - k]
            assert upper <= bound + 1e-13
            assert lower <= bound + 1e-13


def check_separation_directions(before: np.ndarray, after: np.ndarray) -> None:
    """Exact-DP check of both tail inequalities for one separation move."""
    t = before.size
    mean = before.sum()
    assert after.sum() == pytest.approx(mean, abs=1e-12)
    d_before = PBin.from_params(before)
    d_after = PBin.from_params(after)
    for k in range(t + 1):
        if k <= mean - 1.0:
            assert pbin_cdf(d_before, k) >= pbin_cdf(d_after, k) - 1e-13
        if k >= mean + 1.0:
            assert pbin_cdf(d_before, k) <= pbin_cdf(d_after, k) + 1e-13


class TestSeparation:
    def test_example_pair(self):
        out = separation_step([0.3, 0.5], 0.2, 0.6)
        assert np.allclose(out, [0.2, 0.6])

    def test_example_triple(self):
        out = separation_step([0.25, 0.4, 0.45], 0.2, 0.5)
        assert np.allclose(out, [0.2, 0.4, 0.5])

    def test_random_moves(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            t = 10
            lo, hi = 0.1, 0.8
            theta = np.sort(rng.uniform(lo, hi, t))
            out = separation_step(theta, lo, hi)
            # exactly one moved entry is assigned the floor or ceiling value
            assert np.sum((out == lo) | (out == hi)) >= np.sum((theta == lo) | (theta == hi)) + 1
            check_separation_directions(theta, out)

    def test_preconditions(self):
        with pytest.raises(ValueError):
            separation_step([0.5, 0.3], 0.2, 0.6)  # unsorted
        with pytest.raises(ValueError):
            separation_step([0.2, 0.6], 0.2, 0.6)  # no interior entries
        with pytest.raises(ValueError):
            separation_step([0.1, 0.5], 0.2, 0.6)  # entry below the floor


class TestHomogenization:
    def test_uniform_input_trivial_chain(self):
        chain = homogenize_to_uniform_chain([0.4, 0.4, 0.4])
        assert len(chain) == 1

    def test_two_entries_single_step(self):
        chain = homogenize_to_uniform_chain([0.2, 0.6])
        assert len(chain) == 2
        assert np.allclose(chain[-1], [0.2, 0.6])

    def test_random_chain_validates(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            t = 8
            theta = rng.uniform(0.05, 0.95, t)
            chain = homogenize_to_uniform_chain(theta)
            assert len(chain) <= t
            assert np.allclose(chain[-1], np.sort(theta), atol=1e-12)
            for before, after in zip(chain, chain[1:]):
                check_separation_directions(before, after)

    def test_extremes_identity(self):
        theta = [0.2, 0.2, 0.2]
        assert np.allclose(homogenize_to_extremes(theta, 0.2, 0.6), theta)

    def test_extremes_pair(self):
        out = homogenize_to_extremes([0.3, 0.5], 0.2, 0.6)
        assert np.allclose(out, [0.2, 0.6])

    def test_extremes_random(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            t = int(rng.integers(3, 10))
            lo, hi = 0.15, 0.9
            theta = rng.uniform(lo, hi, t)
            out = homogenize_to_extremes(theta, lo, hi)
            interior = np.sum((out > lo + 1e-12) & (out < hi - 1e-12))
            assert interior <= 1
            assert out.sum() == pytest.approx(theta.sum(), abs=1e-12)
            check_separation_directions(np.sort(theta), out)


class TestTailBounds:
    def test_upper_example(self):
        kl_form, quad_form = pbin_tail_upper(4, 0.5, 0)
        assert kl_form == pytest.approx(1.0 / 16.0, abs=1e-12)
        assert quad_form == pytest.approx(math.exp(-1.0), abs=1e-12)
        assert kl_form <= quad_form

    def test_upper_random(self):
        rng = np.random.default_rng(9)
        for _ in range(60):
            t = int(rng.integers(8, 200))
            theta = rng.uniform(0.02, 0.5, t)
            dist = PBin.from_params(theta)
            th_bar = dist.mean
            k_hi = math.floor(t * th_bar - 1.0)
            if k_hi < 0:
                continue
            k = int(rng.integers(0, k_hi + 1))
            kl_form, quad_form = pbin_tail_upper(t, th_bar, k)
            assert kl_form <= quad_form + 1e-13
            assert pbin_cdf(dist, k) <= kl_form + 1e-13
            # upper tail side: the KL form is the sound bound there
            k_up = math.ceil(t * th_bar + 1.0)
            if k_up <= t:
                kl_up, _ = pbin_tail_upper(t, th_bar, k_up)
                assert pbin_tail(dist, k_up - 1) <= kl_up + 1e-13

    def test_upper_tail_quadratic_sharpening_is_unsound(self):
        # counterexample pinning why the quadratic form is restricted to the
        # lower tail: at t=7 with a small mean it dips below the exact tail
        theta = np.full(7, 0.10225332363100156)
        dist = PBin.from_params(theta)
        kl_form, quad_form = pbin_tail_upper(7, dist.mean, 4)
        exact = pbin_tail(dist, 3)  # P[Y >= 4]
        assert exact <= kl_form
        assert exact > quad_form
        assert kl_form > quad_form

    def test_upper_window_errors(self):
        with pytest.raises(ValueError):
            pbin_tail_upper(10, 0.4, 4)  # within one of the mean
        with pytest.raises(ValueError):
            pbin_tail_upper(10, 0.7, 2)  # mean above 1/2

    def test_lower_empty_window(self):
        with pytest.raises(ValueError):
            pbin_tail_lower(8, 0.3, 0.4, 2)

    def test_lower_example(self):
        bound = pbin_tail_lower(200, 0.3, 0.4, 79)
        exact = pbin_cdf(PBin.from_params([0.4] * 200), 79)
        assert bound <= exact

    def test_lower_random(self):
        rng = np.random.default_rng(10)
        done = 0
        while done < 40:
            t = int(rng.integers(60, 400))
            lo = float(rng.uniform(0.25, 0.45))
            theta = rng.uniform(lo, 0.5, t)
            dist = PBin.from_params(theta)
            th_bar = dist.mean
            k_lo = math.ceil(t * th_bar + 1.0 - lo * t / 8.0)
            k_hi = math.floor(t * th_bar - 1.0)
            if k_lo > k_hi:
                continue
            k = int(rng.integers(k_lo, k_hi + 1))
            bound = pbin_tail_lower(t, lo, th_bar, k)
            assert bound <= pbin_cdf(dist, k) + 1e-13
            done += 1

    def test_lower_boundary_k(self):
        t, lo = 400, 0.3
        theta = np.full(t, 0.42)
        dist = PBin.from_params(theta)
        k = math.ceil(t * dist.mean) - 1
        bound = pbin_tail_lower(t, lo, dist.mean, k)
        assert bound <= pbin_cdf(dist, k)


class TestRatioBound:
    def test_precondition(self):
        with pytest.raises(ValueError):
            pbin_ratio_lower(100, 0.3, 0.4, 40)  # t below 24^2 / l'

    def test_vacuous_but_valid(self):
        t, lo = 2000, 0.3
        theta_bar = 0.4
        k = int(t * theta_bar - 2 + lo * t / 24.0) - 1
        bound = pbin_ratio_lower(t, lo, theta_bar, k)
        dist = PBin.from_params(np.full(t, theta_bar))
        assert bound <= ratio(dist, k)

    def test_random_instances(self):
        rng = np.random.default_rng(12)
        for _ in range(8):
            lo = float(rng.uniform(0.29, 0.45))
            t = int(rng.integers(math.ceil(576 / lo), 2001))
            theta = rng.uniform(lo, 0.5, t)
            dist = PBin.from_params(theta)
            th_bar = dist.mean
            half = lo * t / 24.0
            k_lo = math.ceil(t * th_bar + 2.0 - half)
            k_hi = math.floor(t * th_bar - 2.0 + half)
            for k in rng.integers(k_lo, k_hi + 1, size=5):
                bound = pbin_ratio_lower(t, lo, th_bar, int(k))
                assert bound <= ratio(dist, int(k)) + 1e-13


class TestLeadPackBound:
    def test_small_t_trivial(self):
        assert lead_pack_bound(10, 0.125, 4) == 1.0

    def test_eventually_decreasing(self):
        # the default constants keep the clamped bound at 1 until astronomical
        # t; the expression's decreasing shape is checked with unit constants
        l_poi = 0.125
        ts = [7 * 10**5, 14 * 10**5, 28 * 10**5]
        assert all(lead_pack_t_min_holds(t, l_poi, 4) for t in ts)
        values = [lead_pack_bound(t, l_poi, 4, c1=1.0, c2=1.0) for t in ts]
        assert all(v < 1.0 for v in values)
        assert all(a > b for a, b in zip(values, values[1:]))
        assert lead_pack_bound(ts[0], l_poi, 4) == 1.0  # defaults stay clamped

    def test_domain(self):
        with pytest.raises(ValueError):
            lead_pack_bound(100, 0.3, 4)
