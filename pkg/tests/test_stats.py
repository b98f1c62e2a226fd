import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats as sps

from ammtpp.events import EventSequence
from ammtpp.exceptions import DegenerateFit, InsufficientData, MissingWallclock, Undefined
from ammtpp.stats import (burstiness_cv, coefficient_of_variation, correlation_matrices,
                          events_per_block, gap_summary, lending_correlations, occupancy_pmf,
                          powerlaw_alpha, select_trigger_blocks, trigger_conditional_probability)


class TestEventsPerBlock:
    def test_one_bin(self):
        assert events_per_block(np.arange(20) + 5, 10_000) == [(5, 0.002)]

    def test_empty(self):
        assert events_per_block([]) == []

    def test_unit_density(self):
        assert events_per_block(np.arange(1, 10_001)) == [(1, 1.0)]

    def test_empty_middle_bin_kept(self):
        out = events_per_block([0, 25], bin_size=10)
        assert [v for _, v in out] == [0.1, 0.0, 0.1]

    def test_bad_bin(self):
        with pytest.raises(ValueError):
            events_per_block([1], 0)


class TestGapSummary:
    def test_fixture(self):
        g = gap_summary([100, 101, 117, 165])
        assert g.count == 3
        assert g.mean == pytest.approx(65 / 3, abs=1e-9)
        assert (g.median, g.max) == (16, 48)
        assert g.right_skew

    def test_pair(self):
        g = gap_summary(EventSequence("a", [5, 6], [0, 0]))
        assert (g.mean, g.median, g.max) == (1, 1, 1)

    def test_long_gap(self):
        assert gap_summary([1, 1427]).max == 1426

    def test_too_short(self):
        with pytest.raises(InsufficientData):
            gap_summary([3])

    @given(st.lists(st.integers(1, 10**6), min_size=2, max_size=50, unique=True))
    def test_telescoping_and_order(self, blocks):
        b = sorted(blocks)
        g = gap_summary(b)
        assert g.mean == pytest.approx((b[-1] - b[0]) / (len(b) - 1))
        assert g.max >= g.p99 >= g.median - 1e-9


class TestOccupancy:
    def test_pmf(self):
        pmf = occupancy_pmf([1, 2, 3, 4, 4])
        assert pmf.support.tolist() == [1, 2]
        assert pmf.pmf.tolist() == [0.75, 0.25]

    def test_empty_fraction(self):
        pmf = occupancy_pmf([1, 2, 3, 4, 4], block_range=(1, 8))
        assert pmf.empty_fraction == 0.5

    def test_degenerate(self):
        with pytest.raises(DegenerateFit):
            occupancy_pmf([1, 2, 3])

    def test_powerlaw_recovery(self):
        # A known generator: scipy's zeta distribution with exponent 2.5, x_min = 1.
        x = sps.zipf(2.5).rvs(10_000, random_state=np.random.default_rng(2019))
        assert abs(powerlaw_alpha(x) - 2.5) < 0.1
        blocks = np.repeat(np.arange(x.size), x)
        assert abs(occupancy_pmf(blocks).alpha_hat - 2.5) < 0.1

    def test_approx_form(self):
        x = np.array([1, 1, 2, 4])
        assert powerlaw_alpha(x, "approx") == pytest.approx(1 + 4 / np.log(x / 0.5).sum())

    @given(st.lists(st.integers(1, 40), min_size=2, max_size=200).filter(lambda v: len(set(v)) > 1))
    def test_pmf_sums_to_one(self, counts):
        blocks = np.repeat(np.arange(len(counts)), counts)
        pmf = occupancy_pmf(blocks)
        assert abs(pmf.pmf.sum() - 1) < 1e-9
        assert np.all(np.diff(pmf.support) > 0)


class TestTrigger:
    def test_counting(self):
        assert trigger_conditional_probability([100], [100, 101], 1) == [(-1, 0), (0, 1), (1, 1)]

    def test_no_events(self):
        assert all(p == 0 for _, p in trigger_conditional_probability([5, 9], [], 3))

    def test_perfect_alignment(self):
        probs = dict(trigger_conditional_probability([10, 50, 90], [10, 50, 90, 91], 2))
        assert probs[0] == 1.0

    def test_selection(self):
        blocks = [1, 1, 2, 3, 4]
        vols = [5, 5, 1, 2, -100]
        assert select_trigger_blocks(blocks, vols, q=95) == [4]

    @given(st.sets(st.integers(0, 200), min_size=1, max_size=20),
           st.sets(st.integers(0, 200), max_size=60), st.integers(0, 5))
    def test_bounds(self, trig, events, k):
        probs = trigger_conditional_probability(trig, events | trig, k)
        assert all(0 <= p <= 1 for _, p in probs)
        assert dict(probs)[0] == 1.0


class TestBurstiness:
    def test_constant(self):
        ts = [h * 3600 + 60 * i for h in range(10) for i in range(5)]
        assert burstiness_cv(ts) == 0.0

    def test_two_hours(self):
        assert coefficient_of_variation([10, 0]) == 1.0
        ts = [60 * i for i in range(10)]
        assert burstiness_cv(ts, span=(0, 7199)) == 1.0

    def test_missing_wallclock(self):
        with pytest.raises(MissingWallclock):
            burstiness_cv(EventSequence("a", [1, 2], [0, 0]))
        with pytest.raises(MissingWallclock):
            burstiness_cv([None, 5])

    def test_zero_mean(self):
        with pytest.raises(Undefined):
            coefficient_of_variation([0, 0])


class TestCorrelations:
    def test_identity_and_negation(self):
        r = correlation_matrices({"a": [1, 5, 2, 8], "b": [1, 5, 2, 8], "c": [-1, -5, -2, -8]})
        assert r["pearson"][0][1] == pytest.approx(1.0)
        assert r["spearman"][0][1] == pytest.approx(1.0)
        assert r["pearson"][0][2] == pytest.approx(-1.0)

    def test_hand_oracle(self):
        r = correlation_matrices({"x": [1, 2, 3], "y": [1, 4, 9]})
        assert r["pearson"][0][1] == pytest.approx(0.98974, abs=1e-4)
        assert r["spearman"][0][1] == pytest.approx(1.0)

    def test_constant_is_null(self):
        r = correlation_matrices({"x": [1, 2, 3], "y": [2, 2, 2]})
        assert r["pearson"][0][1] is None and r["pearson"][1][1] is None

    def test_ties_match_scipy(self):
        a, b = [1, 1, 2, 3, 3, 5], [2, 1, 1, 4, 4, 4]
        r = correlation_matrices({"a": a, "b": b})
        assert r["spearman"][0][1] == pytest.approx(sps.spearmanr(a, b).statistic)

    def test_short(self):
        with pytest.raises(InsufficientData):
            correlation_matrices({"x": [1]})

    def test_lending_windows(self):
        w = 14_400
        streams = {"Supply": [0, 1, w, 2 * w + 5], "Withdraw": [3, w + 1, 2 * w, 2 * w + 9]}
        r = lending_correlations(streams, window=w)
        assert r["kinds"] == ["Supply", "Withdraw"]
        # counts: Supply [2,1,1], Withdraw [1,1,2]
        assert r["pearson"][0][1] == pytest.approx(np.corrcoef([2, 1, 1], [1, 1, 2])[0, 1])

    @given(st.lists(st.lists(st.integers(0, 20), min_size=4, max_size=4), min_size=2, max_size=4))
    def test_symmetric(self, rows):
        r = correlation_matrices({str(i): v for i, v in enumerate(rows)})
        p = r["pearson"]
        for i in range(len(rows)):
            for j in range(len(rows)):
                assert p[i][j] == p[j][i]
            assert p[i][i] in (None, 1.0)
