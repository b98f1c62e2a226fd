import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ammtpp.events import EventSequence
from ammtpp.evaluation import (OtdConfig, decode_next, evaluate, otd, otd_bruteforce, rollout,
                               time_rmse, type_accuracy)
from ammtpp.exceptions import ShapeError
from ammtpp.synthetic import heavy_tail_dataset, heavy_tail_optimum
from ammtpp.tpp import RMTPP, Hawkes, HawkesParams, LogNormMix

events = st.lists(st.tuples(st.floats(0, 20, allow_nan=False), st.integers(0, 2)), max_size=6)
costs = st.sampled_from([0.5, 1.0, 2.0])


def poisson_model(rate=0.1, n_marks=31):
    mu = np.zeros(n_marks)
    mu[0] = rate
    return Hawkes.from_params(HawkesParams(mu, np.zeros((n_marks, n_marks)), 1.0),
                              max_gap=1e4, grid_size=512)


def constant_lnm(mark_bias, gap, n_marks=31):
    """Near-deterministic model: fixed mark logits and a log-normal gap with tiny spread."""
    m = LogNormMix(n_marks=n_marks, hidden_size=2, n_components=1, min_scale=0.0)
    sig = 1e-6
    m.set_params(b_mark=mark_bias, b_time=[0.0, math.log(gap) - 0.5 * sig ** 2,
                                           math.log(math.expm1(sig))])
    return m


class TestDecode:
    def test_concentrated(self):
        b = np.zeros(31)
        b[7] = 10
        assert decode_next(constant_lnm(b, 3.0), [1.0], [0])[0] == 7

    def test_tie_lowest_index(self):
        b = np.zeros(31)
        b[[2, 9]] = 5.0
        assert decode_next(constant_lnm(b, 3.0), [1.0], [0])[0] == 2

    def test_poisson_gap(self):
        assert decode_next(poisson_model(), [4.0], [0]) == (0, pytest.approx(10.0, rel=1e-4))


class TestMetrics:
    def test_accuracy(self):
        assert type_accuracy([0, 1, 2], [0, 1, 3]) == pytest.approx(2 / 3)
        assert type_accuracy([4, 4], [4, 4]) == 1.0
        assert type_accuracy([1, 2], [3, 4]) == 0.0

    def test_rmse(self):
        assert time_rmse([10, 20], [12, 16]) == pytest.approx(math.sqrt(10))
        assert time_rmse([3, 4], [3, 4]) == 0.0

    def test_errors(self):
        with pytest.raises(ShapeError):
            type_accuracy([1], [1, 2])
        with pytest.raises(ShapeError):
            time_rmse([1.0], [])
        with pytest.raises(ValueError):
            type_accuracy([], [])

    def test_constant_predictor_on_heavy_tail(self):
        gaps = np.concatenate([s.gaps for s in heavy_tail_dataset(500, 100)])
        assert time_rmse(np.full(len(gaps), 54.5), gaps) == pytest.approx(heavy_tail_optimum(),
                                                                          rel=0.02)
        assert heavy_tail_optimum() == pytest.approx(
            math.sqrt(0.9 * 49.5 ** 2 + 0.1 * 445.5 ** 2))

    @given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), min_size=1, max_size=30),
           st.randoms())
    def test_accuracy_permutation_invariant(self, pairs, rnd):
        p, t = zip(*pairs)
        perm = list(range(len(pairs)))
        rnd.shuffle(perm)
        assert type_accuracy(p, t) == type_accuracy([p[i] for i in perm], [t[i] for i in perm])

    @given(st.lists(st.tuples(st.floats(1, 1e3), st.floats(1, 1e3)), min_size=1, max_size=30),
           st.floats(-1e3, 1e3))
    def test_rmse_translation_invariant(self, pairs, shift):
        p, t = map(np.array, zip(*pairs))
        assert time_rmse(p + shift, t + shift) == pytest.approx(time_rmse(p, t), abs=1e-6)


class TestOtd:
    def test_examples(self):
        seq = [(1.0, 0), (4.0, 2)]
        assert otd(seq, seq) == 0
        assert otd([(1.0, 0)], [(5.0, 1)], 1.0) == 2.0
        assert otd([(1.0, 0)], [(1.5, 0)], 1.0) == 0.5

    def test_accepts_config(self):
        assert otd([(1.0, 0)], [], OtdConfig(delete_cost=2.0)) == 2.0

    @given(events, events, costs)
    def test_dp_equals_bruteforce(self, a, b, c):
        a, b = sorted(a), sorted(b)
        assert otd(a, b, c) == pytest.approx(otd_bruteforce(a, b, c), abs=1e-9)

    @given(events, events, costs)
    def test_properties(self, a, b, c):
        a, b = sorted(a), sorted(b)
        assert otd(a, a, c) == 0
        assert otd(a, b, c) == pytest.approx(otd(b, a, c))
        assert 0 <= otd(a, b, c) <= c * (len(a) + len(b))

    @pytest.mark.parametrize("kw", [{"delete_cost": 0}, {"horizons": []}, {"rollout": "beam"},
                                    {"n_draws": 0}])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            OtdConfig(**kw)


class TestRollout:
    def test_poisson(self):
        out = rollout(poisson_model(), [5.0], [0], 3)
        assert [t for t, _ in out] == pytest.approx([15.0, 25.0, 35.0], rel=1e-4)

    def test_base_case_and_idempotent(self):
        m = poisson_model()
        assert rollout(m, [5.0], [0], 1) == [(5.0 + decode_next(m, [5.0], [0])[1], 0)]
        assert rollout(m, [5.0], [0], 4) == rollout(m, [5.0], [0], 4)

    def test_sampled_deterministic(self):
        m = poisson_model(rate=0.5)
        a = rollout(m, [1.0], [0], 5, "sampled", n_draws=3, seed=9)
        assert a == rollout(m, [1.0], [0], 5, "sampled", n_draws=3, seed=9)
        assert len(a) == 3 and all(len(d) == 5 for d in a)

    def test_bad_horizon(self):
        with pytest.raises(ValueError):
            rollout(poisson_model(), [1.0], [0], 0)


class TestEvaluate:
    def test_oracle_model(self):
        b = np.full(31, -50.0)
        b[4] = 0.0
        seqs = [EventSequence(f"a{i}", 1 + 100 * i + 3 * np.arange(24), np.full(24, 4))
                for i in range(3)]
        rep = evaluate(constant_lnm(b, 3.0), seqs)
        assert rep.type_accuracy == 1.0
        assert rep.time_rmse < 1e-4
        assert set(rep.otd) == {3, 5, 7, 9, 11}
        assert all(v < 1e-3 for v in rep.otd.values())
        assert rep.n_events == 69

    def test_majority_baseline(self):
        b = np.zeros(31)
        b[1] = 5.0
        marks = [0] + [1] * 6 + [2] * 4
        seq = EventSequence("a", np.arange(1, 12), marks)
        rep = evaluate(constant_lnm(b, 1.0), [seq], OtdConfig(horizons=[3]))
        assert rep.type_accuracy == pytest.approx(0.60)

    def test_otd_monotone_in_horizon(self):
        seqs = heavy_tail_dataset(6, 40, seed=1)
        m = RMTPP(hidden_size=8).init_params(np.random.default_rng(0), seqs)
        rep = evaluate(m, seqs)
        vals = [rep.otd[h] for h in sorted(rep.otd)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_report_json_canonical(self):
        seqs = heavy_tail_dataset(3, 20, seed=2)
        m = RMTPP(hidden_size=8).init_params(np.random.default_rng(0), seqs)
        a = evaluate(m, seqs).to_json()
        assert a == evaluate(m, list(reversed(seqs))).to_json()

    def test_needs_sequences(self):
        with pytest.raises(ValueError):
            evaluate(poisson_model(), [EventSequence("a", [1], [0])])
