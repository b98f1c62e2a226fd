import csv
import json

import pytest
from hypothesis import given, strategies as st

from ammtpp.amm import (ArbDirection, PoolState, RatioSignal, apply_reserve_delta,
                        arbitrage_profit, execute_swap_cpmm, mint_burn_proportional,
                        pendle_ratio_signal, replay_jsonl, spot_price)
from ammtpp.exceptions import InsufficientLiquidity, InvalidState

reserve = st.floats(1e-3, 1e9)


def test_spot_prices():
    assert spot_price(PoolState(100, 40000)) == 400
    assert spot_price(PoolState(100, 100)) == 1.0
    assert spot_price(PoolState(1000, 2000)) == 2


def test_spot_zero_reserve():
    with pytest.raises(ZeroDivisionError):
        spot_price(PoolState(0, 5))


def test_negative_reserve():
    with pytest.raises(InvalidState):
        PoolState(-1, 5)


class TestSwap:
    def test_worked_example(self):
        new, q = execute_swap_cpmm(PoolState(100, 40000), 10)
        assert round(q.input_amount, 2) == 4444.44
        assert round(q.effective_price, 2) == 444.44
        assert round(q.slippage_abs, 2) == 44.44
        assert round(100 * q.slippage_pct, 2) == 11.11
        assert q.effective_price == pytest.approx(q.input_amount / q.output_amount)

    def test_tiny_trade(self):
        _, q = execute_swap_cpmm(PoolState(100, 40000), 1e-9)
        assert q.effective_price == pytest.approx(400, rel=1e-8)

    def test_closed_form(self):
        new, q = execute_swap_cpmm(PoolState(200, 200), 100)
        assert q.input_amount == 200 and (new.reserve_x, new.reserve_y) == (100, 400)

    @pytest.mark.parametrize("dx", [100, 150])
    def test_insufficient(self, dx):
        with pytest.raises(InsufficientLiquidity):
            execute_swap_cpmm(PoolState(100, 100), dx)

    def test_nonpositive_trade(self):
        with pytest.raises(ValueError):
            execute_swap_cpmm(PoolState(100, 100), 0)

    @given(reserve, reserve, st.floats(1e-6, 0.999))
    def test_invariant_and_convexity(self, x, y, frac):
        pool = PoolState(x, y)
        new, q = execute_swap_cpmm(pool, frac * x)
        assert new.invariant_k == pytest.approx(pool.invariant_k, rel=1e-12)
        assert q.effective_price > q.spot_before
        assert q.slippage_abs == pytest.approx(q.effective_price - q.spot_before)


class TestReserveDelta:
    def test_table_replay(self):
        p = PoolState(100, 100)
        assert round(spot_price(p), 2) == 1.00
        p = apply_reserve_delta(p, 100, 100)
        assert (p.reserve_x, p.reserve_y) == (200, 200) and round(spot_price(p), 2) == 1.00
        p = apply_reserve_delta(p, 20, -20)
        assert (p.reserve_x, p.reserve_y) == (220, 180)
        assert round(spot_price(p), 2) == 0.82
        assert round(p.reserve_x / p.reserve_y, 2) == 1.22

    def test_case_study(self):
        before = PoolState(1000, 2000)
        after = apply_reserve_delta(before, 200, -400)
        assert (before.ratio, after.ratio) == (0.5, 0.75)
        assert spot_price(before) == 2
        assert round(spot_price(after), 3) == 1.333
        assert pendle_ratio_signal(before, after) is RatioSignal.IMPLIED_YIELD_UP

    def test_invalid(self):
        with pytest.raises(InvalidState):
            apply_reserve_delta(PoolState(10, 10), -10, 0)


class TestMintBurn:
    @pytest.mark.parametrize("pool,frac,out", [((100, 100), 1.0, (200, 200)),
                                               ((200, 200), -0.5, (100, 100)),
                                               ((100, 40000), 0.25, (125, 50000))])
    def test_examples(self, pool, frac, out):
        p = mint_burn_proportional(PoolState(*pool), frac)
        assert (p.reserve_x, p.reserve_y) == out
        assert spot_price(p) == pytest.approx(pool[1] / pool[0])

    def test_full_burn(self):
        with pytest.raises(InvalidState):
            mint_burn_proportional(PoolState(1, 1), -1.0)

    @given(reserve, reserve, st.floats(-0.99, 10))
    def test_price_unchanged(self, x, y, f):
        pool = PoolState(x, y)
        assert spot_price(mint_burn_proportional(pool, f)) == pytest.approx(spot_price(pool),
                                                                            rel=1e-12)


class TestArbitrage:
    def test_case_study(self):
        d, p = arbitrage_profit(2.0, 1.5, 100)
        assert d is ArbDirection.BUY_EXTERNAL_SELL_POOL and p == pytest.approx(50)
        d, p = arbitrage_profit(1600 / 1200, 1.5, 100)
        assert d is ArbDirection.BUY_POOL_SELL_EXTERNAL and round(p, 1) == 16.7

    def test_no_arb(self):
        assert arbitrage_profit(1.5, 1.5, 10) == (ArbDirection.NONE, 0.0)

    @given(st.floats(0.01, 100), st.floats(0.01, 100), st.floats(0.01, 1000))
    def test_antisymmetric(self, a, b, q):
        d1, p1 = arbitrage_profit(a, b, q)
        d2, p2 = arbitrage_profit(b, a, q)
        assert p1 == p2 >= 0
        if a != b:
            assert d1 != d2


class TestRatioSignal:
    def test_down_and_neutral(self):
        assert pendle_ratio_signal(PoolState(1200, 1600), PoolState(1000, 2000)) \
            is RatioSignal.IMPLIED_YIELD_DOWN
        assert pendle_ratio_signal(PoolState(5, 5), PoolState(5, 5)) is RatioSignal.NEUTRAL


def test_replay_jsonl(tmp_path):
    path = tmp_path / "ev.jsonl"
    lines = [{"block": 1, "mark": 11, "dx": "100", "dy": "100"},
             {"block": 2, "mark": 0, "dx": "20", "dy": "-20"},
             {"block": 3, "mark": 4}]
    path.write_text("".join(json.dumps(x) + "\n" for x in lines))
    out = tmp_path / "out.csv"
    assert replay_jsonl(str(path), PoolState(100, 100), str(out)) == 3
    rows = list(csv.DictReader(open(out)))
    assert [round(float(r["spot_price"]), 2) for r in rows] == [1.0, 0.82, 0.82]
