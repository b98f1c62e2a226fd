"""Constant-product pool arithmetic.

Two ways of moving a pool are kept apart on purpose: ``execute_swap_cpmm``
keeps ``x * y`` fixed, while ``apply_reserve_delta`` adds observed reserve
changes verbatim (event replay), whatever they do to the product.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass

from .exceptions import InsufficientLiquidity, InvalidState


@dataclass(frozen=True)
class PoolState:
    reserve_x: float
    reserve_y: float

    def __post_init__(self):
        if self.reserve_x < 0 or self.reserve_y < 0:
            raise InvalidState(f"reserves must be nonnegative, got {self.reserve_x}, {self.reserve_y}")

    @property
    def invariant_k(self) -> float:
        return self.reserve_x * self.reserve_y

    @property
    def ratio(self) -> float:
        """x/y, e.g. the PT/SY ratio of a Pendle pool."""
        return self.reserve_x / self.reserve_y


@dataclass(frozen=True)
class SwapQuote:
    input_amount: float
    output_amount: float
    spot_before: float
    spot_after: float
    effective_price: float
    slippage_abs: float
    slippage_pct: float


def spot_price(pool: PoolState) -> float:
    """Price of x in units of y: ``y / x``."""
    if pool.reserve_x == 0:
        raise ZeroDivisionError("reserve_x is zero; spot price undefined")
    return pool.reserve_y / pool.reserve_x


def _check_quotable(pool):
    if pool.reserve_x <= 0 or pool.reserve_y <= 0:
        raise InvalidState("pool must have positive reserves to quote")


def execute_swap_cpmm(pool: PoolState, buy_x: float):
    """Buy ``buy_x`` units of x, paying y so that ``x * y`` stays constant."""
    _check_quotable(pool)
    if buy_x <= 0:
        raise ValueError("trade size must be positive")
    if buy_x >= pool.reserve_x:
        raise InsufficientLiquidity(f"cannot buy {buy_x} of {pool.reserve_x} available")
    new_x = pool.reserve_x - buy_x
    # y*dx/(x-dx) equals k/(x-dx) - y without the cancellation for small trades
    pay_y = pool.reserve_y * buy_x / new_x
    new_y = pool.reserve_y + pay_y
    spot0 = spot_price(pool)
    new = PoolState(new_x, new_y)
    eff = pay_y / buy_x
    quote = SwapQuote(pay_y, buy_x, spot0, spot_price(new), eff, eff - spot0, (eff - spot0) / spot0)
    return new, quote


def apply_reserve_delta(pool: PoolState, dx: float, dy: float) -> PoolState:
    x, y = pool.reserve_x + dx, pool.reserve_y + dy
    if x <= 0 or y <= 0:
        raise InvalidState(f"reserve delta ({dx}, {dy}) leaves non-positive reserves ({x}, {y})")
    return PoolState(x, y)


def mint_burn_proportional(pool: PoolState, lp_fraction: float) -> PoolState:
    """Scale both reserves by ``1 + lp_fraction`` (negative fractions burn)."""
    if lp_fraction <= -1:
        raise InvalidState("cannot burn 100% or more of the pool")
    return apply_reserve_delta(pool, pool.reserve_x * lp_fraction, pool.reserve_y * lp_fraction)


class ArbDirection(str, enum.Enum):
    BUY_EXTERNAL_SELL_POOL = "buy_external_sell_pool"
    BUY_POOL_SELL_EXTERNAL = "buy_pool_sell_external"
    NONE = "none"


def arbitrage_profit(pool_price: float, external_price: float, qty: float):
    """Fee-free price-taking arbitrage between a pool and an external venue."""
    if pool_price <= 0 or external_price <= 0 or qty <= 0:
        raise ValueError("prices and quantity must be positive")
    if external_price < pool_price:
        return ArbDirection.BUY_EXTERNAL_SELL_POOL, qty * (pool_price - external_price)
    if pool_price < external_price:
        return ArbDirection.BUY_POOL_SELL_EXTERNAL, qty * (external_price - pool_price)
    return ArbDirection.NONE, 0.0


class RatioSignal(str, enum.Enum):
    IMPLIED_YIELD_UP = "ImpliedYieldUp"
    IMPLIED_YIELD_DOWN = "ImpliedYieldDown"
    NEUTRAL = "Neutral"


def pendle_ratio_signal(before: PoolState, after: PoolState) -> RatioSignal:
    """Direction of the implied yield from the change of the PT/SY reserve ratio."""
    _check_quotable(before)
    _check_quotable(after)
    r0, r1 = before.ratio, after.ratio
    if r1 > r0:
        return RatioSignal.IMPLIED_YIELD_UP
    if r1 < r0:
        return RatioSignal.IMPLIED_YIELD_DOWN
    return RatioSignal.NEUTRAL


def replay(pool: PoolState, deltas):
    """Apply ``(block, dx, dy)`` deltas in order; yields ``(block, pool)`` after each."""
    for block, dx, dy in deltas:
        pool = apply_reserve_delta(pool, dx, dy)
        yield block, pool


def replay_jsonl(events_path, pool: PoolState, out_csv, scale=1.0):
    """Replay a unified JSON-lines file carrying ``dx``/``dy`` fields into a CSV.

    Lines without deltas leave the reserves unchanged. ``scale`` divides the
    raw integer amounts (e.g. ``1e18`` for wei).
    """
    rows = []
    with open(events_path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            dx = int(rec.get("dx", 0) or 0) / scale
            dy = int(rec.get("dy", 0) or 0) / scale
            rows.append((rec["block"], dx, dy))
    with open(out_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["block", "reserve_x", "reserve_y", "spot_price"])
        for block, state in replay(pool, rows):
            w.writerow([block, repr(state.reserve_x), repr(state.reserve_y), repr(spot_price(state))])
    return len(rows)
