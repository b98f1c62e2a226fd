"""Synthetic event datasets with known generators."""

import numpy as np

from .events import EventSequence
from .tpp.hawkes import HawkesParams
from .tpp.simulate import simulate_thinning

# Sticky three-state mark chain over SwapIn, SwapOut and Mint
MARK_STATES = np.array([0, 1, 2])
MARK_TRANSITIONS = np.array([[0.1, 0.8, 0.1],
                             [0.8, 0.1, 0.1],
                             [0.45, 0.45, 0.1]])


def heavy_tail_dataset(n_sequences=500, n_events=100, seed=2019, short_gap=5, long_gap=500,
                       p_long=0.1, transitions=MARK_TRANSITIONS, states=MARK_STATES):
    """Sequences with i.i.d. two-point gaps and Markov marks.

    Gaps equal ``short_gap`` with probability ``1 - p_long`` and ``long_gap``
    otherwise, independently of the marks. The best constant gap predictor is
    the mixture mean, whose RMSE is the mixture standard deviation.
    """
    rng = np.random.default_rng(seed)
    transitions = np.asarray(transitions, dtype=float)
    out = []
    start = 1
    for i in range(n_sequences):
        gaps = np.where(rng.random(n_events - 1) < p_long, long_gap, short_gap)
        times = start + np.concatenate([[0], np.cumsum(gaps)])
        state = np.empty(n_events, dtype=np.int64)
        state[0] = rng.integers(len(states))
        u = rng.random(n_events)
        cum = np.cumsum(transitions, axis=1)
        for j in range(1, n_events):
            state[j] = min(int(np.searchsorted(cum[state[j - 1]], u[j], side="right")),
                           len(states) - 1)
        out.append(EventSequence(f"synthetic-{i:04d}", times, states[state]))
        start = int(times[-1]) + 1
    return out


def heavy_tail_optimum(short_gap=5, long_gap=500, p_long=0.1):
    """RMSE of the constant mean predictor (the mixture standard deviation)."""
    mean = (1 - p_long) * short_gap + p_long * long_gap
    return float(np.sqrt((1 - p_long) * (short_gap - mean) ** 2 + p_long * (long_gap - mean) ** 2))


def hawkes_dataset(params: HawkesParams, n_sequences=100, horizon=85.0, seed=2019, quantize=False):
    """Independent Hawkes sequences on ``(0, horizon]`` with per-sequence child seeds."""
    seeds = np.random.SeedSequence(seed).spawn(n_sequences)
    return [simulate_thinning(params, 0.0, horizon, seed=s.generate_state(1)[0],
                              quantize=quantize, asset_id=f"hawkes-{i:04d}")
            for i, s in enumerate(seeds)]
