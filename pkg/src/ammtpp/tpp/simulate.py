"""Event simulation from fitted or hand-specified models."""

import math

import numpy as np

from ..events import CODEC, EventSequence
from ..exceptions import ExplosionAborted
from .hawkes import Hawkes, HawkesParams, simulate_hawkes

MAX_EVENTS = 10**6


def quantize_blocks(times, marks, asset_id=""):
    """Ceil real times to block numbers and merge same-block events (mark union)."""
    blocks = np.maximum(np.ceil(np.asarray(times, dtype=float)).astype(np.int64), 1)
    out_b, out_m = [], []
    for b, m in zip(blocks.tolist(), np.asarray(marks, dtype=np.int64).tolist()):
        if out_b and out_b[-1] == b:
            out_m[-1] = CODEC.union(out_m[-1], m)
        else:
            out_b.append(b)
            out_m.append(m)
    return EventSequence(asset_id, out_b, out_m)


def simulate_thinning(model, t_start=0.0, horizon=1000.0, seed=None, history=None,
                      quantize=True, asset_id="simulated", max_events=MAX_EVENTS):
    """Simulate events on ``(t_start, t_start + horizon]``.

    Parameters
    ----------
    model : HawkesParams, Hawkes or another TPP model
        Hawkes models use Ogata thinning; other families draw gaps sequentially
        by inverse-CDF sampling.
    history : tuple of arrays, optional
        ``(times, marks)`` conditioning events at or before ``t_start``.
    quantize : bool
        Ceil times to blocks and collapse collisions; otherwise keep real times.

    Returns
    -------
    EventSequence
        Only the newly simulated events.
    """
    rng = np.random.default_rng(seed)
    t_end = t_start + horizon
    h_times, h_marks = ([], []) if history is None else history
    if isinstance(model, Hawkes):
        model = model.hawkes_params()
    if isinstance(model, HawkesParams):
        events = simulate_hawkes(model, t_start, t_end, rng, history=(h_times, h_marks),
                                 max_events=max_events)
    else:
        events = []
        times = list(np.asarray(h_times, dtype=float))
        marks = list(np.asarray(h_marks, dtype=np.int64))
        t = t_start
        while True:
            gap, mark = model.sample_next(np.asarray(times), np.asarray(marks, dtype=np.int64), rng)
            if not math.isfinite(gap) or t + gap > t_end:
                break
            # a zero draw would break strict ordering
            t = t + max(gap, 1e-9)
            times.append(t)
            marks.append(mark)
            events.append((t, mark))
            if len(events) >= max_events:
                raise ExplosionAborted(f"more than {max_events} events simulated")
    if not events:
        return EventSequence.empty(asset_id)
    times = np.array([e[0] for e in events])
    marks = np.array([e[1] for e in events], dtype=np.int64)
    if quantize:
        return quantize_blocks(times, marks, asset_id)
    return EventSequence(asset_id, times, marks)
