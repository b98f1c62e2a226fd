"""Input checks shared by the estimators and the command line."""

import numpy as np

from .events import N_MARKS, EventSequence
from .exceptions import InvalidMark


def check_sequence(obj, index=0):
    """Coerce an EventSequence, a ``(times, marks)`` pair or a dict to EventSequence."""
    if isinstance(obj, EventSequence):
        return obj
    if isinstance(obj, dict):
        return EventSequence(str(obj.get("asset_id", f"seq-{index}")), obj["times"], obj["marks"])
    if isinstance(obj, (tuple, list)) and len(obj) == 2:
        return EventSequence(f"seq-{index}", obj[0], obj[1])
    raise TypeError(f"cannot interpret element {index} of type {type(obj).__name__} as a sequence")


def check_sequences(X, min_events=1, n_marks=N_MARKS):
    """Validate a collection of sequences.

    Parameters
    ----------
    X : EventSequence or iterable of sequence-like objects
    min_events : int
        Minimum length required of every sequence.
    n_marks : int
        Marks must be below this value.

    Returns
    -------
    list of EventSequence
    """
    if isinstance(X, EventSequence):
        X = [X]
    seqs = [check_sequence(x, i) for i, x in enumerate(X)]
    if not seqs:
        raise ValueError("expected at least one sequence")
    for s in seqs:
        if len(s) < min_events:
            raise ValueError(f"sequence {s.asset_id!r} has {len(s)} events, "
                             f"fewer than {min_events}")
        if len(s) and s.marks.max() >= n_marks:
            raise InvalidMark(f"sequence {s.asset_id!r} has marks outside 0..{n_marks - 1}")
    return seqs


def check_positive(name, value, allow_zero=False):
    value = float(value)
    if not (value >= 0 if allow_zero else value > 0) or not np.isfinite(value):
        raise ValueError(f"{name} must be {'nonnegative' if allow_zero else 'positive'}, got {value}")
    return value


def check_horizons(horizons):
    """Parse ``"3,5,7"`` or an iterable into a tuple of positive ints."""
    if isinstance(horizons, str):
        horizons = [h for h in horizons.split(",") if h.strip()]
    try:
        out = tuple(int(h) for h in horizons)
    except (TypeError, ValueError):
        raise ValueError(f"invalid horizons: {horizons!r}")
    if not out or min(out) < 1:
        raise ValueError("horizons must be positive integers")
    return out


def check_ratios(ratios):
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be three positive numbers summing to 1, got {ratios}")
    return ratios
