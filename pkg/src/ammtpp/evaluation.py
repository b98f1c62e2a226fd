"""Next-event decoding, metrics and autoregressive rollout."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .events import pad_batch
from .exceptions import ShapeError

HORIZONS = (3, 5, 7, 9, 11)


@dataclass(frozen=True)
class OtdConfig:
    delete_cost: float = 1.0
    horizons: tuple = HORIZONS
    rollout: str = "deterministic"
    n_draws: int = 10
    seed: int = 2019
    anchor_fraction: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "horizons", tuple(int(h) for h in self.horizons))
        if not self.delete_cost > 0:
            raise ValueError("delete_cost must be positive")
        if not self.horizons or min(self.horizons) < 1:
            raise ValueError("horizons must be a nonempty list of positive integers")
        if self.rollout not in ("deterministic", "sampled"):
            raise ValueError("rollout must be 'deterministic' or 'sampled'")
        if self.n_draws < 1:
            raise ValueError("n_draws must be >= 1")
        if not 0 < self.anchor_fraction < 1:
            raise ValueError("anchor_fraction must lie in (0, 1)")


@dataclass
class MetricsReport:
    type_accuracy: float
    time_rmse: float
    otd: dict = field(default_factory=dict)
    n_events: int = 0
    n_fallback: int = 0

    def flat(self):
        out = {"type_accuracy": self.type_accuracy, "time_rmse": self.time_rmse}
        out.update({f"otd_h{h}": v for h, v in sorted(self.otd.items())})
        return out

    def to_dict(self):
        return {"type_accuracy": self.type_accuracy, "time_rmse": self.time_rmse,
                "otd": {str(h): v for h, v in sorted(self.otd.items())},
                "n_events": self.n_events, "n_fallback": self.n_fallback}

    def to_json(self):
        """Canonical JSON: sorted keys, shortest round-trip float repr."""
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def decode_next(model, times, marks):
    """Most likely next mark (lowest index on ties) and the point-predicted gap."""
    gap, _ = model.gap_point_prediction(times, marks)
    logp = model.mark_log_probs(times, marks, gap)
    return int(np.argmax(logp)), float(gap)


def _pair(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("metrics need at least one element")
    return a, b


def type_accuracy(preds, truths):
    preds, truths = _pair(preds, truths)
    return float(np.mean(preds == truths))


def time_rmse(pred_gaps, true_gaps):
    pred, true = _pair(np.asarray(pred_gaps, float), np.asarray(true_gaps, float))
    return float(math.sqrt(np.mean((pred - true) ** 2)))


def otd(pred_seq, true_seq, delete_cost=1.0):
    """Minimum-cost monotone alignment between two (time, mark) sequences.

    Only equal marks may be aligned, at cost ``|t_pred - t_true|``; every
    unaligned event on either side costs ``delete_cost``.
    """
    if isinstance(delete_cost, OtdConfig):
        delete_cost = delete_cost.delete_cost
    C = float(delete_cost)
    n, m = len(pred_seq), len(true_seq)
    D = np.zeros((n + 1, m + 1))
    D[:, 0] = C * np.arange(n + 1)
    D[0, :] = C * np.arange(m + 1)
    for i in range(1, n + 1):
        tp, yp = pred_seq[i - 1]
        for j in range(1, m + 1):
            tt, yt = true_seq[j - 1]
            best = min(D[i - 1, j], D[i, j - 1]) + C
            if yp == yt:
                best = min(best, D[i - 1, j - 1] + abs(tp - tt))
            D[i, j] = best
    return float(D[n, m])


def otd_bruteforce(pred_seq, true_seq, delete_cost=1.0):
    """Enumerate every monotone matching; exponential, for checking only."""
    C = float(delete_cost)
    n, m = len(pred_seq), len(true_seq)
    best = C * (n + m)
    for k in range(1, min(n, m) + 1):
        for I in itertools.combinations(range(n), k):
            for J in itertools.combinations(range(m), k):
                if any(pred_seq[i][1] != true_seq[j][1] for i, j in zip(I, J)):
                    continue
                cost = sum(abs(pred_seq[i][0] - true_seq[j][0]) for i, j in zip(I, J))
                best = min(best, cost + C * (n + m - 2 * k))
    return float(best)


def rollout(model, times, marks, H, mode="deterministic", n_draws=1, seed=None):
    """Continue a history for ``H`` events.

    Deterministic mode appends :func:`decode_next` results and returns one
    list of (time, mark); sampled mode returns ``n_draws`` sampled lists
    (each possibly shorter than ``H`` if the model produces no further event).
    """
    if H < 1:
        raise ValueError("H must be >= 1")
    times = [float(t) for t in times]
    marks = [int(m) for m in marks]
    if mode == "deterministic":
        out = []
        t_cur, m_cur = list(times), list(marks)
        for _ in range(H):
            mark, gap = decode_next(model, np.asarray(t_cur), np.asarray(m_cur, dtype=np.int64))
            t_new = (t_cur[-1] if t_cur else 0.0) + gap
            out.append((t_new, mark))
            t_cur.append(t_new)
            m_cur.append(mark)
        return out
    if mode != "sampled":
        raise ValueError("mode must be 'deterministic' or 'sampled'")
    rng = np.random.default_rng(seed)
    draws = []
    for _ in range(n_draws):
        t_cur, m_cur, out = list(times), list(marks), []
        for _ in range(H):
            gap, mark = model.sample_next(np.asarray(t_cur), np.asarray(m_cur, dtype=np.int64), rng)
            if not math.isfinite(gap):
                break
            t_new = (t_cur[-1] if t_cur else 0.0) + gap
            out.append((t_new, int(mark)))
            t_cur.append(t_new)
            m_cur.append(int(mark))
        draws.append(out)
    return draws


def next_event_outputs(model, seqs, chunk=128):
    """Teacher-forced predictions for every position with at least one past event."""
    seqs = [s for s in seqs if len(s) >= 2]
    keys = ("pred_mark", "marks", "pred_gap", "gaps", "fallback")
    parts = {k: [] for k in keys}
    for start in range(0, len(seqs), chunk):
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            out = model.position_outputs(pad_batch(seqs[start:start + chunk]))
        for k in keys:
            parts[k].append(np.asarray(out[k]))
    return {k: np.concatenate(v) if v else np.zeros(0) for k, v in parts.items()}


def sequence_otd(model, seq, horizon, config: OtdConfig, seed=None):
    """OTD of one sequence's continuation from its anchor prefix.

    The true continuation is the next ``horizon`` events after the anchor
    (fewer near the end of the sequence); predictions are cut to the same
    length.
    """
    n_anchor = max(1, int(math.floor(config.anchor_fraction * len(seq))))
    true = [(float(t), int(m)) for t, m in zip(seq.times[n_anchor:n_anchor + horizon],
                                               seq.marks[n_anchor:n_anchor + horizon])]
    hist_t, hist_m = seq.times[:n_anchor], seq.marks[:n_anchor]
    if config.rollout == "deterministic":
        pred = rollout(model, hist_t, hist_m, horizon)[:len(true)]
        return otd(pred, true, config.delete_cost)
    draws = rollout(model, hist_t, hist_m, horizon, "sampled", config.n_draws, seed)
    return float(np.mean([otd(d[:len(true)], true, config.delete_cost) for d in draws]))


def evaluate(model, test_seqs, config: OtdConfig | None = None):
    """Type accuracy and time RMSE under teacher forcing plus OTD per horizon."""
    config = config or OtdConfig()
    seqs = sorted((s for s in test_seqs if len(s) >= 2), key=lambda s: s.asset_id)
    if not seqs:
        raise ValueError("test split has no sequence with two or more events")
    out = next_event_outputs(model, seqs)
    report = MetricsReport(type_accuracy(out["pred_mark"], out["marks"]),
                           time_rmse(out["pred_gap"], out["gaps"]),
                           n_events=int(len(out["gaps"])),
                           n_fallback=int(np.sum(out["fallback"])))
    seeds = np.random.SeedSequence(config.seed).spawn(len(seqs))
    for h in config.horizons:
        vals = [sequence_otd(model, s, h, config, seed=seeds[i].generate_state(1)[0] + h)
                for i, s in enumerate(seqs)]
        report.otd[h] = float(np.mean(vals))
    return report
