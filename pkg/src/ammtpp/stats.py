"""Descriptive statistics of on-chain event activity.

All functions take plain block heights / timestamps (or sequences) and return
small result objects that the emitters at the bottom of the module write out
as CSV and JSON for plotting elsewhere.
"""

from __future__ import annotations

import csv
import json
import math
import os
from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special, stats as sps

from .events import EventSequence
from .exceptions import DegenerateFit, InsufficientData, MissingWallclock, Undefined


def events_per_block(blocks, bin_size=10_000, origin=None):
    """Average events per block for consecutive block-height bins.

    Bins start at ``origin`` (default: the lowest block) and every block in a
    bin counts in the denominator, occupied or not. Bins between the first and
    last occupied one are reported even when empty.

    Returns
    -------
    list of (bin_start, events_per_block)
    """
    if bin_size < 1:
        raise ValueError("bin_size must be >= 1")
    blocks = np.asarray(blocks, dtype=np.int64)
    if blocks.size == 0:
        return []
    origin = int(blocks.min()) if origin is None else int(origin)
    idx = (blocks - origin) // bin_size
    counts = np.bincount(idx - idx.min())
    first = int(idx.min())
    return [(origin + (first + i) * bin_size, c / bin_size) for i, c in enumerate(counts)]


@dataclass(frozen=True)
class GapSummary:
    count: int
    mean: float
    median: float
    max: float
    p99: float
    right_skew: bool


def gap_summary(seq) -> GapSummary:
    """Summary of inter-event gaps (in blocks) of a sequence or block array."""
    times = seq.times if isinstance(seq, EventSequence) else np.asarray(seq, dtype=float)
    if len(times) < 2:
        raise InsufficientData("gap summary needs at least two events")
    gaps = np.diff(times)
    mean = float(gaps.mean())
    median = float(np.median(gaps))
    return GapSummary(len(gaps), mean, median, float(gaps.max()),
                      float(np.percentile(gaps, 99)), median <= mean)


@dataclass(frozen=True)
class OccupancyPmf:
    support: np.ndarray
    pmf: np.ndarray
    alpha_hat: float
    empty_fraction: float | None = None
    n_blocks: int = 0


def powerlaw_alpha(x, method="mle"):
    """Power-law exponent of integer data ``x >= 1`` with ``x_min = 1``.

    ``method="mle"`` maximises the exact discrete likelihood
    ``-alpha * sum(log x) - n * log(zeta(alpha))``. ``method="approx"`` is the
    closed form ``1 + n / sum(log(x / 0.5))``, which is strongly biased when
    ``x_min`` is this small.
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0 or np.any(x < 1):
        raise ValueError("power-law data must be integers >= 1")
    if np.all(x == x[0]):
        raise DegenerateFit("all counts are equal; the exponent is undefined")
    n = x.size
    slog = float(np.log(x).sum())
    approx = 1.0 + n / float(np.log(x / 0.5).sum())
    if method == "approx":
        return approx

    def nll(a):
        return a * slog + n * math.log(special.zeta(a, 1.0))

    res = optimize.minimize_scalar(nll, bounds=(1.0 + 1e-6, 20.0), method="bounded",
                                   options={"xatol": 1e-10})
    return float(res.x)


def block_counts(blocks):
    """Events per occupied block, ordered by block."""
    c = Counter(int(b) for b in blocks)
    return np.array([c[b] for b in sorted(c)], dtype=np.int64)


def occupancy_pmf(blocks, block_range=None, method="mle") -> OccupancyPmf:
    """PMF of per-block event counts over occupied blocks, with a power-law fit.

    ``blocks`` lists one block height per raw (uncollapsed) event.
    ``block_range`` is an inclusive ``(first, last)`` window; when given, the
    fraction of empty blocks inside it is reported as well.
    """
    blocks = np.asarray(blocks, dtype=np.int64)
    n_range = None
    if block_range is not None:
        lo, hi = block_range
        if hi < lo:
            raise ValueError("block_range is empty")
        blocks = blocks[(blocks >= lo) & (blocks <= hi)]
        n_range = hi - lo + 1
    counts = block_counts(blocks)
    if counts.size == 0:
        raise InsufficientData("no events inside the block range")
    support, freq = np.unique(counts, return_counts=True)
    pmf = freq / freq.sum()
    alpha = powerlaw_alpha(counts, method=method)
    empty = None if n_range is None else 1.0 - counts.size / n_range
    return OccupancyPmf(support, pmf, alpha, empty, counts.size)


def select_trigger_blocks(blocks, volumes, q=95.0):
    """Blocks whose summed swap volume reaches the q-th percentile of per-block volume."""
    per_block = defaultdict(float)
    for b, v in zip(blocks, volumes):
        per_block[int(b)] += abs(float(v))
    if not per_block:
        return []
    keys = sorted(per_block)
    vals = np.array([per_block[k] for k in keys])
    cut = np.percentile(vals, q)
    return [k for k, v in zip(keys, vals) if v >= cut]


def trigger_conditional_probability(trigger_blocks, event_blocks, window):
    """P(at least one event at block t+k) over all trigger blocks t, for k in -K..K."""
    triggers = np.asarray(sorted(set(int(t) for t in trigger_blocks)), dtype=np.int64)
    if triggers.size == 0:
        raise ValueError("need at least one trigger block")
    occupied = set(int(b) for b in event_blocks)
    out = []
    for k in range(-window, window + 1):
        hits = sum(1 for t in triggers if int(t) + k in occupied)
        out.append((k, hits / triggers.size))
    return out


def _wallclocks(events):
    if isinstance(events, EventSequence):
        if events.wallclock is None:
            raise MissingWallclock("sequence has no wallclock timestamps")
        events = events.wallclock
    ts = [None if (t is None or (isinstance(t, float) and math.isnan(t))) else t for t in events]
    if any(t is None for t in ts):
        raise MissingWallclock("every event needs a wallclock timestamp")
    return np.asarray(ts, dtype=np.int64)


def binned_counts(timestamps, bin_seconds, span=None):
    """Event counts per fixed-width time bin over ``span`` (inclusive seconds), zeros kept."""
    ts = np.asarray(timestamps, dtype=np.int64)
    if span is None:
        if ts.size == 0:
            return np.zeros(0, dtype=np.int64)
        span = (int(ts.min()), int(ts.max()))
    start = span[0] // bin_seconds
    n_bins = span[1] // bin_seconds - start + 1
    idx = ts // bin_seconds - start
    idx = idx[(idx >= 0) & (idx < n_bins)]
    return np.bincount(idx, minlength=n_bins)


def coefficient_of_variation(counts):
    counts = np.asarray(counts, dtype=float)
    mean = counts.mean() if counts.size else 0.0
    if mean == 0:
        raise Undefined("coefficient of variation is undefined for a zero mean")
    return float(counts.std() / mean)


def burstiness_cv(events, bin_seconds=3600, span=None):
    """Population CV of hourly event counts (empty hours included)."""
    ts = _wallclocks(events)
    return coefficient_of_variation(binned_counts(ts, bin_seconds, span))


def _pearson(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.all(a == a[0]) or np.all(b == b[0]):
        return None
    a = a - a.mean()
    b = b - b.mean()
    return float(np.dot(a, b) / math.sqrt(np.dot(a, a) * np.dot(b, b)))


def correlation_matrices(series):
    """Pearson and Spearman matrices between named count series.

    Spearman is Pearson on average ranks (ties share their mean rank).
    Undefined entries (a constant series) are ``None``.
    """
    names = list(series)
    lengths = {len(series[n]) for n in names}
    if len(lengths) != 1 or lengths.pop() < 2:
        raise InsufficientData("need aligned series with at least 2 windows")
    ranks = {n: sps.rankdata(series[n], method="average") for n in names}
    k = len(names)
    pear = [[None] * k for _ in range(k)]
    spear = [[None] * k for _ in range(k)]
    for i in range(k):
        for j in range(i, k):
            p = _pearson(series[names[i]], series[names[j]])
            s = _pearson(ranks[names[i]], ranks[names[j]])
            if i == j and p is not None:
                p, s = 1.0, 1.0
            pear[i][j] = pear[j][i] = p
            spear[i][j] = spear[j][i] = s
    return {"kinds": names, "pearson": pear, "spearman": spear}


def lending_correlations(streams, window=14_400, span=None):
    """Correlations of per-kind event counts aggregated into fixed time windows.

    ``streams`` maps a kind name to the wallclock timestamps of its events.
    """
    all_ts = [t for ts in streams.values() for t in ts]
    if span is None:
        if not all_ts:
            raise InsufficientData("no lending events")
        span = (int(min(all_ts)), int(max(all_ts)))
    series = {k: binned_counts(_wallclocks(v), window, span) for k, v in sorted(streams.items())}
    return correlation_matrices(series)


# -- emitters -------------------------------------------------------------------

EPB_COLUMNS = ["protocol", "bin_start", "events_per_block"]
GAP_COLUMNS = ["pool", "count", "mean", "median", "max", "p99", "right_skew"]
OCCUPANCY_COLUMNS = ["protocol", "events_in_block", "probability"]
TRIGGER_COLUMNS = ["protocol", "offset", "probability"]
BURSTINESS_COLUMNS = ["pool", "cv"]
CORRELATION_COLUMNS = ["protocol", "kind_a", "kind_b", "pearson", "spearman"]


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow(["" if v is None else v for v in row])


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o)}")


def analyze_scan(scan, out_dir, bin_size=10_000, trigger_window=10, trigger_q=95.0):
    """Run every analysis over an ingest scan and write one CSV/JSON pair per analysis."""
    os.makedirs(out_dir, exist_ok=True)
    by_protocol = defaultdict(list)
    for key, recs in scan.records.items():
        by_protocol[key.split("/")[0]].extend(recs)

    epb_rows, occ_rows, trig_rows, corr_rows = [], [], [], []
    occ_json, trig_json, corr_json, notes = {}, {}, {}, {}
    for proto, recs in sorted(by_protocol.items()):
        blocks = [r.block for r in recs]
        for start, v in events_per_block(blocks, bin_size):
            epb_rows.append((proto, start, v))
        if blocks:
            try:
                pmf = occupancy_pmf(blocks, (min(blocks), max(blocks)))
                occ_json[proto] = {"alpha_hat": pmf.alpha_hat, "empty_fraction": pmf.empty_fraction,
                                   "support": pmf.support, "pmf": pmf.pmf}
                occ_rows.extend((proto, int(x), float(p)) for x, p in zip(pmf.support, pmf.pmf))
            except (DegenerateFit, InsufficientData) as exc:
                occ_json[proto] = {"alpha_hat": None, "error": str(exc)}
        swaps = [r for r in recs if r.kind.value in ("SwapIn", "SwapOut")]
        if swaps and proto.lower().startswith("uniswap"):
            vol = [abs(r.amount("amount0") or 0) for r in swaps]
            triggers = select_trigger_blocks([r.block for r in swaps], vol, trigger_q)
            for other, orecs in sorted(by_protocol.items()):
                probs = trigger_conditional_probability(triggers, [r.block for r in orecs],
                                                        trigger_window)
                trig_rows.extend((other, k, p) for k, p in probs)
                trig_json[other] = probs
        lending = [r for r in recs if not r.kind.is_tpp]
        if lending and all(r.wallclock is not None for r in lending):
            streams = defaultdict(list)
            for r in lending:
                streams[r.kind.value].append(r.wallclock)
            try:
                res = lending_correlations(streams)
            except InsufficientData as exc:
                notes[proto] = str(exc)
                continue
            corr_json[proto] = res
            ks = res["kinds"]
            for i, a in enumerate(ks):
                for j, b in enumerate(ks):
                    corr_rows.append((proto, a, b, res["pearson"][i][j], res["spearman"][i][j]))

    gap_rows, burst_rows = [], []
    for key, seq in sorted(scan.sequences.items()):
        if len(seq) >= 2:
            g = gap_summary(seq)
            gap_rows.append((key, g.count, g.mean, g.median, g.max, g.p99, g.right_skew))
        try:
            stamps = [r.wallclock for r in scan.records[key]]
            burst_rows.append((key, burstiness_cv(stamps)))
        except (MissingWallclock, Undefined):
            pass

    write_csv(os.path.join(out_dir, "epb.csv"), EPB_COLUMNS, epb_rows)
    write_csv(os.path.join(out_dir, "gaps.csv"), GAP_COLUMNS, gap_rows)
    write_csv(os.path.join(out_dir, "occupancy.csv"), OCCUPANCY_COLUMNS, occ_rows)
    write_csv(os.path.join(out_dir, "trigger.csv"), TRIGGER_COLUMNS, trig_rows)
    write_csv(os.path.join(out_dir, "burstiness.csv"), BURSTINESS_COLUMNS, burst_rows)
    write_csv(os.path.join(out_dir, "lending_correlations.csv"), CORRELATION_COLUMNS, corr_rows)
    summary = {"gaps": {r[0]: dict(zip(GAP_COLUMNS[1:], r[1:])) for r in gap_rows},
               "occupancy": occ_json, "trigger": trig_json,
               "burstiness": dict(burst_rows), "lending_correlations": corr_json,
               "notes": notes}
    write_json(os.path.join(out_dir, "stats.json"), summary)
    return summary
