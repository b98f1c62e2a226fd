"""Block-indexed marked event sequences.

Events carry a block height and a categorical mark. A mark encodes the set of
base transaction kinds that occurred together in one block: each of the five
TPP kinds owns one bit, and the class index is ``bitmask - 1`` so that the
31 non-empty subsets occupy classes 0..30 and class 31 stays free for padding.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import InsufficientData, InvalidMark

logger = logging.getLogger(__name__)

N_MARKS = 31
PAD_ID = 31


class BaseEventKind(str, enum.Enum):
    SWAP_IN = "SwapIn"
    SWAP_OUT = "SwapOut"
    MINT = "Mint"
    BURN = "Burn"
    UPDATE_IMPLIED_RATE = "UpdateImpliedRate"
    # lending kinds, used by the statistics module only
    SUPPLY = "Supply"
    BORROW = "Borrow"
    WITHDRAW = "Withdraw"
    REPAY = "Repay"
    LIQUIDATE = "Liquidate"

    @property
    def is_tpp(self) -> bool:
        return self in _BIT


TPP_KINDS = (
    BaseEventKind.SWAP_IN,
    BaseEventKind.SWAP_OUT,
    BaseEventKind.MINT,
    BaseEventKind.BURN,
    BaseEventKind.UPDATE_IMPLIED_RATE,
)
LENDING_KINDS = (
    BaseEventKind.SUPPLY,
    BaseEventKind.BORROW,
    BaseEventKind.WITHDRAW,
    BaseEventKind.REPAY,
    BaseEventKind.LIQUIDATE,
)
_BIT = {kind: i for i, kind in enumerate(TPP_KINDS)}


def _as_kind(kind) -> BaseEventKind:
    try:
        return BaseEventKind(kind)
    except ValueError:
        raise InvalidMark(f"unknown event kind {kind!r}") from None


@dataclass(frozen=True)
class MarkCodec:
    """Bijection between non-empty subsets of the TPP kinds and class ids."""

    pad_id: int = PAD_ID

    @property
    def bit_assignment(self) -> dict:
        return dict(_BIT)

    def encode(self, kinds: Iterable) -> int:
        mask = 0
        for kind in kinds:
            kind = _as_kind(kind)
            if not kind.is_tpp:
                raise InvalidMark(f"lending kind {kind.value} cannot form a TPP mark")
            mask |= 1 << _BIT[kind]
        if mask == 0:
            raise InvalidMark("a mark needs at least one event kind")
        return mask - 1

    def decode(self, mark: int) -> frozenset:
        mark = int(mark)
        if not 0 <= mark < N_MARKS:
            raise InvalidMark(f"class id {mark} is outside 0..{N_MARKS - 1}")
        mask = mark + 1
        return frozenset(k for k, bit in _BIT.items() if mask >> bit & 1)

    def union(self, a: int, b: int) -> int:
        """Mark of the union of the kind sets behind two marks."""
        return ((a + 1) | (b + 1)) - 1


CODEC = MarkCodec()


def encode_mark(kinds: Iterable) -> int:
    return CODEC.encode(kinds)


def decode_mark(mark: int) -> frozenset:
    return CODEC.decode(mark)


def kind_names(mark: int) -> list:
    """Kind names of a mark in bit order."""
    kinds = CODEC.decode(mark)
    return [k.value for k in TPP_KINDS if k in kinds]


@dataclass(frozen=True)
class Event:
    block: int
    mark: int
    pool_id: str = ""
    wallclock: int | None = None

    def __post_init__(self):
        if self.block <= 0:
            raise ValueError(f"block height must be positive, got {self.block}")
        if not 0 <= self.mark < N_MARKS:
            raise InvalidMark(f"class id {self.mark} is outside 0..{N_MARKS - 1}")


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class EventSequence:
    """Time-ordered marked events of one asset.

    ``times`` holds block heights. They are integral for ingested data; the
    simulator can also emit real-valued times before quantization.
    """

    asset_id: str
    times: np.ndarray
    marks: np.ndarray
    wallclock: np.ndarray | None = None

    def __post_init__(self):
        times = _frozen(self.times, np.float64).reshape(-1)
        marks = _frozen(self.marks, np.int64).reshape(-1)
        if times.shape != marks.shape:
            raise ValueError("times and marks must have the same length")
        if len(times) and (times[0] <= 0 or np.any(np.diff(times) <= 0)):
            raise ValueError("block heights must be positive and strictly increasing")
        if len(marks) and (marks.min() < 0 or marks.max() >= N_MARKS):
            raise InvalidMark("marks must lie in 0..30")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "marks", marks)
        if self.wallclock is not None:
            wc = _frozen(self.wallclock, np.float64).reshape(-1)
            if wc.shape != times.shape:
                raise ValueError("wallclock must align with times")
            object.__setattr__(self, "wallclock", wc)

    def __len__(self):
        return len(self.times)

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def start(self) -> float:
        return float(self.times[0]) if len(self) else math.inf

    @property
    def events(self) -> list:
        out = []
        for i, (t, m) in enumerate(zip(self.times, self.marks)):
            wc = None
            if self.wallclock is not None and np.isfinite(self.wallclock[i]):
                wc = int(self.wallclock[i])
            out.append(Event(int(t), int(m), self.asset_id, wc))
        return out

    def slice(self, start, stop) -> "EventSequence":
        wc = None if self.wallclock is None else self.wallclock[start:stop]
        return EventSequence(self.asset_id, self.times[start:stop], self.marks[start:stop], wc)

    @classmethod
    def from_events(cls, asset_id, events: Sequence[Event]) -> "EventSequence":
        wc = [np.nan if e.wallclock is None else e.wallclock for e in events]
        has_wc = any(e.wallclock is not None for e in events)
        return cls(asset_id, [e.block for e in events], [e.mark for e in events],
                   wc if has_wc else None)

    @classmethod
    def empty(cls, asset_id=""):
        return cls(asset_id, [], [])


@dataclass(frozen=True)
class DatasetSplit:
    train: list
    val: list
    test: list
    ratios: tuple = (0.70, 0.15, 0.15)

    @property
    def counts(self):
        return len(self.train), len(self.val), len(self.test)


def collapse_block(raw, asset_id="", wallclock=None) -> EventSequence:
    """Merge same-block ``(block, kind)`` pairs into one event per block.

    ``wallclock`` optionally gives one timestamp per raw pair; the first one
    seen for a block is kept.
    """
    blocks, marks, stamps = [], [], []
    for i, (block, kind) in enumerate(raw):
        bit = CODEC.encode([kind])
        wc = np.nan if wallclock is None or wallclock[i] is None else wallclock[i]
        if blocks and blocks[-1] == block:
            marks[-1] = CODEC.union(marks[-1], bit)
        elif blocks and block < blocks[-1]:
            raise ValueError("raw records must be sorted by block")
        else:
            blocks.append(block)
            marks.append(bit)
            stamps.append(wc)
    has_wc = wallclock is not None and any(np.isfinite(s) for s in stamps)
    return EventSequence(asset_id, blocks, marks, stamps if has_wc else None)


def window_split(seq: EventSequence, max_len: int = 300) -> list:
    """Cut a sequence into consecutive non-overlapping windows."""
    if max_len < 2:
        raise ValueError("max_len must be at least 2")
    return [seq.slice(i, i + max_len) for i in range(0, len(seq), max_len)]


def split_counts(n, ratios):
    n_train = int(math.floor(n * ratios[0] + 1e-9))
    n_val = int(math.floor(n * ratios[1] + 1e-9))
    return n_train, n_val, n - n_train - n_val


def chronological_split(seqs, ratios=(0.70, 0.15, 0.15)) -> DatasetSplit:
    """Sort sequences by start block and cut at cumulative ratio boundaries.

    Train and validation counts are floored; the remainder goes to test.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    if len(seqs) < 3:
        raise InsufficientData(f"need at least 3 sequences to split, got {len(seqs)}")
    order = sorted(range(len(seqs)), key=lambda i: (seqs[i].start, seqs[i].asset_id, i))
    ordered = [seqs[i] for i in order]
    n_train, n_val, _ = split_counts(len(ordered), ratios)
    split = DatasetSplit(ordered[:n_train], ordered[n_train:n_train + n_val],
                         ordered[n_train + n_val:], ratios)
    if 0 in split.counts:
        logger.warning("chronological split produced an empty part: %s", split.counts)
    return split


@dataclass
class PaddedBatch:
    """Right-padded batch; padded slots carry ``PAD_ID`` and mask False."""

    times: np.ndarray
    marks: np.ndarray
    mask: np.ndarray
    lengths: np.ndarray = field(default=None)

    @property
    def n_positions(self) -> int:
        # a position predicts event i+1 from the history ending at event i
        return int(self.mask[:, 1:].sum())


def pad_batch(seqs, length=None) -> PaddedBatch:
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    L = int(lengths.max()) if length is None else int(length)
    if L < lengths.max():
        raise ValueError("pad length shorter than the longest sequence")
    times = np.zeros((len(seqs), L))
    marks = np.full((len(seqs), L), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(seqs), L), dtype=bool)
    for b, s in enumerate(seqs):
        n = len(s)
        times[b, :n] = s.times
        if n:
            times[b, n:] = s.times[-1]
        marks[b, :n] = s.marks
        mask[b, :n] = True
    return PaddedBatch(times, marks, mask, lengths)


# -- unified JSON-lines format ------------------------------------------------

def sequence_to_records(seq: EventSequence, extras=None) -> list:
    out = []
    for i, (t, m) in enumerate(zip(seq.times, seq.marks)):
        wc = None
        if seq.wallclock is not None and np.isfinite(seq.wallclock[i]):
            wc = int(seq.wallclock[i])
        t = int(t) if float(t).is_integer() else float(t)
        rec = {"asset_id": seq.asset_id, "block": t, "mark": int(m),
               "kinds": kind_names(int(m)), "wallclock": wc}
        if extras is not None and extras[i]:
            rec.update(extras[i])
        out.append(rec)
    return out


def write_jsonl(path, seq: EventSequence, extras=None):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        for rec in sequence_to_records(seq, extras):
            fh.write(json.dumps(rec) + "\n")


def read_jsonl(path, asset_id=None) -> EventSequence:
    times, marks, wcs = [], [], []
    aid = asset_id
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if aid is None:
                aid = rec.get("asset_id", "")
            times.append(rec["block"])
            marks.append(rec["mark"])
            wc = rec.get("wallclock")
            wcs.append(np.nan if wc is None else wc)
    has_wc = any(np.isfinite(w) for w in wcs)
    return EventSequence(aid or "", times, marks, wcs if has_wc else None)


def load_unified(root, protocols=None) -> list:
    """Load every ``<protocol>/<pool>.jsonl`` under ``root`` in lexicographic order."""
    seqs = []
    for proto in sorted(os.listdir(root)):
        pdir = os.path.join(root, proto)
        if not os.path.isdir(pdir):
            continue
        if protocols and proto.lower() not in {p.lower() for p in protocols}:
            continue
        for name in sorted(os.listdir(pdir)):
            if name.endswith(".jsonl"):
                seq = read_jsonl(os.path.join(pdir, name))
                if len(seq):
                    seqs.append(seq)
    return seqs


class MarkEncoder(TransformerMixin, BaseEstimator):
    """Transformer mapping iterables of kind names to class ids and back."""

    def fit(self, X=None, y=None):
        self.n_classes_ = N_MARKS
        self.pad_id_ = PAD_ID
        return self

    def transform(self, X):
        return np.array([CODEC.encode(kinds) for kinds in X], dtype=np.int64)

    def inverse_transform(self, X):
        return [kind_names(int(m)) for m in X]
