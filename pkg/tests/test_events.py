import itertools
import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ammtpp.events import (CODEC, N_MARKS, PAD_ID, TPP_KINDS, BaseEventKind, Event, EventSequence,
                           MarkEncoder, chronological_split, collapse_block, decode_mark,
                           encode_mark, kind_names, load_unified, pad_batch, read_jsonl,
                           split_counts, window_split, write_jsonl)
from ammtpp.exceptions import InsufficientData, InvalidMark

K = BaseEventKind


def seq_of(n, start=1, asset="a", step=1):
    return EventSequence(asset, start + step * np.arange(n), np.arange(n) % N_MARKS)


class TestMarkCodec:
    def test_single_kind(self):
        assert encode_mark({K.SWAP_IN}) == 0

    def test_mint_burn(self):
        assert encode_mark({K.MINT, K.BURN}) == 11

    def test_all_kinds(self):
        assert encode_mark(set(TPP_KINDS)) == 30

    def test_bijection_over_all_subsets(self):
        seen = {}
        for r in range(1, 6):
            for subset in itertools.combinations(TPP_KINDS, r):
                c = encode_mark(subset)
                assert 0 <= c < N_MARKS
                assert c not in seen
                seen[c] = frozenset(subset)
                assert decode_mark(c) == frozenset(subset)
        assert sorted(seen) == list(range(31))
        assert PAD_ID not in seen

    def test_bit_order(self):
        assert CODEC.bit_assignment == {K.SWAP_IN: 0, K.SWAP_OUT: 1, K.MINT: 2, K.BURN: 3,
                                        K.UPDATE_IMPLIED_RATE: 4}

    def test_accepts_names(self):
        assert encode_mark(["Mint", "Burn"]) == 11
        assert kind_names(11) == ["Mint", "Burn"]

    @pytest.mark.parametrize("kinds", [set(), {K.SUPPLY}, {K.SWAP_IN, K.BORROW}, {"Nope"}])
    def test_invalid(self, kinds):
        with pytest.raises(InvalidMark):
            encode_mark(kinds)

    @pytest.mark.parametrize("mark", [-1, 31, 99])
    def test_decode_out_of_range(self, mark):
        with pytest.raises(InvalidMark):
            decode_mark(mark)

    @given(st.integers(0, 30), st.integers(0, 30))
    def test_union_is_set_union(self, a, b):
        assert decode_mark(CODEC.union(a, b)) == decode_mark(a) | decode_mark(b)

    def test_mark_encoder_roundtrip(self):
        enc = MarkEncoder().fit()
        ids = enc.transform([["SwapIn"], ["Mint", "Burn"]])
        assert ids.tolist() == [0, 11]
        assert enc.inverse_transform(ids) == [["SwapIn"], ["Mint", "Burn"]]
        assert enc.pad_id_ == 31


class TestEvent:
    def test_validation(self):
        with pytest.raises(ValueError):
            Event(0, 1)
        with pytest.raises(InvalidMark):
            Event(5, 31)

    def test_sequence_validation(self):
        with pytest.raises(ValueError):
            EventSequence("a", [3, 3], [0, 0])
        with pytest.raises(InvalidMark):
            EventSequence("a", [1, 2], [0, 31])

    def test_gaps_and_events(self):
        s = EventSequence("a", [100, 101, 117], [0, 1, 2], [10, np.nan, 30])
        assert s.gaps.tolist() == [1, 16]
        ev = s.events
        assert ev[1].wallclock is None and ev[2].wallclock == 30
        assert EventSequence.from_events("a", ev).times.tolist() == [100, 101, 117]


class TestCollapse:
    def test_union_per_block(self):
        s = collapse_block([(10, K.MINT), (10, K.BURN), (12, K.SWAP_IN)])
        assert s.times.tolist() == [10, 12]
        assert s.marks.tolist() == [11, 0]

    def test_single(self):
        s = collapse_block([(5, K.SWAP_OUT)])
        assert s.marks.tolist() == [1]

    def test_idempotent_union(self):
        s = collapse_block([(7, K.MINT), (7, K.MINT)])
        assert (s.times.tolist(), s.marks.tolist()) == ([7], [3])

    def test_empty(self):
        assert len(collapse_block([])) == 0

    def test_unsorted_rejected(self):
        with pytest.raises(ValueError):
            collapse_block([(7, K.MINT), (5, K.MINT)])

    @given(st.lists(st.tuples(st.integers(1, 40), st.sampled_from(TPP_KINDS)), max_size=60))
    def test_gaps_at_least_one(self, raw):
        s = collapse_block(sorted(raw, key=lambda r: r[0]))
        assert np.all(s.gaps >= 1)
        assert len(s) == len({b for b, _ in raw})


class TestWindows:
    @pytest.mark.parametrize("n,lengths", [(700, [300, 300, 100]), (300, [300]), (301, [300, 1])])
    def test_lengths(self, n, lengths):
        assert [len(w) for w in window_split(seq_of(n))] == lengths

    def test_identity(self):
        s = seq_of(300)
        (w,) = window_split(s)
        assert np.array_equal(w.times, s.times) and np.array_equal(w.marks, s.marks)

    def test_bad_max_len(self):
        with pytest.raises(ValueError):
            window_split(seq_of(3), 1)

    @given(st.integers(0, 200), st.integers(2, 50))
    def test_concatenation(self, n, max_len):
        s = seq_of(n)
        ws = window_split(s, max_len)
        joined = np.concatenate([w.times for w in ws]) if ws else np.zeros(0)
        assert np.array_equal(joined, s.times)
        assert all(len(w) == max_len for w in ws[:-1])


class TestSplit:
    def test_counts_large(self):
        assert split_counts(1624, (0.70, 0.15, 0.15)) == (1136, 243, 245)

    def test_counts_ten(self):
        sp = chronological_split([seq_of(2, start=10 * i + 1, asset=str(i)) for i in range(10)])
        assert sp.counts == (7, 1, 2)

    def test_three_with_warning(self, caplog):
        with caplog.at_level(logging.WARNING):
            sp = chronological_split([seq_of(2, start=10 * i + 1) for i in range(3)])
        assert sp.counts == (2, 0, 1)
        assert "empty" in caplog.text

    def test_too_few(self):
        with pytest.raises(InsufficientData):
            chronological_split([seq_of(2), seq_of(2)])

    @pytest.mark.parametrize("ratios", [(0.5, 0.5, 0.1), (0.0, 0.5, 0.5), (0.7, 0.3)])
    def test_bad_ratios(self, ratios):
        with pytest.raises(ValueError):
            chronological_split([seq_of(2)] * 5, ratios)

    @given(st.lists(st.integers(1, 10_000), min_size=3, max_size=80, unique=True))
    def test_chronological_boundary(self, starts):
        seqs = [seq_of(2, start=s, asset=f"s{i}") for i, s in enumerate(starts)]
        sp = chronological_split(seqs)
        assert sum(sp.counts) == len(seqs)
        ids = [id(s) for part in (sp.train, sp.val, sp.test) for s in part]
        assert len(set(ids)) == len(seqs)
        if sp.train and sp.test:
            assert max(s.start for s in sp.train) <= min(s.start for s in sp.test)


class TestPadding:
    def test_pad(self):
        b = pad_batch([seq_of(3), seq_of(1, start=5)])
        assert b.marks[1].tolist() == [0, PAD_ID, PAD_ID]
        assert b.mask.tolist() == [[True] * 3, [True, False, False]]
        assert b.times[1].tolist() == [5, 5, 5]
        assert b.n_positions == 2


class TestUnifiedFormat:
    def test_roundtrip(self, tmp_path):
        s = EventSequence("pool", [3, 9], [11, 0], [100, np.nan])
        path = tmp_path / "uniswap" / "pool.jsonl"
        write_jsonl(str(path), s)
        line = path.read_text().splitlines()[0]
        assert '"kinds": ["Mint", "Burn"]' in line
        back = read_jsonl(str(path))
        assert back.asset_id == "pool" and back.marks.tolist() == [11, 0]
        assert [len(x) for x in load_unified(str(tmp_path))] == [2]
