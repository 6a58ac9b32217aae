import numpy as np
import pytest

from rwlat import (
    BlockSpec,
    ValidationError,
    build_mask,
    lookahead,
    mask_intervals,
    stacked_future_visibility,
)
from rwlat.blockmask import bitset_rows_to_mask, intervals_to_mask, mask_to_bitset_rows


def causal(n):
    return np.tril(np.ones((n, n), dtype=bool))


class TestBuildMask:
    @pytest.mark.parametrize("n", range(1, 65))
    def test_unit_block_no_right_context_is_causal(self, n):
        mask = build_mask(BlockSpec(m=1, r=0, seq_len=n))
        assert np.array_equal(mask, causal(n))

    def test_block_query_sees_all_main_plus_own_right_context(self):
        mask = build_mask(BlockSpec(m=2, r=1, seq_len=5))
        assert set(np.nonzero(mask[3])[0]) == {0, 1, 2, 3, 4}

    def test_first_block_query(self):
        mask = build_mask(BlockSpec(m=2, r=1, seq_len=5))
        assert set(np.nonzero(mask[0])[0]) == {0, 1, 2}

    def test_every_query_attends_itself(self):
        for m in (1, 2, 3, 5):
            for r in (0, 1, 4):
                mask = build_mask(BlockSpec(m=m, r=r, seq_len=13))
                assert mask.diagonal().all()

    def test_rows_identical_within_a_block(self):
        spec = BlockSpec(m=3, r=2, seq_len=14)
        mask = build_mask(spec)
        for p in range(spec.seq_len):
            n = p // spec.m
            assert np.array_equal(mask[p], mask[n * spec.m])

    def test_main_causality_bound(self):
        for m, r in [(1, 0), (2, 1), (3, 2), (4, 0)]:
            spec = BlockSpec(m=m, r=r, seq_len=23)
            mask = build_mask(spec)
            for p in range(spec.seq_len):
                n = p // m
                limit = (n + 1) * m + r
                assert not mask[p, limit:].any()

    def test_monotone_visibility_across_blocks(self):
        spec = BlockSpec(m=3, r=2, seq_len=18)
        mask = build_mask(spec)
        for n in range(1, spec.num_blocks):
            prev_main = mask[(n - 1) * spec.m, : n * spec.m]
            cur = mask[n * spec.m, : n * spec.m]
            assert np.all(cur >= prev_main[: n * spec.m] * 0 + prev_main)

    def test_final_partial_block_has_no_right_context(self):
        spec = BlockSpec(m=4, r=3, seq_len=10)
        mask = build_mask(spec)
        # Last block main = positions 8, 9; visibility capped at seq end.
        assert set(np.nonzero(mask[9])[0]) == set(range(10))

    def test_bad_specs_rejected(self):
        with pytest.raises(ValidationError):
            BlockSpec(m=0, r=0, seq_len=4)
        with pytest.raises(ValidationError):
            BlockSpec(m=1, r=-1, seq_len=4)
        with pytest.raises(ValidationError):
            BlockSpec(m=1, r=0, seq_len=0)


class TestLookahead:
    @pytest.mark.parametrize(
        "m,r,want", [(1, 0, (0, 0)), (2, 1, (1, 2)), (32, 16, (16, 47))]
    )
    def test_window_bounds(self, m, r, want):
        assert lookahead(BlockSpec(m=m, r=r, seq_len=64)) == want

    def test_matches_mask_future_visibility(self):
        for m, r in [(1, 0), (2, 1), (3, 2), (5, 3)]:
            spec = BlockSpec(m=m, r=r, seq_len=60)
            mask = build_mask(spec)
            lo, hi = lookahead(spec)
            futures = []
            # Use full (non-truncated) blocks only.
            for p in range((spec.seq_len // m - 1) * m):
                future = int(np.nonzero(mask[p])[0].max()) - p
                futures.append(future)
            assert max(futures) == hi
            assert min(futures) == lo


class TestLayerStacking:
    @pytest.mark.parametrize("m,r", [(1, 0), (2, 1), (3, 2), (4, 4), (5, 1)])
    @pytest.mark.parametrize("layers", [1, 2, 3, 4])
    def test_future_visibility_does_not_grow_with_depth(self, m, r, layers):
        for seq_len in (7, 16, 32):
            spec = BlockSpec(m=m, r=r, seq_len=seq_len)
            visibility = stacked_future_visibility(spec, layers)
            assert visibility <= r + m - 1

    def test_naive_causal_composition_stays_causal(self):
        spec = BlockSpec(m=1, r=0, seq_len=16)
        for layers in (1, 4):
            assert stacked_future_visibility(spec, layers) == 0


class TestExports:
    @pytest.mark.parametrize("m,r,n", [(1, 0, 8), (2, 1, 9), (3, 2, 16), (4, 0, 5)])
    def test_bitset_and_interval_forms_describe_identical_sets(self, m, r, n):
        spec = BlockSpec(m=m, r=r, seq_len=n)
        mask = build_mask(spec)
        via_bits = bitset_rows_to_mask(mask_to_bitset_rows(mask), n)
        via_intervals = intervals_to_mask(mask_intervals(spec), n)
        assert np.array_equal(mask, via_bits)
        assert np.array_equal(mask, via_intervals)