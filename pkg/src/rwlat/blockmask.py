"""Block-processing self-attention masks with bounded lookahead.

The sequence is cut into blocks of m consecutive "main" positions; block n
additionally sees the r positions following it (its right context).  A query
in block n may attend to every main position of blocks 0..n (unbounded left
context) plus block n's right context, so the future visible to any query is
at most m - 1 + r positions, independent of how many layers are stacked:
right-context positions are recomputed inside each block rather than taken
from a later block's output.

With m = 1 and r = 0 this degenerates to the ordinary causal mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class BlockSpec:
    """Block step m, right-context size r, and the sequence length."""

    m: int
    r: int
    seq_len: int

    def __post_init__(self):
        if self.m < 1:
            raise ValidationError("block step m must be >= 1")
        if self.r < 0:
            raise ValidationError("right context r must be >= 0")
        if self.seq_len < 1:
            raise ValidationError("seq_len must be >= 1")

    @property
    def num_blocks(self) -> int:
        return -(-self.seq_len // self.m)

    def block_of(self, pos: int) -> int:
        return pos // self.m

    def row_end(self, pos: int) -> int:
        """One past the last key visible to the query at `pos`.

        Covers the main context of blocks 0..n plus block n's right context;
        the final partial block has no right context beyond the sequence.
        """
        n = self.block_of(pos)
        return min((n + 1) * self.m + self.r, self.seq_len)


def build_mask(spec: BlockSpec) -> np.ndarray:
    """Boolean (query, key) matrix; row p allows keys [0, row_end(p))."""
    ends = np.array([spec.row_end(p) for p in range(spec.seq_len)])
    return np.arange(spec.seq_len)[None, :] < ends[:, None]


def mask_intervals(spec: BlockSpec) -> list[tuple[int, int, int]]:
    """(query, start, end) key ranges; rows here are always one interval."""
    return [(p, 0, spec.row_end(p)) for p in range(spec.seq_len)]


def lookahead(spec: BlockSpec) -> tuple[int, int]:
    """(min, max) future positions visible to a main-context query.

    The last position of a block sees r future keys, the first sees
    r + m - 1; the bound does not grow with stacked layers.
    """
    return spec.r, spec.r + spec.m - 1


def mask_to_bitset_rows(mask: np.ndarray) -> list[bytes]:
    """Pack each row into little-endian-bit-order bytes."""
    return [np.packbits(row.astype(np.uint8), bitorder="little").tobytes() for row in mask]


def bitset_rows_to_mask(rows: list[bytes], seq_len: int) -> np.ndarray:
    out = np.zeros((len(rows), seq_len), dtype=bool)
    for q, packed in enumerate(rows):
        bits = np.unpackbits(np.frombuffer(packed, dtype=np.uint8), bitorder="little")
        out[q] = bits[:seq_len].astype(bool)
    return out


def intervals_to_mask(intervals: list[tuple[int, int, int]], seq_len: int) -> np.ndarray:
    out = np.zeros((seq_len, seq_len), dtype=bool)
    for q, start, end in intervals:
        out[q, start:end] = True
    return out


def _expanded_layout(spec: BlockSpec) -> tuple[np.ndarray, list[int], list[int]]:
    """Per-block computation layout: each block holds rows for its main
    positions followed by copies of its right-context positions.

    Returns the slot-level attention mask, the slot -> original-position
    map, and the main slots (the canonical output row per position).
    Right-context copies are local to their block, which is what keeps
    stacked-layer reachability bounded.
    """
    slots: list[int] = []
    block_main_slots: list[list[int]] = []
    block_right_slots: list[list[int]] = []
    for n in range(spec.num_blocks):
        main = list(range(n * spec.m, min((n + 1) * spec.m, spec.seq_len)))
        right = list(range((n + 1) * spec.m, min((n + 1) * spec.m + spec.r, spec.seq_len)))
        block_main_slots.append(list(range(len(slots), len(slots) + len(main))))
        slots.extend(main)
        block_right_slots.append(list(range(len(slots), len(slots) + len(right))))
        slots.extend(right)

    num_slots = len(slots)
    mask = np.zeros((num_slots, num_slots), dtype=bool)
    visible_main: list[int] = []
    for n in range(spec.num_blocks):
        visible_main.extend(block_main_slots[n])
        rows = block_main_slots[n] + block_right_slots[n]
        cols = visible_main + block_right_slots[n]
        mask[np.ix_(rows, cols)] = True
    main_slots = [s for per_block in block_main_slots for s in per_block]
    return mask, slots, main_slots


def stacked_future_visibility(spec: BlockSpec, layers: int) -> int:
    """Largest future offset reachable by any main output after `layers`
    applications of the block mask (boolean reachability closure)."""
    if layers < 1:
        raise ValidationError("layers must be >= 1")
    mask, slots, main_slots = _expanded_layout(spec)
    step = mask.astype(np.int64)
    reach = step.copy()
    for _ in range(layers - 1):
        reach = np.minimum(reach @ step, 1)
    worst = 0
    for slot in main_slots:
        pos = slots[slot]
        reachable = np.nonzero(reach[slot])[0]
        if reachable.size:
            worst = max(worst, max(slots[s] for s in reachable) - pos)
    return worst
