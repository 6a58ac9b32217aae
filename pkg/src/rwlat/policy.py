"""Fixed and learned streaming policies: wait-k paths and greedy decoding.

A Scorer is anything that, given the number of source units currently
visible and the tokens emitted so far, returns a normalized log-distribution
over the vocabulary plus blank.  greedy_decode drives such a scorer
chunk-by-chunk: blank means "read another chunk", anything else is written.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import ScorerError, ValidationError
from .lattice import READ, WRITE, ActionPath, Vocab

_NORMALIZATION_TOL = 1e-6


@dataclass(frozen=True)
class ChunkConfig:
    """Decision step size: source units consumed per READ."""

    d: int = 1

    def __post_init__(self):
        if self.d < 1:
            raise ValidationError("decision step size d must be >= 1")


@runtime_checkable
class Scorer(Protocol):
    """Callable scoring contract used by greedy_decode.

    Implementations must be safe for concurrent invocation (or document
    otherwise); greedy_decode itself is single-threaded per sentence.
    """

    vocab: Vocab

    def __call__(self, src_units: int, prev_tokens: Sequence[int]) -> np.ndarray:
        """Normalized log-distribution over vocab + blank (last index)."""
        ...


def chunk_source(src_len: int, cfg: ChunkConfig) -> int:
    """Number of decision steps covering the source; last chunk may be short."""
    if src_len < 1:
        raise ValidationError("src_len must be >= 1")
    return -(-src_len // cfg.d)


def wait_k_path(src_len: int, tgt_tokens: Sequence[int], k: int) -> ActionPath:
    """Read k units (clipped), then alternate WRITE/READ; flush leftovers.

    Always emits exactly src_len READs and len(tgt_tokens) WRITEs: once the
    source runs out the remaining tokens are written back-to-back, and once
    the target is spelled the remaining source is read to completion.
    """
    if k < 1:
        raise ValidationError("wait-k requires k >= 1")
    if src_len < 1:
        raise ValidationError("src_len must be >= 1")
    tokens = tuple(tgt_tokens)
    reads = min(k, src_len)
    actions = [READ] * reads
    for idx in range(len(tokens)):
        actions.append(WRITE)
        if idx < len(tokens) - 1 and reads < src_len:
            actions.append(READ)
            reads += 1
    actions.extend([READ] * (src_len - reads))
    return ActionPath(actions="".join(actions), tokens=tokens)


@dataclass(frozen=True)
class DecodeResult:
    path: ActionPath
    tokens: tuple[int, ...]
    delays: tuple[int, ...]


def _validated_scores(scorer: Scorer, src_units: int, prev: tuple[int, ...]) -> np.ndarray:
    scores = np.asarray(scorer(src_units, prev), dtype=np.float64)
    if scores.ndim != 1 or scores.shape[0] != scorer.vocab.size + 1:
        raise ScorerError(
            f"scorer returned shape {scores.shape}, expected ({scorer.vocab.size + 1},)"
        )
    with np.errstate(divide="ignore"):
        m = float(np.max(scores))
        lse = m + np.log(np.sum(np.exp(scores - m))) if np.isfinite(m) else m
    if not abs(lse) <= _NORMALIZATION_TOL:
        raise ScorerError(f"scorer distribution not normalized (logsumexp {lse:.3g})")
    return scores


def greedy_decode(
    scorer: Scorer,
    src_len: int,
    cfg: ChunkConfig,
    max_tgt: int | None = None,
) -> DecodeResult:
    """Argmax streaming decode: blank reads the next chunk, tokens are written.

    At the final chunk blank is masked to -inf so the decoder must finish the
    sentence.  Stops on eos or after max_tgt tokens (default 2 * src_len + 8).
    Argmax ties break toward the lowest index, so identical scorers and
    inputs always reproduce the same path.
    """
    if max_tgt is None:
        max_tgt = 2 * src_len + 8
    if max_tgt < 1:
        raise ValidationError("max_tgt must be >= 1")
    vocab = scorer.vocab
    num_chunks = chunk_source(src_len, cfg)

    actions = [READ]
    chunks_read = 1
    tokens: list[int] = []
    delays: list[int] = []
    while True:
        units = min(chunks_read * cfg.d, src_len)
        scores = _validated_scores(scorer, units, tuple(tokens))
        if chunks_read == num_chunks:
            scores = scores.copy()
            scores[vocab.blank_id] = -np.inf
        best = int(np.argmax(scores))
        if best == vocab.blank_id:
            actions.append(READ)
            chunks_read += 1
            continue
        actions.append(WRITE)
        tokens.append(best)
        delays.append(units)
        if best == vocab.eos_id or len(tokens) >= max_tgt:
            break
    return DecodeResult(
        path=ActionPath(actions="".join(actions), tokens=tuple(tokens)),
        tokens=tuple(tokens),
        delays=tuple(delays),
    )
