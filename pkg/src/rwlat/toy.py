"""Desk-scale end-to-end demonstration of latency-aware transducer training.

The synthetic task maps each source token through a fixed random bijection
and optionally swaps adjacent output pairs, so producing the first token of
a swapped pair benefits from one token of lookahead: quality genuinely
competes with latency.

The scorer is deliberately tiny and hand-differentiated: token embeddings,
a few cheap streaming summaries of the source prefix (last two tokens read,
mean of everything read, how far reading runs ahead of writing, whether the
source is exhausted), one tanh hidden layer, and a log-softmax output over
vocab + blank.  Training chains the lattice kernel's score-space gradients
through this network with plain momentum SGD.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import NonFiniteLossError, TrainingDivergedError, ValidationError
from .errors import NoAdmissiblePathError
from .lattice import (
    Lattice,
    TargetSequence,
    Vocab,
    arc_posteriors,
    arc_weights,
    forward_backward,
    log_marginal_nll,
    normalize_scores,
    weight_grad_to_score_grad,
)
from .latency import (
    LatencyParams,
    average_lagging,
    differentiable_average_lagging,
    latency_expectation,
    latency_weight_gradients,
    path_latency,
)
from .policy import ChunkConfig, greedy_decode

_N_ALIGN_FEATURES = 7  # five read-ahead bins, source-exhausted flag, write parity


# ---------------------------------------------------------------------------
# Synthetic reordering task.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Token-mapping task with adjacent-pair swaps.

    num_content content tokens plus eos form the real vocabulary; blank is
    appended by the Vocab convention.  Sources draw content tokens uniformly;
    targets apply a fixed random bijection and swap adjacent output pairs.

    swap_prob is the approximate fraction of pairs swapped, realized through
    two fixed random trigger sets so that swaps are a deterministic function
    of not-yet-read source tokens:

    - next-token triggers (round(swap_prob * num_content) tokens): a pair is
      swapped when its second source token is one of them, so getting the
      first token of a pair right takes one token of lookahead;
    - sentence-final flip tokens (a small set, empty at swap_prob 0 or 1):
      when the last source token is one of them, every pair in the sentence
      swaps regardless of triggers, so full quality requires having read the
      whole source, no matter how large a fixed lookahead is.

    Together these put translation quality in genuine, multi-scale tension
    with latency.
    """

    num_content: int = 32
    min_src_len: int = 4
    max_src_len: int = 12
    swap_prob: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.num_content < 2:
            raise ValidationError("need at least two content tokens")
        if not 1 <= self.min_src_len <= self.max_src_len:
            raise ValidationError("bad source length range")
        if not 0.0 <= self.swap_prob <= 1.0:
            raise ValidationError("swap_prob must be in [0, 1]")

    @property
    def vocab(self) -> Vocab:
        return Vocab(size=self.num_content + 1, eos_id=self.num_content)

    @property
    def num_triggers(self) -> int:
        return round(self.swap_prob * self.num_content)

    @property
    def num_flip_tokens(self) -> int:
        return round(0.3 * self.num_content * self.swap_prob * (1.0 - self.swap_prob))


Sentence = tuple[tuple[int, ...], tuple[int, ...]]


def generate_corpus(spec: SyntheticTaskSpec, n: int) -> list[Sentence]:
    """n (source, target) pairs, fully determined by spec.seed."""
    if n < 1:
        raise ValidationError("corpus size must be >= 1")
    rng = np.random.default_rng(spec.seed)
    mapping = rng.permutation(spec.num_content)
    triggers = set(
        rng.choice(spec.num_content, size=spec.num_triggers, replace=False).tolist()
    )
    flips = set(
        rng.choice(spec.num_content, size=spec.num_flip_tokens, replace=False).tolist()
    )
    eos = spec.vocab.eos_id
    corpus: list[Sentence] = []
    for _ in range(n):
        src_len = int(rng.integers(spec.min_src_len, spec.max_src_len + 1))
        src = rng.integers(0, spec.num_content, size=src_len)
        tgt = mapping[src].tolist()
        flipped = int(src[-1]) in flips
        for p in range(0, src_len - 1, 2):
            if flipped or int(src[p + 1]) in triggers:
                tgt[p], tgt[p + 1] = tgt[p + 1], tgt[p]
        corpus.append((tuple(int(t) for t in src), tuple(tgt) + (eos,)))
    return corpus


# ---------------------------------------------------------------------------
# Tiny scorer with manual backprop.
# ---------------------------------------------------------------------------


_SLOT_OFFSETS = (-1, 0, 1)  # source positions j-1, j, j+1 relative to writes
_N_SLOTS = len(_SLOT_OFFSETS)


@dataclass
class TinyScorer:
    """Streaming next-token scorer over (source prefix, target prefix) pairs.

    Context features for a prefix of u source units and j written tokens:
    the last token read, the mean embedding of everything read, the previous
    target token's embedding (a dedicated bos row when nothing was written),
    a one-hot bucket of the read/write gap u - j, a source-exhausted flag,
    and the parity of j.  On top of that sits a three-slot monotonic
    cross-attention readout over the source positions j-1, j, j+1: each
    already-read slot is scored linearly from its own embedding plus the
    context features, the softmax-attended embedding then feeds the output
    through a value projection.  One tanh hidden layer plus a linear skip
    from the context features completes the pre-softmax scores over
    vocab + blank.

    The availability masking is what keeps latency meaningful: a write ahead
    of the diagonal simply cannot attend to the source token it needs.
    """

    vocab: Vocab
    emb_dim: int
    hidden_dim: int
    params: dict[str, np.ndarray]

    @classmethod
    def initialize(
        cls,
        vocab: Vocab,
        emb_dim: int = 32,
        hidden_dim: int = 64,
        rng: np.random.Generator | None = None,
    ) -> "TinyScorer":
        if rng is None:
            rng = np.random.default_rng(0)
        n_feat = cls.feature_dim(emb_dim)
        n_out = vocab.size + 1
        params = {
            "src_emb": rng.standard_normal((vocab.size, emb_dim)),
            "tgt_emb": rng.standard_normal((vocab.size + 1, emb_dim)),
            "w_hidden": rng.standard_normal((n_feat, hidden_dim)) / math.sqrt(n_feat),
            "b_hidden": np.zeros(hidden_dim),
            "w_out": rng.standard_normal((hidden_dim, n_out)) / math.sqrt(hidden_dim),
            "w_skip": np.zeros((n_feat, n_out)),
            "b_out": np.zeros(n_out),
            # Attention starts neutral: uniform over available slots.
            "w_att_emb": np.zeros((_N_SLOTS, emb_dim)),
            "w_att_ctx": np.zeros((_N_SLOTS, n_feat)),
            # Bilinear query from the previous-target embedding: lets slot
            # choice depend on which slot the emitted history points at.
            "w_query": np.zeros((emb_dim, emb_dim)),
            # Hidden-layer route into slot scores: slot choice may depend on
            # feature conjunctions, not just linear feature sums.
            "w_att_hidden": np.zeros((_N_SLOTS, hidden_dim)),
            "b_att": np.zeros(_N_SLOTS),
            "w_value": np.zeros((emb_dim, n_out)),
        }
        return cls(vocab=vocab, emb_dim=emb_dim, hidden_dim=hidden_dim, params=params)

    @staticmethod
    def feature_dim(emb_dim: int) -> int:
        # last + mean + previous-target embeddings, then alignment scalars
        return 3 * emb_dim + _N_ALIGN_FEATURES

    @property
    def bos_row(self) -> int:
        return self.vocab.size

    def clone(self) -> "TinyScorer":
        return TinyScorer(
            vocab=self.vocab,
            emb_dim=self.emb_dim,
            hidden_dim=self.hidden_dim,
            params={k: v.copy() for k, v in self.params.items()},
        )

    # -- feature construction ------------------------------------------------

    def _features(
        self, src: tuple[int, ...], units: np.ndarray, prev: list[int | None]
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Context features plus attention slots for an (i, j) grid.

        Returns (feat, slot_emb, slot_ok, slot_tok): feat is (n_i, n_j,
        n_feat), slot_emb is (n_i, n_j, n_slots, E) with zeros at masked
        slots, slot_ok the boolean availability mask, and slot_tok the
        (n_j, n_slots) source-token index behind each slot.
        """
        E = self.emb_dim
        src_emb = self.params["src_emb"]
        tgt_emb = self.params["tgt_emb"]
        src_arr = np.asarray(src)
        n_i = len(units)
        n_j = len(prev)
        feat = np.zeros((n_i, n_j, self.feature_dim(E)))

        read_rows = units >= 1
        if read_rows.any():
            last_idx = src_arr[np.maximum(units[read_rows] - 1, 0)]
            feat[read_rows, :, :E] = src_emb[last_idx][:, None, :]
            prefix = np.cumsum(src_emb[src_arr], axis=0)
            means = prefix[units[read_rows] - 1] / units[read_rows, None]
            feat[read_rows, :, E : 2 * E] = means[:, None, :]

        prev_idx = [self.bos_row if t is None else t for t in prev]
        feat[:, :, 2 * E : 3 * E] = tgt_emb[prev_idx][None, :, :]

        cols = np.arange(n_j)
        lo = 3 * E
        gap = units[:, None] - cols[None, :]
        bins = np.clip(gap + 1, 0, 4)
        rows_grid = np.repeat(np.arange(n_i), n_j)
        feat[rows_grid, np.tile(cols, n_i), lo + bins.ravel()] = 1.0
        feat[:, :, lo + 5] = (units[:, None] >= len(src)).astype(float)
        feat[:, :, lo + 6] = (cols[None, :] % 2).astype(float)

        slot_emb = np.zeros((n_i, n_j, _N_SLOTS, E))
        slot_ok = np.zeros((n_i, n_j, _N_SLOTS), dtype=bool)
        slot_tok = np.zeros((n_j, _N_SLOTS), dtype=np.intp)
        for b, off in enumerate(_SLOT_OFFSETS):
            pos = cols + off
            ok = (pos >= 0) & (pos < len(src))
            visible = ok[None, :] & (pos[None, :] < units[:, None])
            tok = src_arr[np.clip(pos, 0, len(src) - 1)]
            slot_tok[:, b] = tok
            slot_emb[:, :, b, :] = src_emb[tok][None, :, :] * visible[:, :, None]
            slot_ok[:, :, b] = visible
        return feat, slot_emb, slot_ok, slot_tok

    def _context_features_at(
        self, src: tuple[int, ...], units: int, j: int, prev: int | None
    ) -> np.ndarray:
        """Single-context version of the feature grid, for decoding."""
        E = self.emb_dim
        src_emb = self.params["src_emb"]
        feat = np.zeros(self.feature_dim(E))
        if units >= 1:
            feat[:E] = src_emb[src[units - 1]]
            feat[E : 2 * E] = src_emb[list(src[:units])].mean(axis=0)
        feat[2 * E : 3 * E] = self.params["tgt_emb"][
            self.bos_row if prev is None else prev
        ]
        lo = 3 * E
        feat[lo + min(max(units - j + 1, 0), 4)] = 1.0
        feat[lo + 5] = 1.0 if units >= len(src) else 0.0
        feat[lo + 6] = float(j % 2)
        return feat

    def _slots_at(
        self, src: tuple[int, ...], units: int, j: int
    ) -> tuple[np.ndarray, np.ndarray]:
        E = self.emb_dim
        slot_emb = np.zeros((_N_SLOTS, E))
        slot_ok = np.zeros(_N_SLOTS, dtype=bool)
        for b, off in enumerate(_SLOT_OFFSETS):
            pos = j + off
            if 0 <= pos < units:
                slot_emb[b] = self.params["src_emb"][src[pos]]
                slot_ok[b] = True
        return slot_emb, slot_ok

    def _forward_scores(
        self, feat: np.ndarray, slot_emb: np.ndarray, slot_ok: np.ndarray
    ) -> tuple[np.ndarray, dict]:
        """Pre-softmax scores for feature grids of shape (..., n_feat)."""
        E = self.emb_dim
        z = feat @ self.params["w_hidden"] + self.params["b_hidden"]
        h = np.tanh(z)
        pred = feat[..., 2 * E : 3 * E]
        query = pred @ self.params["w_query"]
        e = (
            (slot_emb * self.params["w_att_emb"]).sum(axis=-1)
            + feat @ self.params["w_att_ctx"].T
            + (slot_emb @ query[..., None])[..., 0]
            + h @ self.params["w_att_hidden"].T
            + self.params["b_att"]
        )
        e = np.where(slot_ok, e, -np.inf)
        e_max = np.max(e, axis=-1, keepdims=True)
        any_ok = slot_ok.any(axis=-1, keepdims=True)
        shifted = np.where(slot_ok, e - np.where(any_ok, e_max, 0.0), -np.inf)
        with np.errstate(over="ignore"):
            expo = np.exp(shifted)
        denom = expo.sum(axis=-1, keepdims=True)
        att = np.where(any_ok, expo / np.where(denom == 0.0, 1.0, denom), 0.0)
        attended = (att[..., None] * slot_emb).sum(axis=-2)
        scores = (
            h @ self.params["w_out"]
            + feat @ self.params["w_skip"]
            + attended @ self.params["w_value"]
            + self.params["b_out"]
        )
        cache = {"h": h, "att": att, "attended": attended, "query": query}
        return scores, cache

    # -- forward -------------------------------------------------------------

    def score_grid(
        self, src: Sequence[int], tgt: Sequence[int], d: int
    ) -> tuple[Lattice, dict]:
        """Lattice over all (i, j) contexts plus the cache backprop needs."""
        src = tuple(src)
        tgt = tuple(tgt)
        T = -(-len(src) // d)
        units = np.minimum(np.arange(T + 1) * d, len(src))
        prev = [None] + list(tgt)  # context for columns j = 0..U
        feat, slot_emb, slot_ok, slot_tok = self._features(src, units, prev)
        scores, fwd = self._forward_scores(feat, slot_emb, slot_ok)
        lattice = Lattice(normalize_scores(scores))
        cache = {
            "src": src,
            "units": units,
            "prev": prev,
            "d": d,
            "feat": feat,
            "slot_emb": slot_emb,
            "slot_ok": slot_ok,
            "slot_tok": slot_tok,
            **fwd,
        }
        return lattice, cache

    def backprop(self, cache: dict, d_scores: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients from score-space gradients (pre-softmax)."""
        feat, h = cache["feat"], cache["h"]
        slot_emb, slot_ok, att = cache["slot_emb"], cache["slot_ok"], cache["att"]
        attended = cache["attended"]
        grads = {name: np.zeros_like(p) for name, p in self.params.items()}

        query = cache["query"]
        E = self.emb_dim
        n_ctx = feat.shape[0] * feat.shape[1]
        feat2 = feat.reshape(n_ctx, -1)
        ds2 = d_scores.reshape(n_ctx, -1)
        h2 = h.reshape(n_ctx, -1)
        grads["w_out"] = h2.T @ ds2
        grads["w_skip"] = feat2.T @ ds2
        grads["w_value"] = attended.reshape(n_ctx, -1).T @ ds2
        grads["b_out"] = ds2.sum(axis=0)

        # Attention backward first: value mix, softmax, then slot scores; the
        # hidden layer collects gradient from both the output and the scores.
        d_attended = d_scores @ self.params["w_value"].T
        d_att = (slot_emb @ d_attended[..., None])[..., 0]
        d_slot = att[..., None] * d_attended[:, :, None, :]
        inner = (att * d_att).sum(axis=-1, keepdims=True)
        d_e = att * (d_att - inner)
        d_e = np.where(slot_ok, d_e, 0.0)
        d_e2 = d_e.reshape(n_ctx, -1)
        grads["w_att_emb"] = (d_e[..., None] * slot_emb).sum(axis=(0, 1))
        grads["w_att_ctx"] = d_e2.T @ feat2
        grads["w_att_hidden"] = d_e2.T @ h2
        grads["b_att"] = d_e.sum(axis=(0, 1))
        d_slot += d_e[..., None] * self.params["w_att_emb"][None, None, :, :]
        d_slot += d_e[..., None] * query[:, :, None, :]
        d_query = (d_e[..., None] * slot_emb).sum(axis=-2)
        pred = feat[..., 2 * E : 3 * E]
        grads["w_query"] = pred.reshape(n_ctx, -1).T @ d_query.reshape(n_ctx, -1)

        dh = d_scores @ self.params["w_out"].T + d_e @ self.params["w_att_hidden"]
        dz = dh * (1.0 - h * h)
        dz2 = dz.reshape(n_ctx, -1)
        grads["w_hidden"] = feat2.T @ dz2
        grads["b_hidden"] = dz2.sum(axis=0)
        dfeat = dz @ self.params["w_hidden"].T + d_scores @ self.params["w_skip"].T
        dfeat += d_e @ self.params["w_att_ctx"]
        dfeat[..., 2 * E : 3 * E] += d_query @ self.params["w_query"].T

        src, units, prev = cache["src"], cache["units"], cache["prev"]
        src_arr = np.asarray(src, dtype=np.intp)

        # Frontier summaries: last-read rows scatter directly; the running
        # mean turns into suffix sums over rows (units is nondecreasing, so
        # "rows with units > t" is a row suffix starting at ceil((t+1)/d)).
        read_rows = units >= 1
        d_last = dfeat[:, :, :E].sum(axis=1)
        if read_rows.any():
            np.add.at(
                grads["src_emb"], src_arr[units[read_rows] - 1], d_last[read_rows]
            )
            d_mean = dfeat[:, :, E : 2 * E].sum(axis=1)
            scaled = np.where(read_rows[:, None], d_mean, 0.0)
            scaled = scaled / np.maximum(units, 1)[:, None]
            suffix = np.cumsum(scaled[::-1], axis=0)[::-1]  # suffix[i] = sum rows >= i
            first_row = np.arange(len(src)) // cache["d"] + 1
            np.add.at(grads["src_emb"], src_arr, suffix[first_row])

        # Attention slots: one scatter over every visible (row, column, slot).
        slot_tok = cache["slot_tok"]  # (n_j, n_slots)
        np.add.at(
            grads["src_emb"],
            np.broadcast_to(slot_tok[None, :, :], slot_ok.shape)[slot_ok],
            d_slot[slot_ok],
        )

        d_pred = dfeat[:, :, 2 * E : 3 * E].sum(axis=0)
        prev_idx = np.array(
            [self.bos_row if t is None else t for t in prev], dtype=np.intp
        )
        np.add.at(grads["tgt_emb"], prev_idx, d_pred)
        return grads

    # -- decoding ------------------------------------------------------------

    def bind(self, src: Sequence[int]) -> "BoundSentenceScorer":
        return BoundSentenceScorer(model=self, src=tuple(src))


@dataclass(frozen=True)
class BoundSentenceScorer:
    """Scorer-protocol adapter: the model applied to one source sentence."""

    model: TinyScorer
    src: tuple[int, ...]

    @property
    def vocab(self) -> Vocab:
        return self.model.vocab

    def __call__(self, src_units: int, prev_tokens: Sequence[int]) -> np.ndarray:
        m = self.model
        units = min(src_units, len(self.src))
        prev = prev_tokens[-1] if prev_tokens else None
        feat = m._context_features_at(self.src, units, len(prev_tokens), prev)
        slot_emb, slot_ok = m._slots_at(self.src, units, len(prev_tokens))
        scores, _ = m._forward_scores(feat, slot_emb, slot_ok)
        return normalize_scores(scores)


def fill_lattice(
    model: TinyScorer, src: Sequence[int], target: TargetSequence, cfg: ChunkConfig
) -> Lattice:
    """Score every grid context of one sentence."""
    lattice, _ = model.score_grid(src, target.tokens, cfg.d)
    return lattice


# ---------------------------------------------------------------------------
# Objective: marginal NLL + scaled latency expectation + offline CE.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossConfig:
    """Scaling factors for the latency and offline-CE terms, plus the
    decision step size."""

    lambda_latency: float = 1.0
    lambda_ce: float = 1.0
    d: int = 1

    def __post_init__(self):
        if self.lambda_latency < 0 or self.lambda_ce < 0:
            raise ValidationError("loss scales must be nonnegative")
        if self.d < 1:
            raise ValidationError("decision step size d must be >= 1")


@dataclass(frozen=True)
class LossBreakdown:
    nll: float
    latency: float
    ce: float
    total: float


def ce_auxiliary_loss(lattice: Lattice, target: TargetSequence) -> float:
    """Offline cross entropy read from the source-exhausted column, with
    blank excluded by renormalization."""
    _, write = arc_weights(lattice, target)
    return float(-write[lattice.num_decisions, :].sum())


def ce_gradient(lattice: Lattice, target: TargetSequence) -> np.ndarray:
    """Gradient of ce_auxiliary_loss w.r.t. pre-softmax scores."""
    T, U = lattice.num_decisions, lattice.target_len
    read_grad = np.zeros((T, U + 1))
    write_grad = np.zeros((T + 1, U))
    write_grad[T, :] = -1.0
    return weight_grad_to_score_grad(lattice, target, read_grad, write_grad)


def total_loss_and_grad(
    model: TinyScorer, sentence: Sentence, cfg: LossConfig
) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Full objective and its parameter gradients for one sentence.

    All three terms are functions of the arc log-weights, so their weight
    gradients are accumulated first and pushed through the score-space
    Jacobian in one pass.
    """
    src, tgt = sentence
    target = TargetSequence(tuple(tgt))
    lattice, cache = model.score_grid(src, tgt, cfg.d)
    weights = arc_weights(lattice, target)
    tables = forward_backward(lattice, target, weights=weights, validate=False)
    posteriors = arc_posteriors(tables, lattice, target, weights=weights)
    nll = -tables.logZ
    lat_params = LatencyParams(src_len=len(src), tgt_len=len(tgt), d=cfg.d)
    latency = latency_expectation(
        lattice, target, lat_params, tables=tables, posteriors=posteriors
    )
    ce = float(-weights.write[lattice.num_decisions, :].sum())
    total = nll + cfg.lambda_latency * latency + cfg.lambda_ce * ce
    if not math.isfinite(total):
        raise NonFiniteLossError(
            f"non-finite loss (nll={nll}, latency={latency}, ce={ce})"
        )

    read_wg = -posteriors.read
    write_wg = -posteriors.write.copy()
    if cfg.lambda_latency:
        lat_read, lat_write, _ = latency_weight_gradients(
            lattice, target, lat_params, tables, weights=weights, posteriors=posteriors
        )
        read_wg = read_wg + cfg.lambda_latency * lat_read
        write_wg += cfg.lambda_latency * lat_write
    if cfg.lambda_ce:
        write_wg[lattice.num_decisions, :] -= cfg.lambda_ce
    d_scores = weight_grad_to_score_grad(
        lattice, target, read_wg, write_wg, denom=weights.denom
    )
    grads = model.backprop(cache, d_scores)
    return LossBreakdown(nll=nll, latency=latency, ce=ce, total=total), grads


# ---------------------------------------------------------------------------
# Training loop: plain momentum SGD, deterministic given the seed.
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: TinyScorer
    log: list[tuple[int, float, float, float, float]]  # step, nll, latency, ce, total


def train(
    corpus: list[Sentence],
    cfg: LossConfig,
    steps: int = 2000,
    lr: float = 0.05,
    seed: int = 0,
    *,
    momentum: float = 0.9,
    clip_norm: float = 5.0,
    log_every: int = 100,
    emb_dim: int = 32,
    hidden_dim: int = 64,
    vocab: Vocab | None = None,
    model: TinyScorer | None = None,
) -> TrainResult:
    """One-sentence-per-step SGD with momentum over the full objective.

    A warm-start model may be passed in; its parameters are copied, never
    mutated.

    Per-sentence losses are token sums, so early gradients are large;
    clipping the global gradient norm at clip_norm bounds those first steps
    and is inactive once training settles.  Loss components are logged as
    window means every log_every steps.  Divergence (non-finite loss or
    gradient) aborts with the parameters from just before the offending
    update attached to the exception.
    """
    if steps < 1:
        raise ValidationError("steps must be >= 1")
    if not corpus:
        raise ValidationError("empty corpus")
    if vocab is None:
        top = max(max(max(s), max(t)) for s, t in corpus)
        vocab = Vocab(size=top + 1, eos_id=corpus[0][1][-1])
    rng = np.random.default_rng(seed)
    if model is None:
        model = TinyScorer.initialize(vocab, emb_dim=emb_dim, hidden_dim=hidden_dim, rng=rng)
    else:
        model = model.clone()
    velocity = {name: np.zeros_like(p) for name, p in model.params.items()}
    log: list[tuple[int, float, float, float, float]] = []
    window = np.zeros(4)
    for step in range(1, steps + 1):
        sentence = corpus[int(rng.integers(len(corpus)))]
        try:
            breakdown, grads = total_loss_and_grad(model, sentence, cfg)
        except (NonFiniteLossError, NoAdmissiblePathError) as exc:
            raise TrainingDivergedError(
                f"training diverged at step {step}: {exc}",
                step=step,
                last_params={k: v.copy() for k, v in model.params.items()},
                log=log,
            ) from exc
        window += (breakdown.nll, breakdown.latency, breakdown.ce, breakdown.total)
        if clip_norm > 0:
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > clip_norm:
                scale = clip_norm / norm
                for g in grads.values():
                    g *= scale
        for name in model.params:
            v = velocity[name]
            v *= momentum
            v += grads[name]
            model.params[name] -= lr * v
        if step % log_every == 0:
            mean = window / log_every
            log.append((step, mean[0], mean[1], mean[2], mean[3]))
            window[:] = 0.0
    return TrainResult(model=model, log=log)


def mean_nll(model: TinyScorer, corpus: Iterable[Sentence], d: int) -> float:
    """Corpus-mean marginal NLL under the current parameters."""
    total = 0.0
    count = 0
    for src, tgt in corpus:
        lattice, _ = model.score_grid(src, tgt, d)
        nll, _ = log_marginal_nll(lattice, TargetSequence(tuple(tgt)))
        total += nll
        count += 1
    return total / count


def token_accuracy(model: TinyScorer, corpus: Iterable[Sentence], d: int) -> float:
    """Greedy-decode position-wise match rate against the references."""
    correct = 0
    total = 0
    for src, tgt in corpus:
        result = greedy_decode(model.bind(src), len(src), ChunkConfig(d))
        hyp = result.tokens
        total += len(tgt)
        correct += sum(1 for a, b in zip(hyp, tgt) if a == b)
    return correct / total


# ---------------------------------------------------------------------------
# Quality metric: smoothed sentence BLEU-4.
# ---------------------------------------------------------------------------


def _ngram_counts(tokens: Sequence[int], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def sentence_quality(hyp: Sequence[int], ref: Sequence[int]) -> float:
    """Sentence BLEU-4 with add-1 smoothing on n >= 2 and brevity penalty."""
    if len(ref) == 0:
        raise ValidationError("empty reference")
    if len(hyp) == 0:
        return 0.0
    log_prec = 0.0
    for n in range(1, 5):
        total = max(len(hyp) - n + 1, 0)
        matches = 0
        if total:
            ref_counts = _ngram_counts(ref, n)
            matches = sum(
                min(count, ref_counts[gram])
                for gram, count in _ngram_counts(hyp, n).items()
            )
        if n == 1:
            if matches == 0:
                return 0.0
            log_prec += 0.25 * math.log(matches / total)
        else:
            log_prec += 0.25 * math.log((matches + 1) / (total + 1))
    brevity = 1.0 if len(hyp) >= len(ref) else math.exp(1.0 - len(ref) / len(hyp))
    return brevity * math.exp(log_prec)


# ---------------------------------------------------------------------------
# Latency-quality trade-off curve.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SentenceEval:
    al: float
    dal: float
    path_latency: float
    quality: float


def evaluate_sentence(
    model: TinyScorer, sentence: Sentence, d: int, eos_id: int
) -> SentenceEval:
    src, tgt = sentence
    result = greedy_decode(model.bind(src), len(src), ChunkConfig(d))
    params = LatencyParams(src_len=len(src), tgt_len=len(result.tokens), d=d)
    hyp = [t for t in result.tokens if t != eos_id]
    ref = [t for t in tgt if t != eos_id]
    return SentenceEval(
        al=average_lagging(result.delays, params),
        dal=differentiable_average_lagging(result.delays, params),
        path_latency=path_latency(result.path, params),
        quality=sentence_quality(hyp, ref),
    )


@dataclass(frozen=True)
class CurveRow:
    d: int
    lambda_latency: float
    mean_al: float
    mean_dal: float
    mean_quality: float
    mean_path_latency: float


def tradeoff_curve(
    train_corpus: list[Sentence],
    eval_corpus: list[Sentence],
    grid: Sequence[tuple[int, float]],
    *,
    seeds: Sequence[int] = (0, 1, 2),
    steps: int = 2000,
    lr: float = 0.05,
    lambda_ce: float = 1.0,
    emb_dim: int = 32,
    hidden_dim: int = 64,
    vocab: Vocab | None = None,
) -> list[CurveRow]:
    """Train one model per (d, lambda_latency, seed) and average held-out
    AL / DAL / quality per knob point."""
    eos_id = vocab.eos_id if vocab is not None else train_corpus[0][1][-1]
    rows = []
    for d, lam in grid:
        al_sum = dal_sum = q_sum = lat_sum = 0.0
        count = 0
        for seed in seeds:
            cfg = LossConfig(lambda_latency=lam, lambda_ce=lambda_ce, d=d)
            result = train(
                train_corpus,
                cfg,
                steps=steps,
                lr=lr,
                seed=seed,
                emb_dim=emb_dim,
                hidden_dim=hidden_dim,
                vocab=vocab,
            )
            for sentence in eval_corpus:
                ev = evaluate_sentence(result.model, sentence, d, eos_id)
                al_sum += ev.al
                dal_sum += ev.dal
                q_sum += ev.quality
                lat_sum += ev.path_latency
                count += 1
        rows.append(
            CurveRow(
                d=d,
                lambda_latency=lam,
                mean_al=al_sum / count,
                mean_dal=dal_sum / count,
                mean_quality=q_sum / count,
                mean_path_latency=lat_sum / count,
            )
        )
    return rows
