"""READ/WRITE expansion-path lattice and its log-space forward-backward kernel.

A simultaneous decoder interleaves T READ actions (consume one source
decision step) with U WRITE actions (emit the next target token).  Every
interleaving is a path through a (T+1) x (U+1) grid: node (i, j) means
"i decision steps read, j tokens written", a READ arc goes (i, j) -> (i+1, j)
and a WRITE arc goes (i, j) -> (i, j+1).  The model scores each node with a
normalized log-distribution over the vocabulary plus a reserved blank symbol;
blank probability is the weight of the READ arc, the probability of the next
reference token is the weight of the WRITE arc.

This module computes path weights, the marginal negative log-likelihood over
all paths (forward-backward), per-arc posterior occupancies, and the exact
gradient of the marginal NLL with respect to pre-softmax scores.

Terminal-column rule: once the source is exhausted (i = T) a READ is illegal,
and WRITE weights are renormalized over the non-blank vocabulary:
log P(y | T, j) - logsumexp over non-blank log-probabilities (equivalent to
subtracting log(1 - P(blank)) but stable when the blank mass rounds to 1).
All stranded blank mass at the last column is therefore redistributed over
real tokens, keeping total path mass <= 1.

Everything here is a pure function of its arguments; no global state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NoAdmissiblePathError, NonFiniteLossError, ValidationError

NEG_INF = float("-inf")

# Action letters used by ActionPath and by the JSONL path-log format.
READ = "R"
WRITE = "W"

_NORMALIZATION_TOL = 1e-6


@dataclass(frozen=True)
class Vocab:
    """Target vocabulary layout: `size` real tokens plus a reserved blank.

    Real tokens occupy indices [0, size); `eos_id` is one of them.  The blank
    index defaults to `size`, matching the wire format (real tokens first,
    blank last).
    """

    size: int
    eos_id: int
    blank_id: int = -1

    def __post_init__(self):
        if self.blank_id == -1:
            object.__setattr__(self, "blank_id", self.size)
        if self.size < 1:
            raise ValidationError("vocab size must be >= 1")
        if not 0 <= self.eos_id < self.size:
            raise ValidationError("eos_id must index a real token")
        if 0 <= self.blank_id < self.size:
            raise ValidationError("blank_id must be distinct from real tokens")


@dataclass(frozen=True)
class TargetSequence:
    """Reference token sequence; in task data it ends with the eos token."""

    tokens: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.tokens)

    def check(self, vocab: Vocab) -> "TargetSequence":
        """Enforce the full data-side invariants against a vocabulary."""
        if not self.tokens:
            raise ValidationError("target sequence is empty")
        if any(t == vocab.blank_id for t in self.tokens):
            raise ValidationError("target sequence contains the blank symbol")
        if any(not 0 <= t < vocab.size for t in self.tokens):
            raise ValidationError("target token out of vocabulary range")
        if self.tokens[-1] != vocab.eos_id:
            raise ValidationError("target sequence must end with eos")
        return self


@dataclass(frozen=True)
class ActionPath:
    """One READ/WRITE interleaving; `tokens` holds the emission per WRITE."""

    actions: str
    tokens: tuple[int, ...]

    def __post_init__(self):
        if any(a not in (READ, WRITE) for a in self.actions):
            raise ValidationError("actions must be a string over {R, W}")
        if self.actions.count(WRITE) != len(self.tokens):
            raise ValidationError("one emitted token required per WRITE")

    @property
    def num_reads(self) -> int:
        return self.actions.count(READ)

    @property
    def num_writes(self) -> int:
        return self.actions.count(WRITE)

    def check_shape(self, num_decisions: int, target_len: int) -> "ActionPath":
        if self.num_reads != num_decisions or self.num_writes != target_len:
            raise ValidationError(
                f"path has {self.num_reads} reads / {self.num_writes} writes, "
                f"expected {num_decisions} / {target_len}"
            )
        return self


@dataclass(frozen=True)
class Lattice:
    """Dense grid of normalized log-distributions over vocab + blank.

    `logits[i, j, k]` is log P(k | i decisions read, j tokens written) for
    i in [0, T], j in [0, U], with k = vocab_size reserved for blank.  Rows
    must be normalized (logsumexp 0 within 1e-6) and free of NaN / +inf.
    """

    logits: np.ndarray

    def __post_init__(self):
        a = self.logits
        if a.ndim != 3 or a.shape[0] < 2 or a.shape[2] < 2:
            raise ValidationError(
                "logits must be (T+1, U+1, vocab+1) with T >= 1 and vocab >= 1"
            )
        if a.dtype != np.float64:
            raise ValidationError("logits must be float64")

    @property
    def num_decisions(self) -> int:
        return self.logits.shape[0] - 1

    @property
    def target_len(self) -> int:
        return self.logits.shape[1] - 1

    @property
    def vocab_size(self) -> int:
        return self.logits.shape[2] - 1

    @property
    def blank(self) -> int:
        return self.vocab_size

    def validate(self) -> "Lattice":
        """Check normalization and entry finiteness (finite or -inf)."""
        a = self.logits
        if np.isnan(a).any() or np.isposinf(a).any():
            raise ValidationError("logits contain NaN or +inf")
        with np.errstate(divide="ignore"):
            lse = _row_logsumexp(a)
        if not np.all(np.abs(lse) <= _NORMALIZATION_TOL):
            worst = float(np.max(np.abs(lse)))
            raise ValidationError(
                f"lattice rows not normalized (max |logsumexp| = {worst:.3g})"
            )
        return self


def _row_logsumexp(a: np.ndarray) -> np.ndarray:
    m = np.max(a, axis=-1)
    safe_m = np.where(np.isfinite(m), m, 0.0)
    s = np.sum(np.exp(a - safe_m[..., None]), axis=-1)
    with np.errstate(divide="ignore"):
        return np.where(np.isfinite(m), safe_m + np.log(s), m)


def normalize_scores(scores: np.ndarray) -> np.ndarray:
    """Log-softmax over the last axis (the pre-softmax "logit space")."""
    scores = np.asarray(scores, dtype=np.float64)
    return scores - _row_logsumexp(scores)[..., None]


def random_lattice(
    num_decisions: int,
    target_len: int,
    vocab_size: int,
    rng: np.random.Generator,
    scale: float = 1.0,
) -> Lattice:
    """Normalized lattice with Gaussian pre-softmax scores; handy fixture."""
    scores = scale * rng.standard_normal(
        (num_decisions + 1, target_len + 1, vocab_size + 1)
    )
    return Lattice(normalize_scores(scores))


@dataclass(frozen=True)
class ForwardBackwardTables:
    """alpha/beta log-mass tables plus the total log-mass of all paths.

    alpha[i, j] is the log-mass of all prefixes from (0, 0) to (i, j);
    beta[i, j] the log-mass of all suffixes from (i, j) to (T, U);
    logZ = alpha[T, U] = beta[0, 0].
    """

    alpha: np.ndarray
    beta: np.ndarray
    logZ: float
    target_tokens: tuple[int, ...]

    def check_match(self, lattice: Lattice, target: TargetSequence) -> None:
        if self.alpha.shape != (lattice.num_decisions + 1, lattice.target_len + 1):
            raise ValidationError("tables were computed for a different lattice shape")
        if self.target_tokens != tuple(target.tokens):
            raise ValidationError("tables were computed for a different target")


@dataclass(frozen=True)
class ArcPosteriors:
    """Occupancy gamma per arc under the renormalized path posterior.

    read[i, j]  covers the READ arc (i, j) -> (i+1, j), i in [0, T);
    write[i, j] covers the WRITE arc (i, j) -> (i, j+1), j in [0, U).
    """

    read: np.ndarray
    write: np.ndarray


def _check_target(lattice: Lattice, target: TargetSequence) -> None:
    if len(target.tokens) != lattice.target_len:
        raise ValidationError(
            f"target length {len(target.tokens)} != lattice U {lattice.target_len}"
        )
    for t in target.tokens:
        if not 0 <= t < lattice.vocab_size:
            raise ValidationError(f"target token {t} outside vocab")


def _terminal_log_denominator(lattice: Lattice) -> np.ndarray:
    """log of the non-blank probability mass per terminal-column context.

    Computed as a logsumexp over the non-blank entries rather than
    log(1 - P(blank)), so it stays accurate even when the blank probability
    rounds to 1.
    """
    row = lattice.logits[lattice.num_decisions, : lattice.target_len, : lattice.blank]
    return _row_logsumexp(row)


@dataclass(frozen=True)
class ArcWeights:
    """(read, write) arc log-weights; denom carries the terminal-column
    renormalizer so gradient scatter does not recompute it."""

    read: np.ndarray
    write: np.ndarray
    denom: np.ndarray

    def __iter__(self):
        return iter((self.read, self.write))


def arc_weights(lattice: Lattice, target: TargetSequence) -> "ArcWeights":
    """(read, write) arc log-weights, terminal column renormalized.

    read has shape (T, U+1): blank log-probability at the source node.
    write has shape (T+1, U): log-probability of the next reference token,
    with the i = T row renormalized over non-blank symbols.
    """
    _check_target(lattice, target)
    a = lattice.logits
    T, U = lattice.num_decisions, lattice.target_len
    tokens = list(target.tokens)
    read = a[:T, :, lattice.blank].copy()
    write = np.empty((T + 1, U), dtype=np.float64)
    denom = np.zeros(U)
    if U:
        write[:, :] = a[:, np.arange(U), tokens]
        denom = _terminal_log_denominator(lattice)
        # denom = -inf means all terminal mass sits on blank: no way to emit.
        with np.errstate(invalid="ignore"):
            write[T, :] = np.where(denom == NEG_INF, NEG_INF, write[T, :] - denom)
    return ArcWeights(read, write, denom)


def path_log_prob(lattice: Lattice, path: ActionPath) -> float:
    """Log-weight of a single expansion path.

    READ at (i, j) contributes log P(blank | i, j); WRITE contributes the
    emitted token's log-probability, renormalized when i = T.  READ at the
    terminal column is illegal.
    """
    lattice.validate()
    path.check_shape(lattice.num_decisions, lattice.target_len)
    read, write = arc_weights(lattice, TargetSequence(tuple(path.tokens)))
    T = lattice.num_decisions
    i = j = 0
    total = 0.0
    for action in path.actions:
        if action == READ:
            if i == T:
                raise ValidationError("READ past the last decision step")
            total += read[i, j]
            i += 1
        else:
            total += write[i, j]
            j += 1
    return total


def _ladd(a: float, b: float) -> float:
    """log(exp(a) + exp(b)) for plain floats; safe when either is -inf."""
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


def forward_pass(read: np.ndarray, write: np.ndarray) -> np.ndarray:
    """alpha[i, j] = log-mass of all prefixes from (0, 0) to (i, j).

    Plain-float row sweeps: the grids here are tiny (tens of cells), where
    Python float arithmetic beats vectorized anti-diagonal indexing.
    """
    T = read.shape[0]
    U = write.shape[1]
    read_l = read.tolist()
    write_l = write.tolist()
    alpha = [[NEG_INF] * (U + 1) for _ in range(T + 1)]
    alpha[0][0] = 0.0
    for i in range(T + 1):
        row = alpha[i]
        for j in range(U + 1):
            if i == 0 and j == 0:
                continue
            v = NEG_INF
            if i > 0:
                v = alpha[i - 1][j] + read_l[i - 1][j]
            if j > 0:
                v = _ladd(v, row[j - 1] + write_l[i][j - 1])
            row[j] = v
    return np.array(alpha, dtype=np.float64)


def backward_pass(read: np.ndarray, write: np.ndarray) -> np.ndarray:
    """beta[i, j] = log-mass of all suffixes from (i, j) to (T, U)."""
    T = read.shape[0]
    U = write.shape[1]
    read_l = read.tolist()
    write_l = write.tolist()
    beta = [[NEG_INF] * (U + 1) for _ in range(T + 1)]
    beta[T][U] = 0.0
    for i in range(T, -1, -1):
        row = beta[i]
        for j in range(U, -1, -1):
            if i == T and j == U:
                continue
            v = NEG_INF
            if i < T:
                v = read_l[i][j] + beta[i + 1][j]
            if j < U:
                v = _ladd(v, write_l[i][j] + row[j + 1])
            row[j] = v
    return np.array(beta, dtype=np.float64)


def forward_backward(
    lattice: Lattice,
    target: TargetSequence,
    weights: ArcWeights | None = None,
    validate: bool = True,
) -> ForwardBackwardTables:
    """Fill alpha/beta over the grid; raises if no path has finite weight."""
    if validate:
        lattice.validate()
    T, U = lattice.num_decisions, lattice.target_len
    read, write = weights if weights is not None else arc_weights(lattice, target)
    alpha = forward_pass(read, write)
    beta = backward_pass(read, write)

    logZ = float(alpha[T, U])
    if math.isnan(logZ):
        raise NonFiniteLossError("forward pass produced NaN")
    if logZ == NEG_INF or not math.isfinite(logZ):
        raise NoAdmissiblePathError(
            "lattice admits no path with finite probability"
        )
    return ForwardBackwardTables(
        alpha=alpha,
        beta=beta,
        logZ=logZ,
        target_tokens=tuple(target.tokens),
    )


def log_marginal_nll(
    lattice: Lattice, target: TargetSequence
) -> tuple[float, ForwardBackwardTables]:
    """Negative log of the summed probability of all expansion paths."""
    tables = forward_backward(lattice, target)
    return -tables.logZ, tables


def arc_posteriors(
    tables: ForwardBackwardTables,
    lattice: Lattice,
    target: TargetSequence,
    weights: ArcWeights | None = None,
) -> ArcPosteriors:
    """gamma(arc) = exp(alpha[src] + weight + beta[dst] - logZ) per arc."""
    tables.check_match(lattice, target)
    read, write = weights if weights is not None else arc_weights(lattice, target)
    al, be, logZ = tables.alpha, tables.beta, tables.logZ
    T, U = lattice.num_decisions, lattice.target_len
    g_read = np.exp(al[:T, :] + read + be[1:, :] - logZ)
    g_write = np.exp(al[:, :U] + write + be[:, 1:] - logZ)
    return ArcPosteriors(read=g_read, write=g_write)


def weight_grad_to_score_grad(
    lattice: Lattice,
    target: TargetSequence,
    read_grad: np.ndarray,
    write_grad: np.ndarray,
    denom: np.ndarray | None = None,
) -> np.ndarray:
    """Map per-arc weight gradients to gradients on pre-softmax scores.

    Non-terminal arcs touch one log-probability entry each (blank for READ,
    the reference token for WRITE); the log-softmax Jacobian then spreads
    their gradient over the row.  Terminal WRITE weights are renormalized
    over non-blank symbols, so their score gradient is the direct
    renormalized-softmax form: +1 on the reference token, minus the
    non-blank posterior on every non-blank coordinate, exactly 0 on blank.
    """
    T, U = lattice.num_decisions, lattice.target_len
    g = np.zeros_like(lattice.logits)
    g[:T, :, lattice.blank] += read_grad
    tokens = np.asarray(target.tokens, dtype=np.intp)
    cols = np.arange(U)
    if U:
        g[np.arange(T)[:, None], cols[None, :], tokens[None, :]] += write_grad[:T]
    rowsum = g.sum(axis=2, keepdims=True)
    out = g - np.exp(lattice.logits) * rowsum
    if U:
        if denom is None:
            denom = _terminal_log_denominator(lattice)
        usable = denom != NEG_INF
        applied = np.where(usable, write_grad[T], 0.0)
        with np.errstate(over="ignore"):
            q = np.exp(lattice.logits[T, :U, :] - np.where(usable, denom, 0.0)[:, None])
        q[:, lattice.blank] = 0.0
        q[~usable, :] = 0.0
        out[T, cols, tokens] += applied
        out[T, :U, :] -= q * applied[:, None]
    return out


def nll_gradient(
    lattice: Lattice,
    target: TargetSequence,
    tables: ForwardBackwardTables | None = None,
    weights: ArcWeights | None = None,
) -> np.ndarray:
    """Exact gradient of the marginal NLL w.r.t. pre-softmax scores.

    Matches central finite differences of log_marginal_nll taken in score
    space (perturb one entry, renormalize the row, re-evaluate).
    """
    if tables is None:
        tables = forward_backward(lattice, target)
    post = arc_posteriors(tables, lattice, target, weights=weights)
    denom = weights.denom if weights is not None else None
    return weight_grad_to_score_grad(
        lattice, target, -post.read, -post.write, denom=denom
    )
