"""Node-additive latency cost, its exact lattice expectation, and AL/DAL.

The training-time latency cost of a path charges each WRITE by how far the
decoder has read past the zero-wait diagonal when the token is emitted:

    cost(i, j) = max(units(i) - j * |x| / |y|, 0) / |y|

where i is the number of decision steps read so far, j the number of tokens
written strictly before this one, and units(i) = min(i * d, |x|) converts
decision steps to source units.  READs cost nothing.  Because the cost of a
node does not depend on the rest of the path, the expectation under the
renormalized path posterior reduces to a per-arc sum weighted by occupancy,
and its gradient follows from a first-moment (log-mass, mass-weighted-cost)
forward-backward pass.

Average Lagging and Differentiable Average Lagging are evaluation-time
metrics over decode delay vectors; neither decomposes per node (DAL's
smoothed recurrence couples a token's contribution to its history), which is
exactly why the training cost above exists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .lattice import (
    NEG_INF,
    ActionPath,
    ArcPosteriors,
    ArcWeights,
    ForwardBackwardTables,
    Lattice,
    TargetSequence,
    WRITE,
    _ladd,
    arc_posteriors,
    arc_weights,
    forward_backward,
    weight_grad_to_score_grad,
)


@dataclass(frozen=True)
class LatencyParams:
    """Source/target lengths in their native units plus the decision step."""

    src_len: int
    tgt_len: int
    d: int = 1

    def __post_init__(self):
        if self.src_len < 1 or self.tgt_len < 1 or self.d < 1:
            raise ValidationError("src_len, tgt_len and d must all be >= 1")

    @property
    def num_decisions(self) -> int:
        return -(-self.src_len // self.d)

    def src_units(self, decisions: int) -> int:
        return min(decisions * self.d, self.src_len)


def node_latency(i: int, j: int, params: LatencyParams) -> float:
    """Cost of writing token j+1 after i decision steps; zero at or ahead of
    the zero-wait diagonal."""
    if j < 0 or j >= params.tgt_len:
        raise ValidationError(f"write index {j} outside target of length {params.tgt_len}")
    if i < 0:
        raise ValidationError("negative read count")
    units = params.src_units(i)
    return max(units - j * params.src_len / params.tgt_len, 0.0) / params.tgt_len


def path_latency(path: ActionPath, params: LatencyParams) -> float:
    """Sum of node costs over the WRITE actions of a path; READs are free."""
    i = j = 0
    total = 0.0
    for action in path.actions:
        if action == WRITE:
            total += node_latency(i, j, params)
            j += 1
        else:
            i += 1
    return total


def path_delays(path: ActionPath, params: LatencyParams) -> list[int]:
    """Source units consumed at each WRITE, in emission order."""
    i = 0
    delays = []
    for action in path.actions:
        if action == WRITE:
            delays.append(params.src_units(i))
        else:
            i += 1
    return delays


def _node_latency_grid(params: LatencyParams, T: int, U: int) -> np.ndarray:
    """node_latency evaluated for every WRITE arc (i, j), i in [0,T], j in [0,U)."""
    units = np.minimum(np.arange(T + 1) * params.d, params.src_len)
    j = np.arange(U)
    raw = units[:, None] - j[None, :] * (params.src_len / params.tgt_len)
    return np.maximum(raw, 0.0) / params.tgt_len


def _check_shapes(lattice: Lattice, params: LatencyParams) -> None:
    if params.num_decisions != lattice.num_decisions:
        raise ValidationError(
            f"ceil(src_len / d) = {params.num_decisions} != lattice T "
            f"{lattice.num_decisions}"
        )
    if params.tgt_len != lattice.target_len:
        raise ValidationError(
            f"tgt_len {params.tgt_len} != lattice U {lattice.target_len}"
        )


def latency_expectation(
    lattice: Lattice,
    target: TargetSequence,
    params: LatencyParams,
    tables: ForwardBackwardTables | None = None,
    posteriors: ArcPosteriors | None = None,
) -> float:
    """Expected path latency under the renormalized posterior.

    Node-additivity makes this exact as a per-arc sum: the expectation equals
    sum over WRITE arcs of occupancy * node cost.
    """
    _check_shapes(lattice, params)
    if tables is None:
        tables = forward_backward(lattice, target)
    if posteriors is None:
        posteriors = arc_posteriors(tables, lattice, target)
    lat = _node_latency_grid(params, lattice.num_decisions, lattice.target_len)
    return float(np.sum(posteriors.write * lat))


def _moment_tables(
    lattice: Lattice,
    target: TargetSequence,
    params: LatencyParams,
    tables: ForwardBackwardTables,
    weights: ArcWeights | None = None,
    lat_grid: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Log first-moment tables (mass-weighted accumulated latency).

    logM[i, j] = log sum over prefixes pi -> (i, j) of weight(pi) * cost(pi);
    logN[i, j] = same over suffixes (i, j) -> (T, U).  WRITE arcs inject
    cost; READ arcs only propagate.
    """
    T, U = lattice.num_decisions, lattice.target_len
    read_np, write_np = weights if weights is not None else arc_weights(lattice, target)
    read = read_np.tolist()
    write = write_np.tolist()
    if lat_grid is None:
        lat_grid = _node_latency_grid(params, T, U)
    with np.errstate(divide="ignore"):
        log_lat = np.log(lat_grid).tolist()
    alpha = tables.alpha.tolist()
    beta = tables.beta.tolist()

    logM = [[NEG_INF] * (U + 1) for _ in range(T + 1)]
    for i in range(T + 1):
        row = logM[i]
        for j in range(U + 1):
            if i == 0 and j == 0:
                continue
            v = NEG_INF
            if i > 0:
                v = read[i - 1][j] + logM[i - 1][j]
            if j > 0:
                inject = _ladd(row[j - 1], alpha[i][j - 1] + log_lat[i][j - 1])
                v = _ladd(v, write[i][j - 1] + inject)
            row[j] = v

    logN = [[NEG_INF] * (U + 1) for _ in range(T + 1)]
    for i in range(T, -1, -1):
        row = logN[i]
        for j in range(U, -1, -1):
            if i == T and j == U:
                continue
            v = NEG_INF
            if i < T:
                v = read[i][j] + logN[i + 1][j]
            if j < U:
                inject = _ladd(row[j + 1], beta[i][j + 1] + log_lat[i][j])
                v = _ladd(v, write[i][j] + inject)
            row[j] = v

    return np.array(logM, dtype=np.float64), np.array(logN, dtype=np.float64)


def latency_weight_gradients(
    lattice: Lattice,
    target: TargetSequence,
    params: LatencyParams,
    tables: ForwardBackwardTables,
    weights: ArcWeights | None = None,
    posteriors: ArcPosteriors | None = None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Latency-expectation gradients w.r.t. arc log-weights.

    For an arc a = (u -> v) with occupancy gamma and node cost c the weight
    gradient is gamma * (m(u) + c + n(v) - E), where m/n are the expected
    accumulated costs conditioned on passing through u (upstream) and v
    (downstream) and E is the global expectation; the -E term is the product
    rule through the posterior's normalizer.  Returns (read, write, E).
    """
    if posteriors is None:
        posteriors = arc_posteriors(tables, lattice, target, weights=weights)
    T, U = lattice.num_decisions, lattice.target_len
    lat = _node_latency_grid(params, T, U)
    expectation = float(np.sum(posteriors.write * lat))

    logM, logN = _moment_tables(
        lattice, target, params, tables, weights=weights, lat_grid=lat
    )
    # Conditional upstream/downstream expected cost; zero on unreachable nodes.
    with np.errstate(invalid="ignore"):
        m = np.where(tables.alpha == NEG_INF, 0.0, np.exp(logM - tables.alpha))
        n = np.where(tables.beta == NEG_INF, 0.0, np.exp(logN - tables.beta))

    read_grad = posteriors.read * (m[:T, :] + n[1:, :] - expectation)
    write_grad = posteriors.write * (m[:, :U] + lat + n[:, 1:] - expectation)
    return read_grad, write_grad, expectation


def latency_gradient(
    lattice: Lattice,
    target: TargetSequence,
    params: LatencyParams,
    tables: ForwardBackwardTables | None = None,
) -> np.ndarray:
    """Exact gradient of latency_expectation w.r.t. pre-softmax scores."""
    _check_shapes(lattice, params)
    if tables is None:
        tables = forward_backward(lattice, target)
    read_grad, write_grad, _ = latency_weight_gradients(
        lattice, target, params, tables
    )
    return weight_grad_to_score_grad(lattice, target, read_grad, write_grad)


def average_lagging(delays: Sequence[float], params: LatencyParams) -> float:
    """Mean lag of emitted tokens behind the ideal diagonal, truncated at the
    first token written after the full source was consumed.

    If no token ever consumes the full source (truncated decode), the sum
    runs over all of them.
    """
    if len(delays) == 0:
        raise ValidationError("empty delay vector")
    if len(delays) != params.tgt_len:
        raise ValidationError("delay vector length != tgt_len")
    rate = params.tgt_len / params.src_len
    tau = params.tgt_len
    for idx, g in enumerate(delays, start=1):
        if g >= params.src_len:
            tau = idx
            break
    total = sum(delays[idx] - idx / rate for idx in range(tau))
    return total / tau


def differentiable_average_lagging(
    delays: Sequence[float], params: LatencyParams
) -> float:
    """AL variant with a monotone smoothed delay recurrence.

    g'(1) = g(1); g'(i) = max(g(i), g'(i-1) + 1/rate); the mean of
    g'(i) - (i-1)/rate runs over the whole target.
    """
    if len(delays) == 0:
        raise ValidationError("empty delay vector")
    if len(delays) != params.tgt_len:
        raise ValidationError("delay vector length != tgt_len")
    rate = params.tgt_len / params.src_len
    total = 0.0
    g_prev = -math.inf
    for idx, g in enumerate(delays):
        g_smooth = g if idx == 0 else max(g, g_prev + 1.0 / rate)
        total += g_smooth - idx / rate
        g_prev = g_smooth
    return total / params.tgt_len
