"""Flat array-boundary adapter over the rwlat lattice kernel.

Host training frameworks hand over one contiguous float64 buffer of
normalized log-probabilities plus a (T, U, vocab) shape descriptor (the
stored array is (T+1) x (U+1) x (vocab+1), row-major, blank last) and get
back plain floats and a flat float64 gradient buffer.  Exactly one validated
marshaling copy is made per call; results are numerically identical to
calling the underlying library on the same data.

Shape or argument problems raise BoundaryError; numerical problems inside
the kernel surface as the library's own exceptions.  All calls are blocking,
reentrant, and safe to issue from multiple threads.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

import rwlat
from rwlat import (
    Lattice,
    LatencyParams,
    TargetSequence,
)
from rwlat import latency as _latency
from rwlat import lattice as _lattice

__version__ = "0.1.0"
primary_version = rwlat.__version__

__all__ = [
    "BoundaryError",
    "average_lagging",
    "differentiable_average_lagging",
    "latency_expectation",
    "latency_gradient",
    "loss_and_grad",
    "marginal_nll",
    "nll_gradient",
    "primary_version",
]


class BoundaryError(ValueError):
    """The caller's buffer, shape, or argument set is malformed."""


def _marshal(buffer, shape) -> Lattice:
    """One validated copy from the caller's flat buffer into a Lattice."""
    try:
        T, U, vocab = (int(v) for v in shape)
    except (TypeError, ValueError) as exc:
        raise BoundaryError(f"shape must be (T, U, vocab): {exc}") from exc
    if T < 1 or U < 0 or vocab < 1:
        raise BoundaryError(f"invalid shape descriptor (T={T}, U={U}, vocab={vocab})")
    try:
        flat = np.array(buffer, dtype=np.float64, copy=True)
    except (TypeError, ValueError) as exc:
        raise BoundaryError(f"buffer is not float64-convertible: {exc}") from exc
    if flat.ndim != 1:
        raise BoundaryError(f"buffer must be one-dimensional, got {flat.ndim}-d")
    expected = (T + 1) * (U + 1) * (vocab + 1)
    if flat.size != expected:
        raise BoundaryError(
            f"buffer length {flat.size} != (T+1)(U+1)(vocab+1) = {expected}"
        )
    return Lattice(np.ascontiguousarray(flat.reshape(T + 1, U + 1, vocab + 1)))


def _marshal_target(target, lattice: Lattice) -> TargetSequence:
    try:
        tokens = tuple(int(t) for t in target)
    except (TypeError, ValueError) as exc:
        raise BoundaryError(f"target is not a token sequence: {exc}") from exc
    if len(tokens) != lattice.target_len:
        raise BoundaryError(
            f"target length {len(tokens)} != U {lattice.target_len}"
        )
    if any(not 0 <= t < lattice.vocab_size for t in tokens):
        raise BoundaryError("target token outside [0, vocab)")
    return TargetSequence(tokens)


def _latency_params(lattice: Lattice, d: int, src_len: int | None) -> LatencyParams:
    if d < 1:
        raise BoundaryError("decision step d must be >= 1")
    if src_len is None:
        src_len = lattice.num_decisions * d
    if -(-int(src_len) // d) != lattice.num_decisions:
        raise BoundaryError(
            f"ceil(src_len / d) must equal T = {lattice.num_decisions}"
        )
    return LatencyParams(src_len=int(src_len), tgt_len=lattice.target_len, d=d)


def marginal_nll(buffer, shape, target) -> float:
    """Negative log-probability marginalized over all expansion paths."""
    lattice = _marshal(buffer, shape)
    nll, _ = _lattice.log_marginal_nll(lattice, _marshal_target(target, lattice))
    return nll


def nll_gradient(buffer, shape, target) -> np.ndarray:
    """Flat float64 gradient of marginal_nll w.r.t. pre-softmax scores."""
    lattice = _marshal(buffer, shape)
    grad = _lattice.nll_gradient(lattice, _marshal_target(target, lattice))
    return np.ascontiguousarray(grad).reshape(-1)


def latency_expectation(buffer, shape, target, d: int = 1, src_len: int | None = None) -> float:
    """Expected path latency under the renormalized path posterior."""
    lattice = _marshal(buffer, shape)
    tgt = _marshal_target(target, lattice)
    params = _latency_params(lattice, d, src_len)
    return _latency.latency_expectation(lattice, tgt, params)


def latency_gradient(buffer, shape, target, d: int = 1, src_len: int | None = None) -> np.ndarray:
    """Flat float64 gradient of latency_expectation."""
    lattice = _marshal(buffer, shape)
    tgt = _marshal_target(target, lattice)
    params = _latency_params(lattice, d, src_len)
    grad = _latency.latency_gradient(lattice, tgt, params)
    return np.ascontiguousarray(grad).reshape(-1)


def loss_and_grad(
    buffer,
    shape,
    target,
    lambda_latency: float = 1.0,
    lambda_ce: float = 1.0,
    d: int = 1,
    src_len: int | None = None,
) -> tuple[dict, np.ndarray]:
    """Combined objective and its flat score-space gradient.

    Returns ({"nll", "latency", "ce", "total"}, gradient buffer).  The
    gradient is computed as nll + lambda_latency * latency + lambda_ce * ce
    term by term through the library's public gradients, so results are
    bit-identical to composing those calls directly; zero scale factors
    skip their term entirely.
    """
    from rwlat import toy as _toy

    if lambda_latency < 0 or lambda_ce < 0:
        raise BoundaryError("scale factors must be nonnegative")
    lattice = _marshal(buffer, shape)
    tgt = _marshal_target(target, lattice)
    params = _latency_params(lattice, d, src_len)

    nll, tables = _lattice.log_marginal_nll(lattice, tgt)
    latency = _latency.latency_expectation(lattice, tgt, params, tables=tables)
    ce = _toy.ce_auxiliary_loss(lattice, tgt)
    components = {
        "nll": nll,
        "latency": latency,
        "ce": ce,
        "total": nll + lambda_latency * latency + lambda_ce * ce,
    }
    grad = _lattice.nll_gradient(lattice, tgt, tables=tables)
    if lambda_latency:
        grad = grad + lambda_latency * _latency.latency_gradient(
            lattice, tgt, params, tables=tables
        )
    if lambda_ce:
        grad = grad + lambda_ce * _toy.ce_gradient(lattice, tgt)
    return components, np.ascontiguousarray(grad).reshape(-1)


def average_lagging(delays: Sequence[float], src_len: int, tgt_len: int, d: int = 1) -> float:
    """Average Lagging over a decode delay vector, in source units."""
    params = LatencyParams(src_len=int(src_len), tgt_len=int(tgt_len), d=int(d))
    return _latency.average_lagging(list(delays), params)


def differentiable_average_lagging(
    delays: Sequence[float], src_len: int, tgt_len: int, d: int = 1
) -> float:
    """Smoothed-recurrence Average Lagging over a decode delay vector."""
    params = LatencyParams(src_len=int(src_len), tgt_len=int(tgt_len), d=int(d))
    return _latency.differentiable_average_lagging(list(delays), params)
