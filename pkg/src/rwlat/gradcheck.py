"""Finite-difference validation of the analytic kernel gradients.

Central differences are taken in pre-softmax score space: perturb one
coordinate, renormalize the row, re-evaluate.  Agreement is measured per
lattice as max |analytic - numeric| over the sampled coordinates divided by
the largest sampled gradient magnitude, so near-zero coordinates do not
drown the comparison in finite-difference round-off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import (
    Lattice,
    TargetSequence,
    log_marginal_nll,
    nll_gradient,
    normalize_scores,
    random_lattice,
)
from .latency import LatencyParams, latency_expectation, latency_gradient

DEFAULT_STEP = 1e-4


def fd_score_gradient(value_fn, lattice: Lattice, coords, step: float = DEFAULT_STEP):
    """Central finite differences of value_fn at the given (i, j, k) coords."""
    base = lattice.logits
    out = np.zeros(len(coords))
    for idx, (i, j, k) in enumerate(coords):
        plus = base.copy()
        plus[i, j, k] += step
        minus = base.copy()
        minus[i, j, k] -= step
        out[idx] = (
            value_fn(Lattice(normalize_scores(plus)))
            - value_fn(Lattice(normalize_scores(minus)))
        ) / (2.0 * step)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max |n| over the sampled coordinates."""
    scale = max(float(np.max(np.abs(numeric))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale


@dataclass(frozen=True)
class GradCheckReport:
    trials: int
    coords_per_trial: int
    max_rel_err_nll: float
    max_rel_err_latency: float
    tol_nll: float
    tol_latency: float

    @property
    def passed(self) -> bool:
        return (
            self.max_rel_err_nll <= self.tol_nll
            and self.max_rel_err_latency <= self.tol_latency
        )

    def lines(self) -> list[str]:
        status = "PASS" if self.passed else "FAIL"
        return [
            f"trials={self.trials} coords_per_trial={self.coords_per_trial}",
            f"nll gradient      max rel err {self.max_rel_err_nll:.3e}"
            f" (tol {self.tol_nll:.1e})",
            f"latency gradient  max rel err {self.max_rel_err_latency:.3e}"
            f" (tol {self.tol_latency:.1e})",
            status,
        ]


def run_gradcheck(
    num_decisions: int,
    target_len: int,
    vocab_size: int = 5,
    trials: int = 10,
    coords_per_trial: int = 20,
    seed: int = 0,
    step: float = DEFAULT_STEP,
    tol_nll: float = 1e-5,
    tol_latency: float = 1e-4,
    d: int = 1,
) -> GradCheckReport:
    """Compare analytic NLL / latency gradients against central differences
    on random lattices with random targets."""
    rng = np.random.default_rng(seed)
    params = LatencyParams(src_len=num_decisions * d, tgt_len=target_len, d=d)
    worst_nll = 0.0
    worst_lat = 0.0
    for _ in range(trials):
        lattice = random_lattice(num_decisions, target_len, vocab_size, rng)
        target = TargetSequence(
            tuple(int(t) for t in rng.integers(0, vocab_size, size=target_len))
        )
        shape = lattice.logits.shape
        flat = rng.choice(shape[0] * shape[1] * shape[2], size=coords_per_trial, replace=False)
        coords = [np.unravel_index(f, shape) for f in flat]

        analytic = nll_gradient(lattice, target)
        numeric = fd_score_gradient(
            lambda lat: log_marginal_nll(lat, target)[0], lattice, coords, step
        )
        sampled = np.array([analytic[c] for c in coords])
        worst_nll = max(worst_nll, relative_error(sampled, numeric))

        analytic = latency_gradient(lattice, target, params)
        numeric = fd_score_gradient(
            lambda lat: latency_expectation(lat, target, params), lattice, coords, step
        )
        sampled = np.array([analytic[c] for c in coords])
        worst_lat = max(worst_lat, relative_error(sampled, numeric))
    return GradCheckReport(
        trials=trials,
        coords_per_trial=coords_per_trial,
        max_rel_err_nll=worst_nll,
        max_rel_err_latency=worst_lat,
        tol_nll=tol_nll,
        tol_latency=tol_latency,
    )
