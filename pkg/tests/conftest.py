import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rwlat import Lattice, TargetSequence, normalize_scores


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_lattice(rng, T, U, vocab, scale=1.0):
    scores = scale * rng.standard_normal((T + 1, U + 1, vocab + 1))
    return Lattice(normalize_scores(scores))


def make_target(rng, U, vocab):
    return TargetSequence(tuple(int(t) for t in rng.integers(0, vocab, size=U)))


def one_hot_lattice(T, U, vocab, hot):
    """Lattice that puts almost all mass on chosen symbols per context.

    hot maps (i, j) -> symbol index; unspecified contexts stay uniform.
    Uses a large but finite margin so gradients stay well-defined.
    """
    scores = np.zeros((T + 1, U + 1, vocab + 1))
    for (i, j), k in hot.items():
        scores[i, j, k] = 200.0
    return Lattice(normalize_scores(scores))


def single_path_lattice(T, U, vocab, tokens, actions):
    """All probability mass on one action path (one-hot rows along it)."""
    hot = {}
    i = j = 0
    blank = vocab
    for act in actions:
        if act == "R":
            hot[(i, j)] = blank
            i += 1
        else:
            hot[(i, j)] = tokens[j]
            j += 1
    return one_hot_lattice(T, U, vocab, hot)
