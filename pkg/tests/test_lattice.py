import math

import numpy as np
import pytest

from rwlat import (
    ActionPath,
    Lattice,
    NoAdmissiblePathError,
    TargetSequence,
    ValidationError,
    Vocab,
    arc_posteriors,
    forward_backward,
    log_marginal_nll,
    nll_gradient,
    normalize_scores,
    path_log_prob,
)
from rwlat.lattice import arc_weights

from conftest import make_lattice, make_target, one_hot_lattice, single_path_lattice
from oracles import (
    all_action_strings,
    fd_gradient,
    oracle_arc_posteriors,
    oracle_marginal,
    oracle_path_logprob,
    vector_rel_err,
)


class TestTypes:
    def test_vocab_blank_defaults_past_real_tokens(self):
        v = Vocab(size=5, eos_id=4)
        assert v.blank_id == 5

    def test_vocab_rejects_eos_out_of_range(self):
        with pytest.raises(ValidationError):
            Vocab(size=5, eos_id=5)

    def test_vocab_rejects_blank_clash(self):
        with pytest.raises(ValidationError):
            Vocab(size=5, eos_id=0, blank_id=3)

    def test_target_check_requires_eos_terminal(self):
        v = Vocab(size=5, eos_id=4)
        TargetSequence((1, 2, 4)).check(v)
        with pytest.raises(ValidationError):
            TargetSequence((1, 2)).check(v)
        with pytest.raises(ValidationError):
            TargetSequence(()).check(v)
        with pytest.raises(ValidationError):
            TargetSequence((1, 5, 4)).check(v)  # blank inside

    def test_action_path_counts(self):
        p = ActionPath("RWRW", (3, 1))
        assert p.num_reads == 2 and p.num_writes == 2
        with pytest.raises(ValidationError):
            ActionPath("RWX", (1,))
        with pytest.raises(ValidationError):
            ActionPath("RW", ())

    def test_lattice_validation(self):
        bad = np.zeros((2, 2, 3))
        with pytest.raises(ValidationError):
            Lattice(bad).validate()  # rows not normalized
        nan = normalize_scores(np.zeros((2, 2, 3)))
        nan[0, 0, 0] = np.nan
        with pytest.raises(ValidationError):
            Lattice(nan).validate()


class TestPathLogProb:
    def test_only_legal_path_t1_u0(self, rng):
        lat = make_lattice(rng, 1, 0, 3)
        path = ActionPath("R", ())
        assert path_log_prob(lat, path) == lat.logits[0, 0, lat.blank]

    def test_direct_factorization_t2_u1(self, rng):
        lat = make_lattice(rng, 2, 1, 4)
        y = 2
        path = ActionPath("RWR", (y,))
        expected = (
            lat.logits[0, 0, lat.blank]
            + lat.logits[1, 0, y]
            + lat.logits[1, 1, lat.blank]
        )
        assert path_log_prob(lat, path) == pytest.approx(expected, abs=1e-12)

    def test_matches_hand_accumulation_on_random_paths(self, rng):
        lat = make_lattice(rng, 3, 2, 5)
        tokens = (1, 4)
        for actions in all_action_strings(3, 2):
            got = path_log_prob(lat, ActionPath(actions, tokens))
            want = oracle_path_logprob(lat.logits, tokens, actions)
            assert got == pytest.approx(want, abs=1e-12)

    def test_invalid_path_shapes_rejected(self, rng):
        lat = make_lattice(rng, 2, 1, 4)
        # A read past the terminal column implies more than T reads; both
        # excess reads and missing reads are invalid for this grid.
        with pytest.raises(ValidationError):
            path_log_prob(lat, ActionPath("RRRW", (1,)))
        with pytest.raises(ValidationError):
            path_log_prob(lat, ActionPath("RW", (1,)))


class TestMarginalNLL:
    def test_t1_u0_single_read(self, rng):
        lat = make_lattice(rng, 1, 0, 3)
        nll, tables = log_marginal_nll(lat, TargetSequence(()))
        assert nll == pytest.approx(-lat.logits[0, 0, lat.blank], abs=1e-12)
        assert tables.logZ == pytest.approx(-nll, abs=1e-12)

    def test_t2_u1_three_interleavings(self, rng):
        lat = make_lattice(rng, 2, 1, 4)
        target = TargetSequence((3,))
        nll, _ = log_marginal_nll(lat, target)
        assert nll == pytest.approx(-oracle_marginal(lat.logits, (3,)), rel=1e-12)

    def test_t4_u3_brute_force_35_paths(self, rng):
        lat = make_lattice(rng, 4, 3, 5)
        target = make_target(rng, 3, 5)
        nll, _ = log_marginal_nll(lat, target)
        want = -oracle_marginal(lat.logits, target.tokens)
        assert nll == pytest.approx(want, rel=1e-11)

    @pytest.mark.parametrize("T,U", [(1, 1), (2, 2), (3, 1), (3, 4), (5, 4), (5, 2)])
    def test_marginalization_matches_enumeration(self, rng, T, U):
        for _ in range(5):
            lat = make_lattice(rng, T, U, 4)
            target = make_target(rng, U, 4)
            nll, _ = log_marginal_nll(lat, target)
            want = -oracle_marginal(lat.logits, target.tokens)
            assert math.exp(-nll) == pytest.approx(math.exp(-want), rel=1e-9)

    def test_degenerate_lattice_raises_not_nan(self):
        # A target token with zero probability everywhere blocks every path.
        scores = np.zeros((3, 2, 4))
        scores[:, :, 1] = -np.inf
        lat = Lattice(normalize_scores(scores))
        with pytest.raises(NoAdmissiblePathError):
            log_marginal_nll(lat, TargetSequence((1,)))

    def test_target_length_mismatch(self, rng):
        lat = make_lattice(rng, 2, 1, 4)
        with pytest.raises(ValidationError):
            log_marginal_nll(lat, TargetSequence((1, 2)))

    def test_alpha_beta_bounded_by_logz(self, rng):
        lat = make_lattice(rng, 4, 3, 5)
        target = make_target(rng, 3, 5)
        t = forward_backward(lat, target)
        assert t.alpha[0, 0] == 0.0 and t.beta[-1, -1] == 0.0
        assert np.all(t.alpha + t.beta <= t.logZ + 1e-9)


class TestArcPosteriors:
    def test_forced_single_read(self, rng):
        lat = make_lattice(rng, 1, 0, 3)
        target = TargetSequence(())
        _, tables = log_marginal_nll(lat, target)
        post = arc_posteriors(tables, lat, target)
        assert post.read.shape == (1, 1)
        assert post.read[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_single_path_lattice_occupancy_is_indicator(self):
        tokens = (1, 0)
        lat = single_path_lattice(3, 2, 3, tokens, "RWRWR")
        target = TargetSequence(tokens)
        _, tables = log_marginal_nll(lat, target)
        post = arc_posteriors(tables, lat, target)
        on = {("R", 0, 0), ("W", 1, 0), ("R", 1, 1), ("W", 2, 1), ("R", 2, 2)}
        for i in range(3):
            for j in range(3):
                want = 1.0 if ("R", i, j) in on else 0.0
                assert post.read[i, j] == pytest.approx(want, abs=1e-9)
        for i in range(4):
            for j in range(2):
                want = 1.0 if ("W", i, j) in on else 0.0
                assert post.write[i, j] == pytest.approx(want, abs=1e-9)

    def test_matches_brute_force_on_random_3x2(self, rng):
        lat = make_lattice(rng, 3, 2, 5)
        target = make_target(rng, 2, 5)
        _, tables = log_marginal_nll(lat, target)
        post = arc_posteriors(tables, lat, target)
        want_read, want_write = oracle_arc_posteriors(lat.logits, target.tokens)
        np.testing.assert_allclose(post.read, want_read, atol=1e-9)
        np.testing.assert_allclose(post.write, want_write, atol=1e-9)

    @pytest.mark.parametrize("T,U", [(2, 2), (4, 3), (5, 1)])
    def test_cut_property(self, rng, T, U):
        lat = make_lattice(rng, T, U, 4)
        target = make_target(rng, U, 4)
        _, tables = log_marginal_nll(lat, target)
        post = arc_posteriors(tables, lat, target)
        for cut in range(T + U):
            total = 0.0
            for i in range(T + 1):
                j = cut - i
                if not 0 <= j <= U:
                    continue
                if i < T:
                    total += post.read[i, j]
                if j < U:
                    total += post.write[i, j]
            assert total == pytest.approx(1.0, abs=1e-6)

    def test_mismatched_tables_rejected(self, rng):
        lat = make_lattice(rng, 2, 2, 4)
        t1 = make_target(rng, 2, 4)
        t2 = TargetSequence(tuple((t + 1) % 4 for t in t1.tokens))
        _, tables = log_marginal_nll(lat, t1)
        with pytest.raises(ValidationError):
            arc_posteriors(tables, lat, t2)


class TestNllGradient:
    def test_single_path_matches_finite_differences(self):
        tokens = (1, 0)
        lat = single_path_lattice(3, 2, 3, tokens, "RWRWR")
        target = TargetSequence(tokens)
        grad = nll_gradient(lat, target)
        coords = [(0, 0, 3), (1, 0, 1), (1, 1, 3), (2, 1, 0), (0, 0, 0)]
        fd = fd_gradient(
            lambda a: log_marginal_nll(Lattice(a), target)[0], lat.logits, coords
        )
        sampled = np.array([grad[c] for c in coords])
        assert vector_rel_err(sampled, fd) < 1e-6

    def test_uniform_lattice_symmetric_blank_gradient(self):
        lat = Lattice(normalize_scores(np.zeros((3, 2, 3))))
        target = TargetSequence((0,))
        grad = nll_gradient(lat, target)
        # Uniform rows make the grid symmetric under time reversal, which
        # exchanges the blank coordinates (0,0) <-> (1,1) and (0,1) <-> (1,0).
        assert grad[0, 0, 2] == pytest.approx(grad[1, 1, 2], abs=1e-12)
        assert grad[0, 1, 2] == pytest.approx(grad[1, 0, 2], abs=1e-12)

    @pytest.mark.parametrize("trial", range(8))
    def test_random_lattices_match_finite_differences(self, trial):
        rng = np.random.default_rng(100 + trial)
        lat = make_lattice(rng, 4, 3, 5)
        target = make_target(rng, 3, 5)
        grad = nll_gradient(lat, target)
        shape = lat.logits.shape
        flat = rng.choice(shape[0] * shape[1] * shape[2], size=20, replace=False)
        coords = [tuple(np.unravel_index(f, shape)) for f in flat]
        fd = fd_gradient(
            lambda a: log_marginal_nll(Lattice(a), target)[0], lat.logits, coords
        )
        sampled = np.array([grad[c] for c in coords])
        assert vector_rel_err(sampled, fd) <= 1e-5

    def test_gradient_descent_direction_reduces_nll(self, rng):
        lat = make_lattice(rng, 3, 2, 4)
        target = make_target(rng, 2, 4)
        nll0, _ = log_marginal_nll(lat, target)
        grad = nll_gradient(lat, target)
        stepped = Lattice(normalize_scores(lat.logits - 1e-3 * grad))
        nll1, _ = log_marginal_nll(stepped, target)
        assert nll1 < nll0


class TestLogSpaceSafety:
    def test_minus_inf_arcs_never_produce_nan(self, rng):
        lat = make_lattice(rng, 3, 2, 4)
        scores = lat.logits.copy()
        scores[0, 0, 1] = -np.inf
        scores[2, 1, 4] = -np.inf
        scores[1, :, 2] = -np.inf
        lat = Lattice(normalize_scores(scores))
        target = TargetSequence((1, 2))
        nll, tables = log_marginal_nll(lat, target)
        assert math.isfinite(nll)
        post = arc_posteriors(tables, lat, target)
        assert not np.isnan(post.read).any() and not np.isnan(post.write).any()
        grad = nll_gradient(lat, target)
        assert not np.isnan(grad).any()

    def test_exact_one_hot_terminal_renormalization(self):
        # Terminal blank with probability ~1 must not poison the weights.
        scores = np.zeros((2, 2, 3))
        scores[1, 0, 2] = 60.0  # blank dominates the terminal context
        lat = Lattice(normalize_scores(scores))
        target = TargetSequence((0,))
        read, write = arc_weights(lat, target)
        # Renormalized over non-blank symbols: uniform over 2 real tokens.
        assert write[1, 0] == pytest.approx(math.log(0.5), abs=1e-9)
        nll, _ = log_marginal_nll(lat, target)
        assert math.isfinite(nll)
        grad = nll_gradient(lat, target)
        assert not np.isnan(grad).any()
        # Terminal weights are invariant to the blank score.
        assert grad[1, 0, 2] == pytest.approx(0.0, abs=1e-12)
