import numpy as np
import pytest

from labelqc.data import LabelType, way_type_code
from labelqc.errors import DataError
from labelqc.labelmodel import (
    LabelModelParams,
    fit,
    hard_rule,
    majority_vote,
    predict_soft,
)
from labelqc.lf import ABSTAIN, CORRECT, WRONG, LFConfig, VoteMatrix
from labelqc.synth import planted_vote_matrix

from conftest import make_features


def _matrix(rows, names=None):
    votes = np.array(rows, dtype=np.int8)
    names = names or tuple(f"lf{i}" for i in range(votes.shape[1]))
    return VoteMatrix(votes, names)


class TestFit:
    def test_single_always_on_lf_recovers_planted_accuracy(self):
        # One LF and one free parameter are only identifiable with the class
        # balance pinned to the generator's prior. Convergence is slow on
        # this near-flat likelihood, hence the generous iteration budget.
        vm, y = planted_vote_matrix(10_000, (0.9,), (1.0,), pi=0.6, seed=3)
        params = fit(vm, max_iters=3000, class_balance=0.6)
        assert params.alpha[0] == pytest.approx(0.9, abs=0.02)

    def test_identical_columns_get_identical_alpha(self):
        vm, _ = planted_vote_matrix(2_000, (0.8,), (1.0,), pi=0.6, seed=5)
        votes = np.hstack([vm.votes, vm.votes])
        params = fit(_matrix(votes))
        assert params.alpha[0] == pytest.approx(params.alpha[1], abs=1e-12)

    def test_degenerate_coverage(self):
        votes = np.full((50, 2), ABSTAIN, dtype=np.int8)
        votes[:, 0] = CORRECT
        votes[0, 1] = CORRECT
        params = fit(_matrix(votes))
        assert params.beta[1] == pytest.approx(1 / 50)
        assert 0.05 <= params.alpha[1] <= 0.95

    def test_all_abstain_rejected(self):
        votes = np.full((10, 3), ABSTAIN, dtype=np.int8)
        with pytest.raises(DataError):
            fit(_matrix(votes))

    def test_monotone_log_likelihood(self):
        vm, _ = planted_vote_matrix(3_000, (0.9, 0.7, 0.6), (0.8, 0.5, 0.9), pi=0.55, seed=9)
        params = fit(vm)
        deltas = np.diff(params.log_likelihood_trace)
        assert (deltas >= -1e-9).all()

    def test_permutation_equivariance(self):
        vm, _ = planted_vote_matrix(2_000, (0.9, 0.8, 0.6), (0.7, 0.9, 0.5), pi=0.6, seed=2)
        perm = [2, 0, 1]
        vm2 = _matrix(vm.votes[:, perm], tuple(vm.lf_names[i] for i in perm))
        p1 = fit(vm)
        p2 = fit(vm2)
        assert p2.alpha == pytest.approx(p1.alpha[perm], abs=1e-9)
        assert p2.beta == pytest.approx(p1.beta[perm], abs=1e-12)
        soft1 = [s.p_correct for s in predict_soft(vm, p1)]
        soft2 = [s.p_correct for s in predict_soft(vm2, p2)]
        assert soft2 == pytest.approx(soft1, abs=1e-9)

    def test_cavity_mode_does_not_self_inflate_noise(self):
        # A coin-flip-firing correct-only voter should not earn a high
        # accuracy from its own vote.
        rng = np.random.default_rng(0)
        vm, y = planted_vote_matrix(8_000, (0.85, 0.8), (0.7, 0.7), pi=0.65, seed=4)
        noise = np.where(rng.random(8_000) < 0.3, CORRECT, ABSTAIN).astype(np.int8)
        votes = np.hstack([vm.votes, noise[:, None]])
        plain = fit(_matrix(votes), class_balance=0.65)
        cav = fit(_matrix(votes), class_balance=0.65, cavity=True)
        truth_precision = y[noise == CORRECT].mean()
        assert abs(cav.alpha[2] - truth_precision) < abs(plain.alpha[2] - truth_precision)

    def test_params_json_roundtrip(self):
        vm, _ = planted_vote_matrix(500, (0.8, 0.6), (0.9, 0.4), pi=0.5, seed=1)
        params = fit(vm)
        again = LabelModelParams.from_json(params.to_json())
        assert again.alpha == pytest.approx(params.alpha, abs=0)
        assert again.pi == params.pi
        assert again.lf_names == params.lf_names


class TestPredictSoft:
    def test_uncovered_rows_carry_prior(self):
        vm, _ = planted_vote_matrix(200, (0.9,), (0.5,), pi=0.6, seed=7)
        params = fit(vm, class_balance=0.6)
        soft = predict_soft(vm, params)
        for s, row in zip(soft, vm.votes):
            if row[0] == ABSTAIN:
                assert not s.covered
                assert s.p_correct == params.pi
            else:
                assert s.covered

    def test_single_positive_vote_raises_posterior(self):
        params = LabelModelParams(
            alpha=np.array([0.9, 0.7]),
            beta=np.array([0.5, 0.5]),
            pi=0.6,
            log_likelihood_trace=(0.0,),
            lf_names=("a", "b"),
        )
        votes = np.array([[CORRECT, ABSTAIN], [ABSTAIN, ABSTAIN]], dtype=np.int8)
        soft = predict_soft(_matrix(votes, ("a", "b")), params)
        assert soft[0].p_correct > params.pi
        assert soft[1].p_correct == params.pi

    def test_hand_computed_posteriors(self):
        """Bayes by hand with alpha=(0.9, 0.6), pi=0.7 (fractions, then float):

        (C,C): .7*.9*.6 / (.7*.9*.6 + .3*.1*.4)           = 63/65
        (C,W): .7*.9*.4 / (.7*.9*.4 + .3*.1*.6)           = 14/15
        (W,W): .7*.1*.4 / (.7*.1*.4 + .3*.9*.6)           = 14/95
        (A,C): .7*.6   / (.7*.6   + .3*.4)                = 7/9
        (A,A): prior                                       = 7/10
        """
        params = LabelModelParams(
            alpha=np.array([0.9, 0.6]),
            beta=np.array([0.8, 0.8]),
            pi=0.7,
            log_likelihood_trace=(0.0,),
            lf_names=("a", "b"),
        )
        votes = np.array(
            [
                [CORRECT, CORRECT],
                [CORRECT, WRONG],
                [WRONG, WRONG],
                [ABSTAIN, CORRECT],
                [ABSTAIN, ABSTAIN],
            ],
            dtype=np.int8,
        )
        soft = predict_soft(_matrix(votes, ("a", "b")), params)
        expected = [63 / 65, 14 / 15, 14 / 95, 7 / 9, 7 / 10]
        assert [s.p_correct for s in soft] == pytest.approx(expected, abs=1e-12)
        assert [s.covered for s in soft] == [True, True, True, True, False]

    def test_column_count_mismatch(self):
        vm, _ = planted_vote_matrix(100, (0.8, 0.7), (0.9, 0.9), pi=0.5, seed=0)
        params = fit(vm)
        bad = _matrix(vm.votes[:, :1], ("lf0",))
        with pytest.raises(DataError):
            predict_soft(bad, params)


class TestMajorityVote:
    def test_two_thirds(self):
        votes = np.array([[CORRECT, CORRECT, WRONG]], dtype=np.int8)
        assert majority_vote(_matrix(votes))[0].p_correct == pytest.approx(2 / 3)

    def test_all_abstain_is_half(self):
        votes = np.full((1, 4), ABSTAIN, dtype=np.int8)
        s = majority_vote(_matrix(votes))[0]
        assert s.p_correct == 0.5 and not s.covered

    def test_matches_brute_force(self):
        rng = np.random.default_rng(8)
        votes = rng.choice(np.array([CORRECT, WRONG, ABSTAIN], dtype=np.int8), size=(100, 6))
        out = majority_vote(_matrix(votes))
        for s, row in zip(out, votes):
            speak = [v for v in row if v != ABSTAIN]
            expected = 0.5 if not speak else sum(v == CORRECT for v in speak) / len(speak)
            assert s.p_correct == pytest.approx(expected)


class TestHardRule:
    RULES = {lt: "distance_i" for lt in LabelType}

    def test_designated_wrong_vote_maps_to_zero(self):
        fv = make_features(label_type=int(LabelType.CurbRamp),
                           way_type=way_type_code("residential"), distance_i=60.0)
        out = hard_rule([fv], self.RULES, LFConfig())
        assert out[0].p_correct == 0.0 and out[0].covered

    def test_abstain_maps_to_half(self):
        fv = make_features(label_type=int(LabelType.Obstacle))
        out = hard_rule([fv], self.RULES, LFConfig())
        assert out[0].p_correct == 0.5 and not out[0].covered

    def test_equals_single_lf_lookup(self):
        from labelqc.lf import REGISTRY, apply_all

        rng = np.random.default_rng(5)
        from conftest import random_features

        feats = random_features(rng, 120)
        rules = {
            LabelType.CurbRamp: "distance_i",
            LabelType.MissingCurbRamp: "way_type",
            LabelType.Obstacle: "zoom",
            LabelType.SurfaceProblem: "zoom",
            LabelType.MissingSidewalk: "severity",
        }
        out = hard_rule(feats, rules, LFConfig())
        vm = apply_all(feats, LFConfig())
        col = {name: j for j, name in enumerate(vm.lf_names)}
        for s, fv, row in zip(out, feats, vm.votes):
            vote = row[col[rules[LabelType(fv.label_type)]]]
            expected = {CORRECT: 1.0, WRONG: 0.0, ABSTAIN: 0.5}[int(vote)]
            assert s.p_correct == expected

    def test_unknown_lf_rejected(self):
        with pytest.raises(DataError, match="unknown LF"):
            hard_rule([make_features()], {lt: "nope" for lt in LabelType}, LFConfig())
