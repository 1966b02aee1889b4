import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from examgen import assess
from examgen.data import Question

from .conftest import make_course


def dist_from(scores):
    return assess.ScoreDistribution.from_scores(np.asarray(scores, dtype=float))


class TestQuestionScore:
    def test_full_mastery_gives_full_score(self):
        q = Question(0, frozenset({0, 1}), 2.5, {0: 1.5, 1: 1.0})
        assert assess.question_score(np.ones(2), q) == pytest.approx(2.5)

    def test_zero_mastery_gives_zero(self):
        q = Question(0, frozenset({0, 1}), 2.5, {0: 1.5, 1: 1.0})
        assert assess.question_score(np.zeros(2), q) == 0.0

    def test_hand_arithmetic(self):
        q = Question(0, frozenset({0, 1}), 2.5, {0: 1.5, 1: 1.0})
        assert assess.question_score(np.array([0.8, 0.4]), q) == pytest.approx(1.6)

    def test_monotone_in_every_coordinate(self, rng):
        q = Question(0, frozenset({0, 2}), 3.0, {0: 2.0, 2: 1.0})
        p = rng.random(3)
        base = assess.question_score(p, q)
        for k in (0, 2):
            bumped = p.copy()
            bumped[k] = min(1.0, bumped[k] + 0.1)
            assert assess.question_score(bumped, q) >= base


class TestScriptScore:
    def test_empty_script_scores_zero(self):
        course = make_course([{0}], kp_count=1)
        assert assess.script_score(np.ones(1), assess.ExamScript(()), course) == 0.0

    def test_single_question_reduction(self, rng):
        course = make_course([{0, 1}], kp_count=2)
        p = rng.random(2)
        script = assess.ExamScript((0,))
        assert assess.script_score(p, script, course) == pytest.approx(
            assess.question_score(p, course.question(0))
        )

    def test_forty_questions_full_mastery_scores_100(self):
        course = make_course([{i % 5} for i in range(40)], kp_count=5)
        script = assess.ExamScript(tuple(range(40)))
        assert assess.script_score(np.ones(5), script, course) == pytest.approx(100.0)

    def test_linearity_over_disjoint_scripts(self, rng):
        course = make_course([{i % 4} for i in range(12)], kp_count=4)
        p = rng.random(4)
        a = assess.ExamScript(tuple(range(6)))
        b = assess.ExamScript(tuple(range(6, 12)))
        union = assess.ExamScript(tuple(range(12)))
        assert assess.script_score(p, union, course) == pytest.approx(
            assess.script_score(p, a, course) + assess.script_score(p, b, course)
        )


class TestScoreDistribution:
    def test_point_mass(self):
        d = dist_from([70.0])
        assert d.bins[70] == 1.0 and d.bins.sum() == pytest.approx(1.0)

    def test_two_students(self):
        d = dist_from([60.0, 80.0])
        assert d.bins[60] == 0.5 and d.bins[80] == 0.5

    def test_bins_mean_tracks_raw_mean(self, small_world):
        from examgen import dkt as dkt_mod

        course = small_world["course"]
        roster = small_world["rosters"][0]
        script = assess.ExamScript(tuple(range(10)))
        d = assess.class_score_distribution(
            roster, small_world["model"], script, course
        )
        assert d.bins.sum() == pytest.approx(1.0, abs=1e-9)
        bin_mean = float(np.arange(101) @ d.bins)
        assert abs(bin_mean - d.raw_scores.mean()) <= 0.5  # rounding only

    def test_zero_score_script_rejected(self, small_world):
        course = make_course([{0}], kp_count=1, full_score=0.0)
        with pytest.raises(ValueError):
            assess.scores_from_mastery(np.ones((2, 1)), assess.ExamScript((0,)), course)


class TestDifficulty:
    def test_all_at_70(self):
        assert assess.difficulty(dist_from([70.0] * 10)) == pytest.approx(0.7)

    def test_all_at_100(self):
        assert assess.difficulty(dist_from([100.0] * 3)) == 1.0

    def test_mean_of_50_and_90(self):
        assert assess.difficulty(dist_from([50.0, 90.0])) == pytest.approx(0.7)

    def test_reorder_invariant(self, rng):
        scores = rng.uniform(0, 100, size=30)
        shuffled = rng.permutation(scores)
        assert assess.difficulty(dist_from(scores)) == pytest.approx(
            assess.difficulty(dist_from(shuffled))
        )


class TestDistinguishability:
    def test_equal_scores_give_zero(self):
        assert assess.distinguishability(dist_from([55.0] * 8)) == 0.0

    def test_ten_students_deciles(self):
        scores = [10.0 * i for i in range(1, 11)]
        # t = floor(0.27 * 10) = 2; top (100+90)/2=95, bottom (10+20)/2=15
        assert assess.distinguishability(dist_from(scores)) == pytest.approx(0.80)

    def test_uniform_scores_order_statistics(self):
        # top 27% of U[0,100] has mean 86.5, bottom 27% has mean 13.5:
        # the gap is 73 points
        rng = np.random.default_rng(123)
        scores = rng.uniform(0, 100, size=10000)
        value = assess.distinguishability(dist_from(scores))
        assert value == pytest.approx(0.73, abs=0.01)

    def test_single_student_rejected(self):
        with pytest.raises(ValueError):
            assess.distinguishability(dist_from([50.0]))

    def test_reorder_invariant(self, rng):
        scores = rng.uniform(0, 100, size=50)
        shuffled = rng.permutation(scores)
        assert assess.distinguishability(dist_from(scores)) == pytest.approx(
            assess.distinguishability(dist_from(shuffled))
        )


class TestValidity:
    def test_whole_bank_is_perfectly_valid(self):
        course = make_course([{0, 1}, {1}, {2}], kp_count=3)
        script = assess.ExamScript((0, 1, 2))
        assert assess.validity(script, course) == pytest.approx(1.0)

    def test_proportional_coverage_is_perfect(self):
        # bank frequencies (2, 1); a half-size script with the same ratio
        course = make_course([{0}, {0}, {1}, {0}, {0}, {1}], kp_count=2)
        script = assess.ExamScript((0, 1, 2))  # covers KP0 twice, KP1 once
        assert assess.validity(script, course) == pytest.approx(1.0)

    def test_hand_cosine(self):
        # frequencies (4, 1); script covering only KP0 once
        course = make_course([{0}, {0}, {0}, {0, 1}], kp_count=2)
        assert np.allclose(course.kp_weights, [4.0, 1.0])
        script = assess.ExamScript((0,))
        assert assess.validity(script, course) == pytest.approx(4 / math.sqrt(17))

    def test_scale_invariance(self, rng):
        course = make_course([{0}, {0}, {1}, {2}], kp_count=3)
        script = assess.ExamScript((0, 2))
        base = assess.validity(script, course)
        scaled = make_course([{0}, {0}, {1}, {2}] * 3, kp_count=3)  # weights x3
        assert assess.validity(assess.ExamScript((0, 2)), scaled) == pytest.approx(base)


class TestRationality:
    def test_perfect_match_is_one(self):
        target = assess.TargetDistribution.build()
        d = assess.ScoreDistribution(raw_scores=np.array([70.0]), bins=target.bins.copy())
        assert assess.rationality(d, target) == pytest.approx(1.0, abs=1e-12)
        assert assess.rationality(d, target, eps=0.0) == 1.0

    def test_point_mass_against_direct_sum(self):
        target = assess.TargetDistribution.build()
        d = dist_from([70.0])
        # direct epsilon-smoothed summation oracle
        eps = 1e-9
        p = (d.bins + eps) / (d.bins + eps).sum()
        q = (target.bins + eps) / (target.bins + eps).sum()
        expected = 1.0 - sum(
            pi * math.log(pi / qi) for pi, qi in zip(p, q) if pi > 0
        )
        value = assess.rationality(d, target)
        assert value == pytest.approx(expected, abs=1e-9)
        assert value < 1.0

    def test_kl_is_asymmetric(self):
        target = assess.TargetDistribution.build()
        d = dist_from([60.0, 65.0, 70.0, 75.0, 80.0])
        forward = assess.kl_divergence(d.bins, target.bins)
        backward = assess.kl_divergence(target.bins, d.bins)
        assert forward != pytest.approx(backward)

    def test_not_one_when_bins_differ(self):
        target = assess.TargetDistribution.build()
        d = dist_from([10.0, 90.0])
        assert assess.rationality(d, target, eps=0.0) < 1.0


class TestQualityBand:
    @pytest.mark.parametrize("value,band", [
        (0.40, assess.BAND_EXCELLENT),
        (0.39, assess.BAND_QUALIFIED),
        (0.30, assess.BAND_QUALIFIED),
        (0.29, assess.BAND_PASSABLE),
        (0.20, assess.BAND_PASSABLE),
        (0.19, assess.BAND_DISCARD),
    ])
    def test_boundary_probes(self, value, band):
        assert assess.quality_band(value) == band


class TestSolveSigma:
    def test_exact_solver_against_closed_form(self):
        z = norm.ppf(0.73)
        oracle = 39.0 * 0.27 / (2.0 * norm.pdf(z))
        _, sigma_exact = assess.solve_sigma(70.0, 0.39)
        assert sigma_exact == pytest.approx(oracle, rel=1e-12)
        assert 15.5 <= sigma_exact <= 16.5

    def test_zero_target(self):
        _, sigma_exact = assess.solve_sigma(70.0, 0.0)
        assert sigma_exact == 0.0

    def test_bound_solver_satisfies_its_equation(self):
        sigma_bound, _ = assess.solve_sigma(70.0, 0.39)
        alpha = 70.0 - 1.103063 * sigma_bound
        value = sigma_bound**2 * norm.pdf(alpha, 70.0, sigma_bound) / norm.cdf(
            alpha, 70.0, sigma_bound
        )
        assert value == pytest.approx(39.0, abs=1e-6)

    def test_solvers_disagree_with_each_other(self):
        # the bound-form equation and the exact tail-mean identity give
        # different sigmas; both are reported side by side
        sigma_bound, sigma_exact = assess.solve_sigma(70.0, 0.39)
        assert abs(sigma_bound - sigma_exact) > 1.0

    def test_mu_out_of_range(self):
        with pytest.raises(ValueError):
            assess.solve_sigma(0.0, 0.39)


class TestVerifySigmaMonteCarlo:
    def test_degenerate_sigma(self):
        assert assess.verify_sigma_montecarlo(70.0, 0.0, 1000, 0) == 0.0

    def test_reference_band_at_sigma_15(self):
        value = assess.verify_sigma_montecarlo(70.0, 15.0, 100_000, 7)
        assert 0.33 <= value <= 0.40

    def test_sigma_16_exceeds_sigma_15(self):
        v15 = assess.verify_sigma_montecarlo(70.0, 15.0, 100_000, 7)
        v16 = assess.verify_sigma_montecarlo(70.0, 16.0, 100_000, 7)
        assert v16 > v15

    def test_monotone_in_sigma(self):
        values = [
            assess.verify_sigma_montecarlo(70.0, s, 50_000, 3) for s in (5, 10, 15, 20)
        ]
        assert values == sorted(values)

    def test_sample_floor(self):
        with pytest.raises(ValueError):
            assess.verify_sigma_montecarlo(70.0, 15.0, 10, 0)


@given(
    st.lists(st.floats(min_value=0, max_value=100, allow_nan=False), min_size=2, max_size=60)
)
@settings(max_examples=50, deadline=None)
def test_distinguishability_matches_sort_oracle(scores):
    value = assess.distinguishability(dist_from(scores))
    srt = sorted(scores)
    t = max(1, math.floor(0.27 * len(scores)))
    oracle = (sum(srt[-t:]) / t - sum(srt[:t]) / t) / 100.0
    assert value == pytest.approx(oracle, abs=1e-12)
    assert 0.0 <= value <= 1.0


@given(st.integers(min_value=0, max_value=2**31 - 1))
@settings(max_examples=10, deadline=None)
def test_target_distribution_normalized(seed):
    rng = np.random.default_rng(seed)
    mu = rng.uniform(20, 90)
    sigma = rng.uniform(1, 40)
    target = assess.TargetDistribution.build(mu, sigma)
    assert target.bins.sum() == pytest.approx(1.0, abs=1e-9)
    assert (target.bins >= 0).all()
