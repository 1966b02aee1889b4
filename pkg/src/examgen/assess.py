"""Script quality assessment: expected-score estimation, class score
distributions on the 0-100 scale, the four quality metrics, the target
score distribution, and the sigma solvers behind its default spread.

Metric conventions: difficulty is the class mean score / 100 (0.7 is
desirable); distinguishability is (mean of top 27% - mean of bottom
27%) / 100 and is graded by quality_band; validity is the cosine
similarity between the script's KP-frequency vector and the bank's;
rationality is 1 - KL(class distribution || target) over 101 integer
score bins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from examgen.data import ClassRoster, Course, Question

SCORE_BINS = 101  # integer scores 0..100

BAND_EXCELLENT = "Excellent"
BAND_QUALIFIED = "Qualified"
BAND_PASSABLE = "Passable"
BAND_DISCARD = "Discard"


@dataclass(frozen=True)
class ExamScript:
    """A fixed-size subset of the question bank, stored as sorted ids."""

    questions: tuple[int, ...]

    def __post_init__(self):
        if len(set(self.questions)) != len(self.questions):
            raise ValueError("duplicate question ids in script")
        object.__setattr__(self, "questions", tuple(sorted(self.questions)))

    @property
    def n(self) -> int:
        return len(self.questions)


@dataclass(frozen=True)
class ScoreDistribution:
    """Per-student scores on the 0-100 scale plus their 101-bin histogram."""

    raw_scores: np.ndarray
    bins: np.ndarray

    @classmethod
    def from_scores(cls, scores) -> "ScoreDistribution":
        scores = np.asarray(scores, dtype=float)
        if scores.size == 0:
            raise ValueError("empty score list")
        if scores.min() < -1e-9 or scores.max() > 100 + 1e-9:
            raise ValueError("scores must lie in [0, 100]")
        idx = np.clip(np.rint(scores).astype(int), 0, 100)
        bins = np.bincount(idx, minlength=SCORE_BINS) / scores.size
        return cls(raw_scores=scores, bins=bins)


@dataclass(frozen=True)
class TargetDistribution:
    """Truncated normal on the 101 integer score bins, renormalized."""

    mu: float
    sigma: float
    bins: np.ndarray

    @classmethod
    def build(cls, mu: float = 70.0, sigma: float = 15.0) -> "TargetDistribution":
        centers = np.arange(SCORE_BINS, dtype=float)
        if sigma <= 0:
            bins = np.zeros(SCORE_BINS)
            bins[int(round(mu))] = 1.0
        else:
            upper = norm.cdf((centers + 0.5 - mu) / sigma)
            lower = norm.cdf((centers - 0.5 - mu) / sigma)
            bins = upper - lower
            bins /= bins.sum()
        return cls(mu=mu, sigma=sigma, bins=bins)


@dataclass(frozen=True)
class QualityReport:
    difficulty: float
    distinguishability: float
    validity: float
    rationality: float
    band: str
    bins: np.ndarray

    def as_dict(self) -> dict:
        return {
            "difficulty": self.difficulty,
            "distinguishability": self.distinguishability,
            "validity": self.validity,
            "rationality": self.rationality,
            "band": self.band,
            "bins": self.bins.tolist(),
        }


def question_score(mastery: np.ndarray, q: Question) -> float:
    """Expected score on one question: sum over covered KPs of
    mastery[k] * score share of k."""
    return float(sum(mastery[k] * v for k, v in q.kp_scores.items()))


def script_score(mastery: np.ndarray, script: ExamScript, course: Course) -> float:
    return float(sum(question_score(mastery, course.question(qid)) for qid in script.questions))


def script_full_score(script: ExamScript, course: Course) -> float:
    return float(sum(course.question(qid).full_score for qid in script.questions))


def scores_from_mastery(
    mastery: np.ndarray, script: ExamScript, course: Course
) -> np.ndarray:
    """Per-student expected scores rescaled to 0-100; mastery is (S, K)."""
    full = script_full_score(script, course)
    if full <= 0:
        raise ValueError("script has zero total score")
    totals = np.zeros(mastery.shape[0])
    for qid in script.questions:
        q = course.question(qid)
        for k, v in q.kp_scores.items():
            totals += mastery[:, k] * v
    return totals / full * 100.0


def class_score_distribution(
    roster: ClassRoster,
    model,
    script: ExamScript,
    course: Course,
    mastery: np.ndarray | None = None,
) -> ScoreDistribution:
    """Expected-score distribution of a class on a script. A precomputed
    mastery matrix may be passed to skip the per-student model passes."""
    if mastery is None:
        from examgen.dkt import mastery_matrix

        mastery = mastery_matrix(roster, model, course)
    return ScoreDistribution.from_scores(scores_from_mastery(mastery, script, course))


def difficulty(dist: ScoreDistribution) -> float:
    return float(dist.raw_scores.mean() / 100.0)


def _tail_size(n: int) -> int:
    return max(1, math.floor(0.27 * n))


def distinguishability(dist: ScoreDistribution) -> float:
    """(mean of the top 27% scores - mean of the bottom 27%) / 100."""
    scores = np.sort(dist.raw_scores)
    if scores.size < 2:
        raise ValueError("distinguishability needs at least 2 students")
    t = _tail_size(scores.size)
    return float((scores[-t:].mean() - scores[:t].mean()) / 100.0)


def script_kp_frequencies(script: ExamScript, course: Course) -> np.ndarray:
    freq = np.zeros(course.kp_count)
    for qid in script.questions:
        for k in course.question(qid).kps:
            freq[k] += 1.0
    return freq


def validity(script: ExamScript, course: Course) -> float:
    """Cosine similarity between script and bank KP-frequency vectors."""
    if not script.questions:
        raise ValueError("validity of an empty script is undefined")
    e_p = script_kp_frequencies(script, course)
    c_p = course.kp_weights
    denom = float(np.linalg.norm(e_p) * np.linalg.norm(c_p))
    if denom == 0.0:
        raise ValueError("zero KP-frequency vector")
    return float(e_p @ c_p / denom)


def kl_divergence(p: np.ndarray, q: np.ndarray, eps: float = 1e-9) -> float:
    """KL(p || q) over aligned bins with epsilon smoothing then
    renormalization; eps=0 computes the unsmoothed divergence."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if eps > 0.0:
        p = (p + eps) / (p + eps).sum()
        q = (q + eps) / (q + eps).sum()
    mask = p > 0.0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def rationality(
    dist: ScoreDistribution, target: TargetDistribution, eps: float = 1e-9
) -> float:
    """1 - KL(class bins || target bins); 1 exactly when they agree."""
    return 1.0 - kl_divergence(dist.bins, target.bins, eps=eps)


def quality_band(dis_value: float) -> str:
    if dis_value > 0.39:
        return BAND_EXCELLENT
    if dis_value >= 0.30:
        return BAND_QUALIFIED
    if dis_value >= 0.20:
        return BAND_PASSABLE
    return BAND_DISCARD


def quality_report(
    script: ExamScript,
    course: Course,
    roster: ClassRoster,
    model,
    target: TargetDistribution,
    mastery: np.ndarray | None = None,
) -> QualityReport:
    """All four metrics of one script for one class."""
    dist = class_score_distribution(roster, model, script, course, mastery=mastery)
    dis = distinguishability(dist)
    return QualityReport(
        difficulty=difficulty(dist),
        distinguishability=dis,
        validity=validity(script, course),
        rationality=rationality(dist, target),
        band=quality_band(dis),
        bins=dist.bins,
    )


# The bound-form solver follows the tail-mass inequality as stated, with
# its magic quantile constant; the exact solver uses the untruncated
# conditional-tail-mean identity. They disagree; solve_sigma reports both.
_BOUND_QUANTILE = 1.103063
_TAIL_Z = norm.ppf(0.73)


def solve_sigma(mu: float, target_dis: float) -> tuple[float, float]:
    """Solve for the score-distribution sigma giving a wanted
    distinguishability (on the /100 scale) at the given mean.

    Returns (sigma_bound, sigma_exact): sigma_bound solves
    sigma^2 * f(alpha)/F(alpha) = target*100 with alpha = mu - 1.103063*sigma
    by bisection; sigma_exact solves 2*sigma*phi(z)/0.27 = target*100 with
    z the 73% standard-normal quantile, in closed form.
    """
    if not 0.0 < mu < 100.0:
        raise ValueError("mu must be in (0, 100)")
    if target_dis < 0.0:
        raise ValueError("target distinguishability must be >= 0")
    dis_points = target_dis * 100.0

    sigma_exact = dis_points * 0.27 / (2.0 * norm.pdf(_TAIL_Z))
    if target_dis == 0.0:
        return 0.0, sigma_exact

    def bound_gap(sigma: float) -> float:
        alpha = mu - _BOUND_QUANTILE * sigma
        f = norm.pdf(alpha, loc=mu, scale=sigma)
        F = norm.cdf(alpha, loc=mu, scale=sigma)
        return sigma * sigma * f / F - dis_points

    lo, hi = 1e-9, 1e4
    if bound_gap(lo) * bound_gap(hi) > 0:
        raise ValueError("no sign change in bisection bracket")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if bound_gap(lo) * bound_gap(mid) <= 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi), sigma_exact


def verify_sigma_montecarlo(
    mu: float, sigma: float, samples: int, seed: int
) -> float:
    """Empirical distinguishability of scores drawn from the normal
    (mu, sigma) truncated to [0, 100], via inverse-CDF sampling."""
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    if sigma <= 0.0:
        return 0.0
    rng = np.random.default_rng(seed)
    lo = norm.cdf((0.0 - mu) / sigma)
    hi = norm.cdf((100.0 - mu) / sigma)
    u = rng.uniform(lo, hi, size=samples)
    scores = np.sort(mu + sigma * norm.ppf(u))
    t = _tail_size(samples)
    return float((scores[-t:].mean() - scores[:t].mean()) / 100.0)
