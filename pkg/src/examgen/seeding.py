"""Class conditions and training-data seeding.

A condition summarizes a class as 2|K| values: for each knowledge point,
the mean and the population standard deviation of the students' predicted
mastery. Training instances pair a condition with the indicator vector of
a sampled script that survived the rationality filter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from examgen import assess
from examgen.data import ClassRoster, Course
from examgen.dkt import DktModel, mastery_matrix


@dataclass(frozen=True)
class Condition:
    """Interleaved (mean, std) pairs per KP; length 2|K|."""

    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 1 or self.values.size % 2 != 0:
            raise ValueError("condition must be a flat vector of length 2|K|")

    @property
    def means(self) -> np.ndarray:
        return self.values[0::2]

    @property
    def stds(self) -> np.ndarray:
        return self.values[1::2]


@dataclass(frozen=True)
class TrainingInstance:
    condition: Condition
    v_e: np.ndarray  # binary, length |QuB|

    @property
    def question_positions(self) -> np.ndarray:
        return np.flatnonzero(self.v_e)


def build_condition(roster: ClassRoster, model: DktModel, course: Course) -> Condition:
    """Per-KP mean and population std of the class mastery matrix."""
    mastery = mastery_matrix(roster, model, course)
    return Condition(_condition_values(mastery))


def _condition_values(mastery: np.ndarray) -> np.ndarray:
    values = np.empty(2 * mastery.shape[1])
    values[0::2] = mastery.mean(axis=0)
    values[1::2] = mastery.std(axis=0)  # population std: the class is the population
    return values


def sample_script_rsf(
    course: Course, n: int, seed: int | np.random.Generator
) -> assess.ExamScript:
    """Draw a script by frequency-weighted KP sampling.

    Each of the n slots draws a KP with probability proportional to its
    bank frequency (with replacement across draws), then picks uniformly
    one covering question not already chosen. Exhausted KPs are redrawn;
    a bounded retry budget guards against unfillable banks.
    """
    if n < 1 or n > len(course.qub):
        raise ValueError(f"script size {n} out of range for bank of {len(course.qub)}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights = course.kp_weights
    total = weights.sum()
    if total <= 0:
        raise ValueError("question bank covers no knowledge points")
    probs = weights / total

    by_kp: dict[int, list[int]] = {}
    for pos, q in enumerate(course.qub):
        for k in q.kps:
            by_kp.setdefault(k, []).append(pos)

    chosen: list[int] = []
    taken: set[int] = set()
    budget = max(1000, 200 * n)
    while len(chosen) < n:
        if budget <= 0:
            raise RuntimeError(f"could not assemble {n} questions after retry budget")
        budget -= 1
        k = int(rng.choice(course.kp_count, p=probs))
        available = [pos for pos in by_kp.get(k, []) if pos not in taken]
        if not available:
            continue
        pos = available[int(rng.integers(len(available)))]
        taken.add(pos)
        chosen.append(pos)
    return assess.ExamScript(tuple(course.qub[pos].id for pos in chosen))


def vectorize_script(script: assess.ExamScript, course: Course) -> np.ndarray:
    """Indicator vector over the bank: ones at member positions."""
    v = np.zeros(len(course.qub))
    for qid in script.questions:
        v[course.q_index[qid]] = 1.0
    return v


def make_training_data(
    roster: ClassRoster,
    model: DktModel,
    course: Course,
    n: int,
    m: int = 1000,
    keep_fraction: float = 0.01,
    seed: int = 0,
    target: assess.TargetDistribution | None = None,
) -> list[TrainingInstance]:
    """Sample m candidate scripts, keep the top keep_fraction by
    rationality, and pair each survivor with the class condition.

    Returns ceil(m * keep_fraction) instances, best rationality first.
    """
    if m * keep_fraction < 1:
        raise ValueError("m * keep_fraction must be >= 1")
    target = target or assess.TargetDistribution.build()
    mastery = mastery_matrix(roster, model, course)
    condition = Condition(_condition_values(mastery))

    # Per-candidate child seeds keep sampling deterministic however the
    # scoring is parallelized.
    children = np.random.SeedSequence(seed).spawn(m)
    scored = []
    for idx, child in enumerate(children):
        script = sample_script_rsf(course, n, np.random.default_rng(child))
        dist = assess.ScoreDistribution.from_scores(
            assess.scores_from_mastery(mastery, script, course)
        )
        scored.append((assess.rationality(dist, target), idx, script))
    scored.sort(key=lambda item: (-item[0], item[1]))

    keep = int(np.ceil(m * keep_fraction))
    return [
        TrainingInstance(condition, vectorize_script(script, course))
        for _, _, script in scored[:keep]
    ]


def save_training_data(
    instances: list[tuple[int, TrainingInstance]] | list[TrainingInstance],
    course: Course,
    path: str | Path,
) -> None:
    """Write instances as JSON lines with a self-describing header.

    Accepts either plain instances or (class_id, instance) pairs.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            json.dumps({"qub_size": len(course.qub), "kp_count": course.kp_count}) + "\n"
        )
        for item in instances:
            class_id, inst = item if isinstance(item, tuple) else (None, item)
            row = {
                "condition": inst.condition.values.tolist(),
                "questions": [int(course.qub[p].id) for p in inst.question_positions],
            }
            if class_id is not None:
                row["class"] = class_id
            fh.write(json.dumps(row) + "\n")


def load_training_data(path: str | Path, course: Course) -> list[TrainingInstance]:
    instances = []
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("qub_size") != len(course.qub):
            raise ValueError(
                f"{path}: instances were built for a bank of {header.get('qub_size')} "
                f"questions, course has {len(course.qub)}"
            )
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            condition = Condition(np.array(row["condition"], dtype=float))
            script = assess.ExamScript(tuple(row["questions"]))
            instances.append(TrainingInstance(condition, vectorize_script(script, course)))
    return instances
