"""Genetic-algorithm script assembly baseline.

An individual is a fixed-size question set; evolution optimizes a
weighted sum of closeness-to-target difficulty and KP-coverage validity.
Fitness is computed vectorized over the whole population; one elite
survives each generation unchanged, so best-so-far fitness never drops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from examgen.assess import ExamScript
from examgen.data import ClassRoster, Course
from examgen.dkt import DktModel, mastery_matrix
from examgen.seeding import sample_script_rsf


@dataclass
class GaConfig:
    crossover_rate: float = 0.8
    mutation_rate: float = 0.003
    population: int = 1000
    generations: int = 30
    difficulty_weight: float = 0.5
    validity_weight: float = 0.5
    target_difficulty: float = 0.7

    def __post_init__(self):
        if not (0.0 <= self.crossover_rate <= 1.0 and 0.0 <= self.mutation_rate <= 1.0):
            raise ValueError("rates must be in [0, 1]")
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")


class _Fitness:
    """Vectorized fitness over a population of position arrays."""

    def __init__(self, course: Course, mastery: np.ndarray, config: GaConfig):
        self.config = config
        q_count = len(course.qub)
        self.q_mean = np.zeros(q_count)  # class-mean expected score per question
        self.full = np.array([q.full_score for q in course.qub])
        self.kp_rows = np.zeros((q_count, course.kp_count))
        for pos, q in enumerate(course.qub):
            for k, v in q.kp_scores.items():
                self.q_mean[pos] += mastery[:, k].mean() * v
            for k in q.kps:
                self.kp_rows[pos, k] = 1.0
        w = course.kp_weights
        self.w_unit = w / np.linalg.norm(w)

    def __call__(self, population: np.ndarray) -> np.ndarray:
        difficulty = self.q_mean[population].sum(axis=1) / self.full[population].sum(axis=1)
        freq = self.kp_rows[population].sum(axis=1)
        norms = np.linalg.norm(freq, axis=1)
        validity = (freq @ self.w_unit) / np.where(norms == 0, 1.0, norms)
        return (
            -self.config.difficulty_weight
            * np.abs(difficulty - self.config.target_difficulty)
            + self.config.validity_weight * validity
        )


def _repair(genes: np.ndarray, pool: np.ndarray, n: int, q_count: int,
            rng: np.random.Generator) -> np.ndarray:
    """Dedupe and refill to n distinct positions, first from the parents'
    union then from the bank."""
    seen: set[int] = set()
    child = [g for g in genes if g not in seen and not seen.add(g)]
    if len(child) < n:
        extras = [p for p in pool if p not in seen]
        rng.shuffle(extras)
        for p in extras:
            child.append(p)
            seen.add(p)
            if len(child) == n:
                break
    while len(child) < n:
        p = int(rng.integers(q_count))
        if p not in seen:
            child.append(p)
            seen.add(p)
    return np.array(child[:n])


def ga_generate(
    course: Course,
    roster: ClassRoster,
    model: DktModel,
    n: int,
    config: GaConfig,
    seed: int,
    mastery: np.ndarray | None = None,
) -> ExamScript:
    """Evolve a script of n questions for the class; returns the best
    individual ever seen."""
    if mastery is None:
        mastery = mastery_matrix(roster, model, course)
    rng = np.random.default_rng(seed)
    fitness = _Fitness(course, mastery, config)
    q_count = len(course.qub)

    population = np.empty((config.population, n), dtype=int)
    for i in range(config.population):
        script = sample_script_rsf(course, n, rng)
        population[i] = [course.q_index[qid] for qid in script.questions]

    scores = fitness(population)
    best_idx = int(scores.argmax())
    best = population[best_idx].copy()
    best_score = float(scores[best_idx])

    for _ in range(config.generations):
        next_pop = np.empty_like(population)
        next_pop[0] = best  # elitism of 1
        for i in range(1, config.population):
            # tournament selection, size 2
            a, b = rng.integers(config.population, size=2)
            parent_a = population[a if scores[a] >= scores[b] else b]
            a, b = rng.integers(config.population, size=2)
            parent_b = population[a if scores[a] >= scores[b] else b]
            if rng.random() < config.crossover_rate:
                mask = rng.random(n) < 0.5
                genes = np.where(mask, parent_a, parent_b)
            else:
                genes = parent_a.copy()
            child = _repair(genes, np.concatenate([parent_a, parent_b]), n, q_count, rng)
            mutate = rng.random(n) < config.mutation_rate
            if mutate.any():
                members = set(child.tolist())
                for g in np.flatnonzero(mutate):
                    replacement = int(rng.integers(q_count))
                    if replacement not in members:
                        members.discard(int(child[g]))
                        child[g] = replacement
                        members.add(replacement)
            next_pop[i] = child
        population = next_pop
        scores = fitness(population)
        gen_best = int(scores.argmax())
        if float(scores[gen_best]) > best_score:
            best_score = float(scores[gen_best])
            best = population[gen_best].copy()

    return ExamScript(tuple(int(course.qub[p].id) for p in best))
