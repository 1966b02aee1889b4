"""Domain model and data plumbing: question/exercise banks, exercise
records, class formation, and a synthetic cohort generator.

File formats
------------
Question bank: JSON lines, one object per question with fields ``id``,
``kps`` (list of knowledge-point indices), ``full_score`` and optional
``kp_scores`` (map KP -> score). An optional leading header object
``{"kp_count": N}`` pins the knowledge-point count; otherwise it is
inferred. The exercise bank is analogous without score fields.

Records: CSV with header ``student_id,exercise_id,correct,timestamp``;
``correct`` is 0/1 and ``timestamp`` is an integer ordering key.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


class BankFormatError(ValueError):
    """Raised when a bank file cannot be parsed or violates invariants."""


class RecordsFormatError(ValueError):
    """Raised when a records CSV is malformed."""


@dataclass(frozen=True)
class Question:
    id: int
    kps: frozenset[int]
    full_score: float
    kp_scores: dict[int, float]

    def __post_init__(self):
        if not self.kps:
            raise BankFormatError(f"question {self.id} covers no knowledge points")
        if self.full_score < 0:
            raise BankFormatError(f"question {self.id} has negative full_score")
        if set(self.kp_scores) != set(self.kps):
            raise BankFormatError(f"question {self.id}: kp_scores keys must equal kps")
        total = sum(self.kp_scores.values())
        if abs(total - self.full_score) > 1e-9:
            raise BankFormatError(
                f"question {self.id}: kp_scores sum {total} != full_score {self.full_score}"
            )


@dataclass(frozen=True)
class Exercise:
    id: int
    kps: frozenset[int]

    def __post_init__(self):
        if not self.kps:
            raise BankFormatError(f"exercise {self.id} covers no knowledge points")


@dataclass(frozen=True)
class ExerciseRecord:
    student: int
    exercise: int
    correct: bool
    seq: int


@dataclass(frozen=True)
class Course:
    """A course: its question bank, exercise bank and KP weights.

    ``kp_weights[k]`` is the number of questions in the bank covering KP
    ``k``. Script vectors are indexed by position in ``qub``.
    """

    kp_count: int
    qub: tuple[Question, ...]
    exb: tuple[Exercise, ...]
    kp_weights: np.ndarray
    q_index: dict[int, int] = field(repr=False, default_factory=dict)
    e_index: dict[int, int] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        for q in self.qub:
            if max(q.kps) >= self.kp_count:
                raise BankFormatError(f"question {q.id} references KP >= kp_count")
        for e in self.exb:
            if max(e.kps) >= self.kp_count:
                raise BankFormatError(f"exercise {e.id} references KP >= kp_count")
        object.__setattr__(self, "q_index", {q.id: i for i, q in enumerate(self.qub)})
        object.__setattr__(self, "e_index", {e.id: i for i, e in enumerate(self.exb)})
        if len(self.q_index) != len(self.qub):
            raise BankFormatError("duplicate question ids in bank")
        if len(self.e_index) != len(self.exb):
            raise BankFormatError("duplicate exercise ids in bank")

    def question(self, qid: int) -> Question:
        return self.qub[self.q_index[qid]]

    def exercise(self, eid: int) -> Exercise:
        return self.exb[self.e_index[eid]]


@dataclass(frozen=True)
class ClassRoster:
    """A class of students with their (seq-ordered) exercise histories."""

    students: tuple[int, ...]
    histories: dict[int, list[ExerciseRecord]]

    def __post_init__(self):
        if len(set(self.students)) != len(self.students):
            raise ValueError("duplicate students in roster")
        for s in self.students:
            if not self.histories.get(s):
                raise ValueError(f"student {s} has no records")


def compute_kp_weights(qub: list[Question] | tuple[Question, ...], kp_count: int) -> np.ndarray:
    """Per-KP frequency over the question bank: w[k] = #questions covering k."""
    w = np.zeros(kp_count, dtype=float)
    for q in qub:
        for k in q.kps:
            w[k] += 1.0
    return w


def _allocate_kp_scores(full_score: float, kps: frozenset[int]) -> dict[int, float]:
    # Uniform split across covered KPs; explicit per-KP scores override this.
    share = full_score / len(kps)
    return {k: share for k in sorted(kps)}


def _read_jsonl(path: Path) -> list[tuple[int, dict]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BankFormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            rows.append((lineno, obj))
    return rows


def load_question_bank(path: str | Path, exercise_path: str | Path | None = None) -> Course:
    """Load a question bank (and optionally an exercise bank) into a Course.

    Missing ``kp_scores`` are allocated uniformly over the question's KPs.
    Without an exercise bank, each question doubles as an exercise with the
    same id and KP coverage.
    """
    path = Path(path)
    rows = _read_jsonl(path)
    kp_count = None
    questions: list[Question] = []
    for lineno, obj in rows:
        if "id" not in obj and "kp_count" in obj:
            kp_count = int(obj["kp_count"])
            continue
        try:
            qid = int(obj["id"])
            kps = frozenset(int(k) for k in obj["kps"])
            full_score = float(obj["full_score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BankFormatError(f"{path}:{lineno}: bad question record: {exc}") from exc
        if full_score < 0:
            raise BankFormatError(f"{path}:{lineno}: negative full_score")
        if "kp_scores" in obj and obj["kp_scores"] is not None:
            kp_scores = {int(k): float(v) for k, v in obj["kp_scores"].items()}
        else:
            kp_scores = _allocate_kp_scores(full_score, kps)
        try:
            questions.append(Question(qid, kps, full_score, kp_scores))
        except BankFormatError as exc:
            raise BankFormatError(f"{path}:{lineno}: {exc}") from exc
    if not questions:
        raise BankFormatError(f"{path}: no questions found")

    exercises: list[Exercise] = []
    if exercise_path is not None:
        for lineno, obj in _read_jsonl(Path(exercise_path)):
            if "id" not in obj and "kp_count" in obj:
                kp_count = max(kp_count or 0, int(obj["kp_count"]))
                continue
            try:
                exercises.append(
                    Exercise(int(obj["id"]), frozenset(int(k) for k in obj["kps"]))
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise BankFormatError(
                    f"{exercise_path}:{lineno}: bad exercise record: {exc}"
                ) from exc
    else:
        exercises = [Exercise(q.id, q.kps) for q in questions]

    max_kp = max(max(q.kps) for q in questions)
    if exercises:
        max_kp = max(max_kp, max(max(e.kps) for e in exercises))
    if kp_count is None:
        kp_count = max_kp + 1
    elif max_kp >= kp_count:
        raise BankFormatError(f"KP index {max_kp} out of range for kp_count {kp_count}")

    return Course(
        kp_count=kp_count,
        qub=tuple(questions),
        exb=tuple(exercises),
        kp_weights=compute_kp_weights(questions, kp_count),
    )


def load_records(path: str | Path, course: Course | None = None) -> list[ExerciseRecord]:
    """Load exercise records, grouped per student and seq-ordered by timestamp.

    Rows referencing exercises missing from the course are skipped; the skip
    count is logged rather than raised, since LMS exports are routinely dirty.
    """
    path = Path(path)
    raw: dict[int, list[tuple[int, int, bool]]] = {}
    skipped = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = {"student_id", "exercise_id", "correct", "timestamp"}
        if reader.fieldnames is None or not expected.issubset(reader.fieldnames):
            raise RecordsFormatError(
                f"{path}: header must contain {sorted(expected)}, got {reader.fieldnames}"
            )
        for lineno, row in enumerate(reader, start=2):
            try:
                student = int(row["student_id"])
                exercise = int(row["exercise_id"])
                correct = {"0": False, "1": True}[row["correct"].strip()]
                timestamp = int(row["timestamp"])
            except (KeyError, TypeError, ValueError) as exc:
                raise RecordsFormatError(f"{path}:{lineno}: malformed row: {exc}") from exc
            if course is not None and exercise not in course.e_index:
                skipped += 1
                continue
            raw.setdefault(student, []).append((timestamp, exercise, correct))
    if skipped:
        logger.warning("%s: skipped %d rows with unknown exercise ids", path, skipped)

    records: list[ExerciseRecord] = []
    for student in sorted(raw):
        rows = sorted(raw[student], key=lambda r: r[0])
        for seq, (_, exercise, correct) in enumerate(rows):
            records.append(ExerciseRecord(student, exercise, correct, seq))
    return records


def group_histories(records: list[ExerciseRecord]) -> dict[int, list[ExerciseRecord]]:
    """Group records per student, ordered by seq."""
    histories: dict[int, list[ExerciseRecord]] = {}
    for rec in records:
        histories.setdefault(rec.student, []).append(rec)
    for recs in histories.values():
        recs.sort(key=lambda r: r.seq)
    return histories


def form_classes(
    histories: dict[int, list[ExerciseRecord]],
    class_size: int,
    count: int,
    seed: int,
) -> list[ClassRoster]:
    """Form ``count`` random classes of ``class_size`` students.

    Sampling is without replacement within a class; students may repeat
    across classes. Deterministic for a fixed seed.
    """
    students = sorted(histories)
    if class_size > len(students):
        raise ValueError(f"class_size {class_size} > student count {len(students)}")
    rng = np.random.default_rng(seed)
    rosters = []
    for _ in range(count):
        chosen = rng.choice(len(students), size=class_size, replace=False)
        members = tuple(students[i] for i in sorted(chosen))
        rosters.append(ClassRoster(members, {s: histories[s] for s in members}))
    return rosters


def synth_cohort(
    kp_count: int,
    qub_size: int,
    exb_size: int,
    student_count: int,
    records_per_student: int,
    seed: int,
    full_score: float = 2.5,
) -> tuple[Course, list[ExerciseRecord], np.ndarray]:
    """Generate a synthetic course, exercise records, and the latent mastery
    map behind them.

    Each student s draws an ability a_s ~ U[0.3, 1.1] and each KP k an
    easiness shift d_k ~ U[-0.35, 0.35]; latent mastery is Beta-distributed
    around clip(a_s + d_k). A record's correctness is Bernoulli with
    probability equal to the mean latent mastery over the exercise's KPs.
    Returns (course, records, mastery) with mastery of shape
    (student_count, kp_count).
    """
    if min(kp_count, qub_size, exb_size, student_count, records_per_student) < 1:
        raise ValueError("all sizes must be >= 1")
    rng = np.random.default_rng(seed)

    # KP popularity drives question coverage, so bank KP frequencies differ.
    kp_popularity = rng.dirichlet(np.full(kp_count, 3.0))

    def draw_kps() -> frozenset[int]:
        size = min(int(rng.integers(1, 4)), kp_count)
        kps = rng.choice(kp_count, size=size, replace=False, p=kp_popularity)
        return frozenset(int(k) for k in kps)

    questions = [
        Question(i, kps := draw_kps(), full_score, _allocate_kp_scores(full_score, kps))
        for i in range(qub_size)
    ]
    exercises = [Exercise(i, draw_kps()) for i in range(exb_size)]

    ability = rng.uniform(0.3, 1.1, size=student_count)
    easiness = rng.uniform(-0.35, 0.35, size=kp_count)
    mean = np.clip(ability[:, None] + easiness[None, :], 0.02, 0.98)
    concentration = 24.0
    mastery = rng.beta(mean * concentration, (1.0 - mean) * concentration)

    exercise_kps = [np.fromiter(e.kps, dtype=int) for e in exercises]
    records: list[ExerciseRecord] = []
    for s in range(student_count):
        drawn = rng.integers(0, exb_size, size=records_per_student)
        p_correct = np.array([mastery[s, exercise_kps[e]].mean() for e in drawn])
        correct = rng.random(records_per_student) < p_correct
        records.extend(
            ExerciseRecord(s, int(e), bool(c), seq)
            for seq, (e, c) in enumerate(zip(drawn, correct))
        )

    course = Course(
        kp_count=kp_count,
        qub=tuple(questions),
        exb=tuple(exercises),
        kp_weights=compute_kp_weights(questions, kp_count),
    )
    return course, records, mastery


def save_question_bank(course: Course, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"kp_count": course.kp_count}) + "\n")
        for q in course.qub:
            fh.write(
                json.dumps(
                    {
                        "id": q.id,
                        "kps": sorted(q.kps),
                        "full_score": q.full_score,
                        "kp_scores": {str(k): v for k, v in sorted(q.kp_scores.items())},
                    }
                )
                + "\n"
            )


def save_exercise_bank(course: Course, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"kp_count": course.kp_count}) + "\n")
        for e in course.exb:
            fh.write(json.dumps({"id": e.id, "kps": sorted(e.kps)}) + "\n")


def save_records(records: list[ExerciseRecord], path: str | Path) -> None:
    """Write records CSV; seq doubles as the timestamp ordering key."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["student_id", "exercise_id", "correct", "timestamp"])
        for rec in records:
            writer.writerow([rec.student, rec.exercise, int(rec.correct), rec.seq])
