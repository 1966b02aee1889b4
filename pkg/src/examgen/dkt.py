"""Knowledge tracing: encode exercise histories, train the LSTM tracer,
and read per-student per-KP mastery probabilities from it.

The input at each step is a 2|K| multi-hot vector: the first |K| slots
encode the KPs of a correctly answered exercise, the second |K| slots an
incorrect one. The readout is a sigmoid layer with one output per KP;
training predicts the correctness of step t+1's exercise as the mean
predicted mastery over its KPs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from examgen import neural
from examgen.data import ClassRoster, Course, ExerciseRecord, group_histories


@dataclass
class DktConfig:
    hidden_size: int = 64
    epochs: int = 12
    learning_rate: float = 0.05
    dropout: float = 0.2  # readout-path hidden dropout during training
    grad_clip: float = 5.0
    seed: int = 0


@dataclass
class DktModel:
    cell: neural.LstmCell
    readout: neural.DenseLayer
    kp_count: int
    loss_trace: list[float] = field(default_factory=list)

    def save(self, path: str | Path) -> None:
        neural.save_arrays(
            path,
            {
                "cell_w": self.cell.w,
                "cell_b": self.cell.b,
                "readout_w": self.readout.w,
                "readout_b": self.readout.b,
            },
            meta={"kind": "dkt", "kp_count": self.kp_count, "loss_trace": self.loss_trace},
        )

    @classmethod
    def load(cls, path: str | Path) -> "DktModel":
        arrays, meta = neural.load_arrays(path)
        if meta.get("kind") != "dkt":
            raise ValueError(f"{path}: not a knowledge-tracing checkpoint")
        return cls(
            cell=neural.LstmCell(arrays["cell_w"], arrays["cell_b"]),
            readout=neural.DenseLayer(arrays["readout_w"], arrays["readout_b"], "sigmoid"),
            kp_count=int(meta["kp_count"]),
            loss_trace=list(meta.get("loss_trace", [])),
        )


@dataclass(frozen=True)
class EncodedStep:
    x: np.ndarray
    target_kps: tuple[int, ...]
    target_correct: bool


def encode_history(
    history: list[ExerciseRecord], course: Course
) -> list[EncodedStep]:
    """One step per record; the correct half gets the multi-hot KP slots."""
    K = course.kp_count
    steps = []
    for rec in history:
        kps = sorted(course.exercise(rec.exercise).kps)
        if kps and kps[-1] >= K:
            raise ValueError(f"KP index {kps[-1]} out of range for kp_count {K}")
        x = np.zeros(2 * K)
        offset = 0 if rec.correct else K
        for k in kps:
            x[offset + k] = 1.0
        steps.append(EncodedStep(x, tuple(kps), rec.correct))
    return steps


def _sequence_tensors(
    history: list[ExerciseRecord], course: Course
) -> tuple[np.ndarray, np.ndarray, np.ndarray] | None:
    """Inputs are steps 0..T-2; step t's target is record t+1."""
    if len(history) < 2:
        return None
    steps = encode_history(history, course)
    K = course.kp_count
    T = len(steps) - 1
    inputs = np.ascontiguousarray([s.x for s in steps[:-1]])
    weights = np.zeros((T, K))
    labels = np.zeros(T)
    for t, step in enumerate(steps[1:]):
        weights[t, list(step.target_kps)] = 1.0 / len(step.target_kps)
        labels[t] = float(step.target_correct)
    return inputs, weights, labels


def train_dkt(
    records: list[ExerciseRecord] | dict[int, list[ExerciseRecord]],
    course: Course,
    config: DktConfig | None = None,
) -> DktModel:
    """Train the tracer on all students' histories with per-sequence SGD."""
    config = config or DktConfig()
    histories = records if isinstance(records, dict) else group_histories(records)
    tensors = []
    for student in sorted(histories):
        t = _sequence_tensors(histories[student], course)
        if t is not None:
            tensors.append(t)
    if not tensors:
        raise ValueError("training needs at least one student with >= 2 records")

    rng = np.random.default_rng(config.seed)
    K = course.kp_count
    cell = neural.init_lstm(rng, 2 * K, config.hidden_size)
    readout = neural.init_dense(rng, config.hidden_size, K, "sigmoid")
    model = DktModel(cell, readout, K)

    total_steps = sum(t[0].shape[0] for t in tensors)
    for _ in range(config.epochs):
        epoch_loss = 0.0
        for idx in rng.permutation(len(tensors)):
            inputs, weights, labels = tensors[idx]
            mask = np.ones(inputs.shape[0])
            drop = (
                neural.dropout_mask(rng, (inputs.shape[0], config.hidden_size), config.dropout)
                if config.dropout > 0.0
                else None
            )
            loss, grads = neural.lstm_bptt(
                cell, inputs, readout, weights, labels, mask, hidden_dropout=drop
            )
            neural.clip_global_norm(grads, config.grad_clip)
            neural.sgd_update(
                {"cell_w": cell.w, "cell_b": cell.b, "readout_w": readout.w, "readout_b": readout.b},
                grads,
                config.learning_rate,
            )
            epoch_loss += loss
        model.loss_trace.append(epoch_loss / total_steps)
    return model


def step_outputs(model: DktModel, history: list[ExerciseRecord], course: Course) -> np.ndarray:
    """Per-step mastery readout: row t is the prediction after records 0..t."""
    steps = encode_history(history, course)
    if not steps:
        inputs = np.zeros((1, 2 * model.kp_count))
    else:
        inputs = np.ascontiguousarray([s.x for s in steps])
    H = model.cell.hidden_size
    hs, _, _ = neural.kernels.lstm_seq_forward(
        model.cell.w, model.cell.b, inputs, np.zeros(H), np.zeros(H)
    )
    return 1.0 / (1.0 + np.exp(-(hs @ model.readout.w.T + model.readout.b)))


def predict_mastery(
    model: DktModel, history: list[ExerciseRecord], course: Course
) -> np.ndarray:
    """Mastery vector in (0,1)^|K| after the full history; an empty history
    is one pass with zero state and zero input."""
    return step_outputs(model, history, course)[-1]


def mastery_matrix(roster: ClassRoster, model: DktModel, course: Course) -> np.ndarray:
    """Stack predict_mastery over the roster: shape (|S|, |K|)."""
    return np.array(
        [predict_mastery(model, roster.histories[s], course) for s in roster.students]
    )


def rank_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC with tie handling via midranks."""
    from scipy.stats import rankdata

    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def evaluate_auc(
    model: DktModel,
    heldout: dict[int, list[ExerciseRecord]],
    course: Course,
) -> float:
    """Next-answer AUC over held-out students: each record from index 1 on
    is predicted from the prefix before it."""
    scores: list[float] = []
    labels: list[bool] = []
    for student in sorted(heldout):
        history = heldout[student]
        if len(history) < 2:
            continue
        outputs = step_outputs(model, history, course)
        for t in range(1, len(history)):
            kps = sorted(course.exercise(history[t].exercise).kps)
            scores.append(float(outputs[t - 1, kps].mean()))
            labels.append(history[t].correct)
    if not scores:
        raise ValueError("no held-out predictions could be formed")
    return rank_auc(np.array(scores), np.array(labels))
