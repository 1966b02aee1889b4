import numpy as np
import pytest

from examgen import data, dkt


def make_course(q_kps, kp_count, full_score=2.5, e_kps=None):
    """Tiny course from a list of per-question KP sets (ids = positions)."""
    qub = []
    for i, kps in enumerate(q_kps):
        kps = frozenset(kps)
        share = full_score / len(kps)
        qub.append(data.Question(i, kps, full_score, {k: share for k in kps}))
    exb = [data.Exercise(i, q.kps) for i, q in enumerate(qub)] if e_kps is None else [
        data.Exercise(i, frozenset(kps)) for i, kps in enumerate(e_kps)
    ]
    return data.Course(
        kp_count=kp_count,
        qub=tuple(qub),
        exb=tuple(exb),
        kp_weights=data.compute_kp_weights(qub, kp_count),
    )


@pytest.fixture(scope="session")
def small_world():
    """A small trained world shared by model-dependent tests: synthetic
    course, histories, a briefly trained tracer, and a few classes."""
    course, records, latent = data.synth_cohort(
        kp_count=6, qub_size=40, exb_size=40, student_count=60,
        records_per_student=40, seed=1234,
    )
    histories = data.group_histories(records)
    model = dkt.train_dkt(histories, course, dkt.DktConfig(
        hidden_size=16, epochs=4, learning_rate=0.05, seed=0,
    ))
    rosters = data.form_classes(histories, 10, 6, seed=99)
    return {
        "course": course,
        "records": records,
        "latent": latent,
        "histories": histories,
        "model": model,
        "rosters": rosters,
    }


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
