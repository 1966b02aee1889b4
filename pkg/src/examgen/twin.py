"""Twin script generation: two generators sharing one discriminator,
trained to keep both scripts high quality while forcing their question
sets apart.

The separation signal is the cross entropy H between the two generators'
normalized output vectors, steered toward a target level psi by
minimizing |psi - H|. Because psi is awkward to pick directly, training
stops the separation phase on an overlap test instead: the shared-question
ratio |A intersect B| / |A union B| of the extracted top-n scripts must
drop below a threshold (0.3 by default).

Two schedules are provided: quality-priority (retrain quality every
round, one separation nudge per round, alternating generators) and
difference-priority (separate until the overlap test passes, then a
single quality update per round).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from examgen import neural
from examgen.assess import (
    ExamScript,
    QualityReport,
    TargetDistribution,
    quality_report,
)
from examgen.data import Course
from examgen.gan import (
    Discriminator,
    GanConfig,
    Generator,
    _GenPass,
    discriminator_step,
    generator_step,
    top_n_positions,
    train_examgan,
)
from examgen.seeding import Condition, TrainingInstance

_EPS = 1e-9


@dataclass
class TwinConfig(GanConfig):
    psi: float | None = None  # None: calibrated from the initial generator
    psi_factor: float = 1.5  # calibration multiple of the initial entropy
    lambda_weight: float = 0.001
    gamma: int = 50
    overlap_threshold: float = 0.3
    script_size: int = 40  # n used by the overlap test during training
    init_epochs: int = 200  # per-generator adversarial pre-training
    round_epochs: int = 2  # quality epochs per round (quality-priority)
    diff_step_cap: int = 200  # separation steps per round (difference-priority)
    probe_pass_fraction: float = 0.9  # fraction of probe pairs that must pass
    probe_conditions: int = 20
    probe_draws: int = 2  # noise draws per probe condition

    def __post_init__(self):
        super().__post_init__()
        if not 0.0 < self.overlap_threshold < 1.0:
            raise ValueError("overlap_threshold must be in (0, 1)")
        if self.gamma < 0 or self.init_epochs < 0:
            raise ValueError("gamma and init_epochs must be >= 0")


@dataclass
class TwinModel:
    gen_a: Generator
    gen_b: Generator
    disc: Discriminator
    psi: float
    lambda_weight: float
    gamma: int
    overlap_threshold: float = 0.3

    def save(self, path: str | Path) -> None:
        arrays = {
            **self.gen_a.arrays("gen_a"),
            **self.gen_b.arrays("gen_b"),
            **self.disc.arrays("disc"),
        }
        neural.save_arrays(
            path,
            arrays,
            meta={
                "kind": "twin",
                "noise_dim": self.gen_a.noise_dim,
                "psi": self.psi,
                "lambda_weight": self.lambda_weight,
                "gamma": self.gamma,
                "overlap_threshold": self.overlap_threshold,
            },
        )

    @classmethod
    def load(cls, path: str | Path) -> "TwinModel":
        arrays, meta = neural.load_arrays(path)
        if meta.get("kind") != "twin":
            raise ValueError(f"{path}: not a twin checkpoint")
        noise_dim = int(meta["noise_dim"])
        return cls(
            gen_a=Generator.from_arrays(arrays, noise_dim, "gen_a"),
            gen_b=Generator.from_arrays(arrays, noise_dim, "gen_b"),
            disc=Discriminator.from_arrays(arrays, "disc"),
            psi=float(meta["psi"]),
            lambda_weight=float(meta["lambda_weight"]),
            gamma=int(meta["gamma"]),
            overlap_threshold=float(meta["overlap_threshold"]),
        )


@dataclass(frozen=True)
class ScriptPair:
    e_a: ExamScript
    e_b: ExamScript
    jaccard_distance: float
    reports: tuple[QualityReport, QualityReport] | None = None

    @property
    def shared_ratio(self) -> float:
        return 1.0 - self.jaccard_distance


def jaccard_distance(e_a: ExamScript, e_b: ExamScript) -> float:
    """(|union| - |intersection|) / |union|: 0 for equal sets, 1 for
    disjoint ones."""
    a, b = set(e_a.questions), set(e_b.questions)
    union = len(a | b)
    if union == 0:
        raise ValueError("both scripts are empty")
    return (union - len(a & b)) / union


def _normalize(v: np.ndarray, eps: float = _EPS) -> np.ndarray:
    v = np.asarray(v, dtype=float) + eps
    return v / v.sum(axis=-1, keepdims=True)


def cross_entropy_h(v_a: np.ndarray, v_b: np.ndarray, eps: float = _EPS) -> float:
    """H(a, b) = -sum a_i log b_i after normalizing both vectors to
    distributions with an epsilon floor."""
    a = _normalize(v_a, eps)
    b = _normalize(v_b, eps)
    return float(-(a * np.log(b)).sum(axis=-1).mean())


def twin_loss(v_a: np.ndarray, v_b: np.ndarray, psi: float) -> float:
    """Absolute deviation of the pair cross entropy from the target psi."""
    return abs(psi - cross_entropy_h(v_a, v_b))


def overlap_stop_check(e_a: ExamScript, e_b: ExamScript, threshold: float) -> bool:
    """True when the shared-question ratio is at or below the threshold."""
    a, b = set(e_a.questions), set(e_b.questions)
    return len(a & b) / len(a | b) <= threshold


def difference_update(
    update_gen: Generator,
    fixed_gen: Generator,
    update_is_a: bool,
    conditions: np.ndarray,
    psi: float,
    lambda_weight: float,
    rng: np.random.Generator,
    grad_clip: float = 5.0,
) -> float:
    """One descent step on |psi - H| through one generator, the other
    held constant. Returns the loss before the step."""
    z = rng.standard_normal((conditions.shape[0], update_gen.noise_dim))
    upd = _GenPass(update_gen, z, conditions)
    fixed_out = _GenPass(fixed_gen, z, conditions).out
    va, vb = (upd.out, fixed_out) if update_is_a else (fixed_out, upd.out)

    a = _normalize(va)
    b = _normalize(vb)
    h_rows = -(a * np.log(b)).sum(axis=1)
    h_mean = float(h_rows.mean())
    loss = abs(psi - h_mean)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite separation loss")

    dl_dh = -np.sign(psi - h_mean) / conditions.shape[0]
    if update_is_a:
        s = (va + _EPS).sum(axis=1, keepdims=True)
        d_raw = dl_dh * (-np.log(b) + h_rows[:, None]) / s
    else:
        s = (vb + _EPS).sum(axis=1, keepdims=True)
        d_raw = dl_dh * (1.0 - a / b) / s
    grads = upd.grads(d_raw)
    neural.clip_global_norm(grads, grad_clip)
    neural.sgd_update(upd.params(), grads, lambda_weight, ascent=False)
    return loss


def _initial_twin(
    data: list[TrainingInstance], config: TwinConfig, seed: int
) -> tuple[TwinModel, np.ndarray, np.random.Generator]:
    """Adversarially pre-train one generator, start both twins from that
    same state, and calibrate psi if unset.

    Starting from a shared state keeps the pair assessment-equivalent from
    the outset; all separation is then introduced deliberately by the
    difference updates instead of by independent-training drift.
    """
    ss = np.random.SeedSequence(seed)
    seed_a, seed_rest = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    init_config = GanConfig(
        learning_rate=config.learning_rate,
        dropout=config.dropout,
        noise_dim=config.noise_dim,
        epochs=config.init_epochs,
        batch_size=config.batch_size,
        d_steps_per_g_step=config.d_steps_per_g_step,
        gen_hidden=config.gen_hidden,
        disc_hidden=config.disc_hidden,
        d_tol=config.d_tol,
    )
    gen_a, disc, _ = train_examgan(data, init_config, seed_a)
    gen_b = Generator.from_arrays(
        {k: v.copy() for k, v in gen_a.arrays().items()}, gen_a.noise_dim
    )

    conditions = np.unique(
        np.array([inst.condition.values for inst in data]), axis=0
    )
    rng = np.random.default_rng(seed_rest)
    if config.psi is None:
        z = rng.standard_normal((conditions.shape[0], gen_a.noise_dim))
        out = _normalize(_GenPass(gen_a, z, conditions).out)
        psi = float(config.psi_factor * -(out * np.log(out)).sum(axis=1).mean())
    else:
        psi = config.psi
    model = TwinModel(
        gen_a, gen_b, disc, psi, config.lambda_weight, config.gamma,
        config.overlap_threshold,
    )
    return model, conditions, rng


def _probe_overlap_fraction(
    model: TwinModel, conditions: np.ndarray, n: int, z: np.ndarray, threshold: float
) -> float:
    """Fraction of probe conditions whose extracted pair passes the
    overlap test (same noise fed to both generators)."""
    out_a = _GenPass(model.gen_a, z, conditions).out
    out_b = _GenPass(model.gen_b, z, conditions).out
    ids = np.arange(out_a.shape[1])
    passed = 0
    for row in range(conditions.shape[0]):
        e_a = ExamScript(tuple(int(i) for i in top_n_positions(out_a[row], ids, n)))
        e_b = ExamScript(tuple(int(i) for i in top_n_positions(out_b[row], ids, n)))
        passed += overlap_stop_check(e_a, e_b, threshold)
    return passed / conditions.shape[0]


def _quality_epoch(
    model: TwinModel,
    conditions: np.ndarray,
    vectors: np.ndarray,
    config: TwinConfig,
    rng: np.random.Generator,
) -> tuple[float, float, float]:
    """One epoch of shared-discriminator adversarial training of both
    generators; returns mean (V_D, V_GA, V_GB)."""
    from examgen.gan import _batches

    d_vals, ga_vals, gb_vals = [], [], []
    for batch in _batches(len(vectors), config.batch_size, rng):
        c = conditions[batch]
        v_real = vectors[batch]
        prev = None
        for _ in range(config.d_steps_per_g_step):
            z = rng.standard_normal((c.shape[0], config.noise_dim))
            fakes = [
                _GenPass(model.gen_a, z, c, config.dropout, rng).out,
                _GenPass(model.gen_b, rng.standard_normal(z.shape), c, config.dropout, rng).out,
            ]
            value = discriminator_step(model.disc, c, v_real, fakes, config, rng)
            d_vals.append(value)
            if prev is not None and abs(value - prev) <= config.d_tol * max(1.0, abs(prev)):
                break
            prev = value
        ga_vals.append(generator_step(model.gen_a, model.disc, c, config, rng))
        gb_vals.append(generator_step(model.gen_b, model.disc, c, config, rng))
    return float(np.mean(d_vals)), float(np.mean(ga_vals)), float(np.mean(gb_vals))


def train_twin_s1(
    data: list[TrainingInstance], config: TwinConfig, seed: int
) -> tuple[TwinModel, list[dict]]:
    """Quality-priority schedule: each round retrains both generators and
    the shared discriminator adversarially, then nudges one generator
    (alternating by round parity) with a single separation step."""
    model, unique_conditions, rng = _initial_twin(data, config, seed)
    all_conditions = np.array([inst.condition.values for inst in data])
    vectors = np.array([inst.v_e for inst in data], dtype=float)

    trace: list[dict] = []
    for r in range(1, config.gamma + 1):
        d_val = ga_val = gb_val = float("nan")
        for _ in range(config.round_epochs):
            d_val, ga_val, gb_val = _quality_epoch(model, all_conditions, vectors, config, rng)
        batch = unique_conditions[
            rng.choice(len(unique_conditions),
                       size=min(config.batch_size, len(unique_conditions)), replace=False)
        ]
        update_a = r % 2 == 0
        loss = difference_update(
            model.gen_a if update_a else model.gen_b,
            model.gen_b if update_a else model.gen_a,
            update_a, batch, model.psi, config.lambda_weight, rng,
        )
        trace.append({"round": r, "v_d": d_val, "v_ga": ga_val, "v_gb": gb_val,
                      "diff_loss": loss})
    return model, trace


def train_twin_s2(
    data: list[TrainingInstance], config: TwinConfig, seed: int
) -> tuple[TwinModel, list[dict]]:
    """Difference-priority schedule: each round separates the generators
    (alternating single steps) until enough probe pairs pass the overlap
    test or the step cap hits, then runs one capped discriminator loop
    and exactly one quality update per generator."""
    model, unique_conditions, rng = _initial_twin(data, config, seed)
    all_conditions = np.array([inst.condition.values for inst in data])
    vectors = np.array([inst.v_e for inst in data], dtype=float)
    probe = unique_conditions[: config.probe_conditions]

    trace: list[dict] = []
    for r in range(1, config.gamma + 1):
        # several noise draws per probe condition, so the stop test measures
        # separation of the generators rather than of one lucky draw
        probe_stack = np.repeat(probe, config.probe_draws, axis=0)
        probe_z = rng.standard_normal((probe_stack.shape[0], config.noise_dim))
        steps = 0
        pass_fraction = _probe_overlap_fraction(
            model, probe_stack, config.script_size, probe_z, config.overlap_threshold
        )
        diff_loss = float("nan")
        while pass_fraction < config.probe_pass_fraction and steps < config.diff_step_cap:
            batch = unique_conditions[
                rng.choice(len(unique_conditions),
                           size=min(config.batch_size, len(unique_conditions)), replace=False)
            ]
            update_a = steps % 2 == 0
            diff_loss = difference_update(
                model.gen_a if update_a else model.gen_b,
                model.gen_b if update_a else model.gen_a,
                update_a, batch, model.psi, config.lambda_weight, rng,
            )
            steps += 1
            pass_fraction = _probe_overlap_fraction(
                model, probe_stack, config.script_size, probe_z, config.overlap_threshold
            )

        batch_idx = rng.choice(len(vectors),
                               size=min(config.batch_size, len(vectors)), replace=False)
        c = all_conditions[batch_idx]
        v_real = vectors[batch_idx]
        prev = None
        d_val = float("nan")
        for _ in range(config.d_steps_per_g_step):
            z = rng.standard_normal((c.shape[0], config.noise_dim))
            fakes = [
                _GenPass(model.gen_a, z, c, config.dropout, rng).out,
                _GenPass(model.gen_b, rng.standard_normal(z.shape), c, config.dropout, rng).out,
            ]
            d_val = discriminator_step(model.disc, c, v_real, fakes, config, rng)
            if prev is not None and abs(d_val - prev) <= config.d_tol * max(1.0, abs(prev)):
                break
            prev = d_val
        ga_val = generator_step(model.gen_a, model.disc, c, config, rng)
        gb_val = generator_step(model.gen_b, model.disc, c, config, rng)
        trace.append({"round": r, "diff_steps": steps, "pass_fraction": pass_fraction,
                      "diff_loss": diff_loss, "v_d": d_val, "v_ga": ga_val, "v_gb": gb_val})
    return model, trace


def generate_pair(
    model: TwinModel,
    condition: Condition,
    n: int,
    seed: int,
    course: Course | None = None,
    roster=None,
    dkt_model=None,
    target: TargetDistribution | None = None,
    mastery: np.ndarray | None = None,
) -> ScriptPair:
    """Extract a pair: one shared noise draw, top-n from each generator.

    With course + (roster or mastery) the pair is annotated with both
    quality reports.
    """
    z = np.random.default_rng(seed).standard_normal(model.gen_a.noise_dim)
    out_a = _GenPass(model.gen_a, z[None, :], condition.values[None, :]).out[0]
    out_b = _GenPass(model.gen_b, z[None, :], condition.values[None, :]).out[0]
    ids = (
        np.array([q.id for q in course.qub])
        if course is not None
        else np.arange(out_a.size)
    )
    e_a = ExamScript(tuple(int(ids[p]) for p in top_n_positions(out_a, ids, n)))
    e_b = ExamScript(tuple(int(ids[p]) for p in top_n_positions(out_b, ids, n)))

    reports = None
    if course is not None and (roster is not None or mastery is not None):
        target = target or TargetDistribution.build()
        reports = (
            quality_report(e_a, course, roster, dkt_model, target, mastery=mastery),
            quality_report(e_b, course, roster, dkt_model, target, mastery=mastery),
        )
    return ScriptPair(e_a, e_b, jaccard_distance(e_a, e_b), reports)
