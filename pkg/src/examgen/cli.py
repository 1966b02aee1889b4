"""Command-line orchestration: configuration, pipeline stages, the
evaluation report, and plot-data export.

Every stage reads its inputs from and writes its artifacts to the run
directory (--out), so stages can be run individually or chained by the
``pipeline`` subcommand. All randomness derives from the single master
seed, making full runs byte-for-byte reproducible.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

import examgen
from examgen import assess, baselines, data, dkt, gan, neural, seeding, twin


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: str):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage


@dataclass
class RunConfig:
    """Flat run configuration; every key can be set in a ``key = value``
    config file and the master seed via --seed."""

    # data inputs; leave bank empty to synthesize a cohort instead
    bank: str = ""
    exercises: str = ""
    records: str = ""

    # synthetic cohort
    synth_kp_count: int = 30
    synth_qub_size: int = 500
    synth_exb_size: int = 500
    synth_students: int = 600
    synth_records_per_student: int = 80

    # evaluation protocol
    class_size: int = 50
    class_count: int = 100
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    n_questions: int = 40
    m_candidates: int = 1000
    keep_fraction: float = 0.01
    scripts_per_class: int = 10
    methods: str = "rsf,ga,examgan"
    twin_strategies: str = "s1,s2"

    # target score distribution
    target_mu: float = 70.0
    target_sigma: float = 15.0

    # knowledge tracing
    dkt_hidden: int = 64
    dkt_epochs: int = 12
    dkt_learning_rate: float = 0.05
    dkt_holdout_fraction: float = 0.1

    # adversarial training
    gan_learning_rate: float = 0.001
    gan_dropout: float = 0.3
    gan_noise_dim: int = 32
    gan_epochs: int = 300
    gan_batch_size: int = 16
    gan_d_steps: int = 3
    gan_hidden: int = 128
    gan_snapshot_every: int = 25

    # twin training
    twin_psi: float = 0.0  # 0 means calibrate at initialization
    twin_lambda: float = 0.001
    twin_gamma: int = 50
    twin_overlap_threshold: float = 0.3
    twin_init_epochs: int = 200
    twin_round_epochs: int = 2
    twin_diff_step_cap: int = 200

    # genetic baseline
    ga_crossover_rate: float = 0.8
    ga_mutation_rate: float = 0.003
    ga_population: int = 1000
    ga_generations: int = 30

    seed: int = 0

    def __post_init__(self):
        total = self.train_fraction + self.val_fraction + self.test_fraction
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split fractions sum to {total}, expected 1")
        for name in ("class_size", "class_count", "n_questions", "m_candidates",
                     "scripts_per_class"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    def method_list(self) -> list[str]:
        return [m.strip() for m in self.methods.split(",") if m.strip()]

    def strategy_list(self) -> list[str]:
        return [s.strip() for s in self.twin_strategies.split(",") if s.strip()]

    def gan_config(self, epochs: int | None = None) -> gan.GanConfig:
        return gan.GanConfig(
            learning_rate=self.gan_learning_rate,
            dropout=self.gan_dropout,
            noise_dim=self.gan_noise_dim,
            epochs=self.gan_epochs if epochs is None else epochs,
            batch_size=self.gan_batch_size,
            d_steps_per_g_step=self.gan_d_steps,
            gen_hidden=self.gan_hidden,
            disc_hidden=self.gan_hidden,
        )

    def twin_config(self) -> twin.TwinConfig:
        return twin.TwinConfig(
            learning_rate=self.gan_learning_rate,
            dropout=self.gan_dropout,
            noise_dim=self.gan_noise_dim,
            epochs=self.gan_epochs,
            batch_size=self.gan_batch_size,
            d_steps_per_g_step=self.gan_d_steps,
            gen_hidden=self.gan_hidden,
            disc_hidden=self.gan_hidden,
            psi=self.twin_psi or None,
            lambda_weight=self.twin_lambda,
            gamma=self.twin_gamma,
            overlap_threshold=self.twin_overlap_threshold,
            script_size=self.n_questions,
            init_epochs=self.twin_init_epochs,
            round_epochs=self.twin_round_epochs,
            diff_step_cap=self.twin_diff_step_cap,
        )

    def ga_config(self) -> baselines.GaConfig:
        return baselines.GaConfig(
            crossover_rate=self.ga_crossover_rate,
            mutation_rate=self.ga_mutation_rate,
            population=self.ga_population,
            generations=self.ga_generations,
        )

    def target(self) -> assess.TargetDistribution:
        return assess.TargetDistribution.build(self.target_mu, self.target_sigma)


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse a flat ``key = value`` file (# comments allowed) on top of
    the defaults."""
    values = dataclasses.asdict(base or RunConfig())
    types = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    casts = {"int": int, "float": float, "str": str}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in values:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        values[key] = casts[str(types[key])](raw)
    return RunConfig(**values)


def load_config(path: str | Path | None, seed: int | None = None) -> RunConfig:
    if path is None:
        cfg = RunConfig()
    else:
        text = Path(path).read_text(encoding="utf-8")
        if str(path).endswith(".json") or text.lstrip().startswith("{"):
            payload = json.loads(text)
            cfg = RunConfig(**payload.get("config", payload))
        else:
            cfg = parse_config_text(text)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    return cfg


_STAGE_KEY = {
    "synth": 1, "classes": 2, "dkt": 3, "seed": 4, "gan": 5,
    "twin_s1": 6, "twin_s2": 7, "generate": 8, "evaluate": 9, "snapshot": 10,
}
_METHOD_KEY = {"rsf": 1, "ga": 2, "examgan": 3, "texamgan_s1": 4, "texamgan_s2": 5}


def derive_seed(master: int, stage: str, *extra: int) -> int:
    return int(
        np.random.SeedSequence([master, _STAGE_KEY[stage], *extra]).generate_state(1)[0]
    )


class Workspace:
    """Artifact layout of one run directory."""

    def __init__(self, out: str | Path):
        self.root = Path(out)
        self.root.mkdir(parents=True, exist_ok=True)

    @property
    def bank(self): return self.root / "bank.jsonl"
    @property
    def exercises(self): return self.root / "exercises.jsonl"
    @property
    def records(self): return self.root / "records.csv"
    @property
    def classes(self): return self.root / "classes.json"
    @property
    def dkt_checkpoint(self): return self.root / "dkt.ckpt.json"
    @property
    def dkt_report(self): return self.root / "dkt_report.json"
    @property
    def instances(self): return self.root / "instances.jsonl"
    @property
    def conditions(self): return self.root / "conditions.json"
    @property
    def gan_checkpoint(self): return self.root / "gan.ckpt.json"
    @property
    def gan_trace(self): return self.root / "gan_trace.csv"
    @property
    def generated_scripts(self): return self.root / "generated_scripts.json"
    @property
    def generated_pairs(self): return self.root / "generated_pairs.json"
    @property
    def evaluation(self): return self.root / "evaluation.json"
    @property
    def plots(self): return self.root / "plots"
    @property
    def manifest(self): return self.root / "manifest.json"

    def twin_checkpoint(self, strategy: str) -> Path:
        return self.root / f"twin_{strategy}.ckpt.json"

    def twin_trace(self, strategy: str) -> Path:
        return self.root / f"twin_{strategy}_trace.csv"

    def write_json(self, path: Path, payload) -> None:
        path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n",
                        encoding="utf-8")

    def read_json(self, path: Path):
        return json.loads(path.read_text(encoding="utf-8"))

    def require(self, path: Path, stage: str, hint: str) -> Path:
        if not path.exists():
            raise StageError(stage, f"missing {path.name}; run `{hint}` first")
        return path


# ---------------------------------------------------------------------------
# stages


def stage_data(cfg: RunConfig, ws: Workspace) -> None:
    """Ingest the configured bank/records, or synthesize a cohort, and
    write the normalized copies the rest of the pipeline reads."""
    if cfg.bank:
        course = data.load_question_bank(cfg.bank, cfg.exercises or None)
        if not cfg.records:
            raise StageError("ingest", "records path missing in config")
        records = data.load_records(cfg.records, course)
    else:
        course, records, _ = data.synth_cohort(
            kp_count=cfg.synth_kp_count,
            qub_size=cfg.synth_qub_size,
            exb_size=cfg.synth_exb_size,
            student_count=cfg.synth_students,
            records_per_student=cfg.synth_records_per_student,
            seed=derive_seed(cfg.seed, "synth"),
        )
    data.save_question_bank(course, ws.bank)
    data.save_exercise_bank(course, ws.exercises)
    data.save_records(records, ws.records)


def _load_course(ws: Workspace, stage: str) -> data.Course:
    ws.require(ws.bank, stage, "examgen synth/ingest")
    return data.load_question_bank(ws.bank, ws.exercises if ws.exercises.exists() else None)


def _load_histories(ws: Workspace, course: data.Course, stage: str):
    ws.require(ws.records, stage, "examgen synth/ingest")
    return data.group_histories(data.load_records(ws.records, course))


def stage_classes(cfg: RunConfig, ws: Workspace) -> None:
    course = _load_course(ws, "classes")
    histories = _load_histories(ws, course, "classes")
    rosters = data.form_classes(
        histories, cfg.class_size, cfg.class_count, derive_seed(cfg.seed, "classes")
    )
    n_train = int(round(cfg.class_count * cfg.train_fraction))
    n_val = int(round(cfg.class_count * cfg.val_fraction))
    payload = {
        "classes": [list(r.students) for r in rosters],
        "splits": {
            "train": list(range(n_train)),
            "val": list(range(n_train, n_train + n_val)),
            "test": list(range(n_train + n_val, cfg.class_count)),
        },
    }
    ws.write_json(ws.classes, payload)


def _load_rosters(ws: Workspace, histories, stage: str):
    ws.require(ws.classes, stage, "examgen pipeline (classes stage)")
    payload = ws.read_json(ws.classes)
    rosters = [
        data.ClassRoster(tuple(members), {s: histories[s] for s in members})
        for members in payload["classes"]
    ]
    return rosters, payload["splits"]


def stage_train_dkt(cfg: RunConfig, ws: Workspace) -> None:
    course = _load_course(ws, "train-dkt")
    histories = _load_histories(ws, course, "train-dkt")
    students = sorted(histories)
    rng = np.random.default_rng(derive_seed(cfg.seed, "dkt", 1))
    heldout_count = int(len(students) * cfg.dkt_holdout_fraction)
    heldout = set(
        rng.choice(len(students), size=heldout_count, replace=False).tolist()
    ) if heldout_count else set()
    train_histories = {s: h for i, (s, h) in enumerate(sorted(histories.items()))
                       if i not in heldout}
    heldout_histories = {s: h for i, (s, h) in enumerate(sorted(histories.items()))
                         if i in heldout}

    config = dkt.DktConfig(
        hidden_size=cfg.dkt_hidden,
        epochs=cfg.dkt_epochs,
        learning_rate=cfg.dkt_learning_rate,
        seed=derive_seed(cfg.seed, "dkt"),
    )
    model = dkt.train_dkt(train_histories, course, config)
    model.save(ws.dkt_checkpoint)
    report = {"loss_trace": model.loss_trace, "heldout_students": len(heldout_histories)}
    if heldout_histories:
        try:
            report["heldout_auc"] = dkt.evaluate_auc(model, heldout_histories, course)
        except ValueError as exc:
            report["heldout_auc_error"] = str(exc)
    ws.write_json(ws.dkt_report, report)


def stage_seed(cfg: RunConfig, ws: Workspace) -> None:
    """Build every class condition and the filtered training instances
    for the training classes."""
    course = _load_course(ws, "seed")
    histories = _load_histories(ws, course, "seed")
    rosters, splits = _load_rosters(ws, histories, "seed")
    ws.require(ws.dkt_checkpoint, "seed", "examgen train-dkt")
    model = dkt.DktModel.load(ws.dkt_checkpoint)
    target = cfg.target()

    conditions = []
    pairs: list[tuple[int, seeding.TrainingInstance]] = []
    for idx, roster in enumerate(rosters):
        condition = seeding.build_condition(roster, model, course)
        conditions.append(condition.values.tolist())
        if idx in set(splits["train"]):
            instances = seeding.make_training_data(
                roster, model, course,
                n=cfg.n_questions, m=cfg.m_candidates,
                keep_fraction=cfg.keep_fraction,
                seed=derive_seed(cfg.seed, "seed", idx),
                target=target,
            )
            pairs.extend((idx, inst) for inst in instances)
    seeding.save_training_data(pairs, course, ws.instances)
    ws.write_json(ws.conditions, {"conditions": conditions})


def _validation_snapshotter(cfg: RunConfig, ws: Workspace, course, model, rosters, splits):
    """Early-stopping callback: track the parameter snapshot with the best
    validation score.

    The score is mean rationality plus mean validity over the validation
    classes; rationality alone favors snapshots whose selections collapse
    onto a few knowledge points, which the validity term vetoes.
    """
    target = cfg.target()
    val_ids = splits["val"]
    if not val_ids:
        return None, None
    payload = ws.read_json(ws.conditions)
    val_sets = []
    for idx in val_ids:
        roster = rosters[idx]
        val_sets.append((
            seeding.Condition(np.array(payload["conditions"][idx])),
            dkt.mastery_matrix(roster, model, course),
        ))
    state = {"best": -np.inf, "epoch": -1, "arrays": None}

    def callback(epoch: int, generator: gan.Generator, disc: gan.Discriminator):
        if (epoch + 1) % cfg.gan_snapshot_every:
            return
        vals = []
        for slot, (condition, mastery) in enumerate(val_sets):
            script = gan.generate_script(
                generator, condition, cfg.n_questions,
                derive_seed(cfg.seed, "snapshot", epoch, slot), course,
            )
            dist = assess.ScoreDistribution.from_scores(
                assess.scores_from_mastery(mastery, script, course)
            )
            vals.append(
                assess.rationality(dist, target) + assess.validity(script, course)
            )
        mean_val = float(np.mean(vals))
        if mean_val > state["best"]:
            state["best"] = mean_val
            state["epoch"] = epoch
            state["arrays"] = {
                k: v.copy()
                for k, v in {**generator.arrays(), **disc.arrays()}.items()
            }

    return callback, state


def stage_train_examgan(cfg: RunConfig, ws: Workspace) -> None:
    course = _load_course(ws, "train-examgan")
    histories = _load_histories(ws, course, "train-examgan")
    rosters, splits = _load_rosters(ws, histories, "train-examgan")
    ws.require(ws.instances, "train-examgan", "examgen seed")
    ws.require(ws.dkt_checkpoint, "train-examgan", "examgen train-dkt")
    model = dkt.DktModel.load(ws.dkt_checkpoint)
    instances = seeding.load_training_data(ws.instances, course)
    if not instances:
        raise StageError("train-examgan", "no training instances")

    callback, state = _validation_snapshotter(cfg, ws, course, model, rosters, splits)
    generator, disc, trace = gan.train_examgan(
        instances, cfg.gan_config(), derive_seed(cfg.seed, "gan"), epoch_callback=callback
    )
    meta = {"epochs": cfg.gan_epochs}
    if state is not None and state["arrays"] is not None:
        arrays = state["arrays"]
        generator = gan.Generator.from_arrays(arrays, cfg.gan_noise_dim)
        disc = gan.Discriminator.from_arrays(arrays)
        meta.update(best_epoch=state["epoch"], best_val_rationality=state["best"])
    gan.save_gan(ws.gan_checkpoint, generator, disc, meta=meta)
    with open(ws.gan_trace, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "d_loss", "g_loss"])
        for epoch, (d_loss, g_loss) in enumerate(trace):
            writer.writerow([epoch, repr(d_loss), repr(g_loss)])


def stage_train_texamgan(cfg: RunConfig, ws: Workspace, strategies=None) -> None:
    course = _load_course(ws, "train-texamgan")
    ws.require(ws.instances, "train-texamgan", "examgen seed")
    instances = seeding.load_training_data(ws.instances, course)
    if not instances:
        raise StageError("train-texamgan", "no training instances")
    config = cfg.twin_config()
    for strategy in strategies or cfg.strategy_list():
        if strategy == "s1":
            model, trace = twin.train_twin_s1(
                instances, config, derive_seed(cfg.seed, "twin_s1")
            )
        elif strategy == "s2":
            model, trace = twin.train_twin_s2(
                instances, config, derive_seed(cfg.seed, "twin_s2")
            )
        else:
            raise StageError("train-texamgan", f"unknown strategy {strategy!r}")
        model.save(ws.twin_checkpoint(strategy))
        with open(ws.twin_trace(strategy), "w", newline="", encoding="utf-8") as fh:
            if trace:
                writer = csv.DictWriter(fh, fieldnames=sorted(trace[0]))
                writer.writeheader()
                for row in trace:
                    writer.writerow({k: repr(v) if isinstance(v, float) else v
                                     for k, v in row.items()})


def _test_contexts(cfg: RunConfig, ws: Workspace, stage: str):
    """(class index, roster, condition, mastery) for every test class."""
    course = _load_course(ws, stage)
    histories = _load_histories(ws, course, stage)
    rosters, splits = _load_rosters(ws, histories, stage)
    ws.require(ws.dkt_checkpoint, stage, "examgen train-dkt")
    ws.require(ws.conditions, stage, "examgen seed")
    model = dkt.DktModel.load(ws.dkt_checkpoint)
    payload = ws.read_json(ws.conditions)
    contexts = []
    for idx in splits["test"]:
        roster = rosters[idx]
        contexts.append((
            idx,
            roster,
            seeding.Condition(np.array(payload["conditions"][idx])),
            dkt.mastery_matrix(roster, model, course),
        ))
    return course, model, contexts


def stage_generate(cfg: RunConfig, ws: Workspace) -> None:
    course, _, contexts = _test_contexts(cfg, ws, "generate")
    ws.require(ws.gan_checkpoint, "generate", "examgen train-examgan")
    generator, _, _ = gan.load_gan(ws.gan_checkpoint)
    out = []
    for idx, _, condition, _ in contexts:
        for j in range(cfg.scripts_per_class):
            seed = derive_seed(cfg.seed, "generate", _METHOD_KEY["examgan"], idx, j)
            script = gan.generate_script(generator, condition, cfg.n_questions, seed, course)
            out.append({"class": idx, "seed": seed, "questions": list(script.questions)})
    ws.write_json(ws.generated_scripts, {"scripts": out})


def stage_generate_pair(cfg: RunConfig, ws: Workspace, strategies=None) -> None:
    course, _, contexts = _test_contexts(cfg, ws, "generate-pair")
    out = []
    for strategy in strategies or cfg.strategy_list():
        path = ws.require(ws.twin_checkpoint(strategy), "generate-pair",
                          "examgen train-texamgan")
        model = twin.TwinModel.load(path)
        for idx, _, condition, _ in contexts:
            for j in range(cfg.scripts_per_class):
                seed = derive_seed(cfg.seed, "generate",
                                   _METHOD_KEY[f"texamgan_{strategy}"], idx, j)
                pair = twin.generate_pair(model, condition, cfg.n_questions, seed, course)
                out.append({
                    "strategy": strategy, "class": idx, "seed": seed,
                    "questions_a": list(pair.e_a.questions),
                    "questions_b": list(pair.e_b.questions),
                    "jaccard_distance": pair.jaccard_distance,
                    "shared_ratio": pair.shared_ratio,
                })
    ws.write_json(ws.generated_pairs, {"pairs": out})


@dataclass
class EvaluationReport:
    """Per-script quality entries per method plus per-pair summaries."""

    methods: dict[str, list[dict]] = field(default_factory=dict)
    pairs: dict[str, list[dict]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def sorted_series(self, method: str, metric: str) -> list[float]:
        return sorted(entry[metric] for entry in self.methods.get(method, []))

    def to_payload(self) -> dict:
        return {"meta": self.meta, "methods": self.methods, "pairs": self.pairs}

    @classmethod
    def from_payload(cls, payload: dict) -> "EvaluationReport":
        return cls(methods=payload.get("methods", {}), pairs=payload.get("pairs", {}),
                   meta=payload.get("meta", {}))


def _report_entry(cls_idx: int, seed: int, script: assess.ExamScript,
                  report: assess.QualityReport) -> dict:
    return {
        "class": cls_idx,
        "seed": seed,
        "questions": list(script.questions),
        "difficulty": report.difficulty,
        "distinguishability": report.distinguishability,
        "validity": report.validity,
        "rationality": report.rationality,
        "band": report.band,
        "bins": report.bins.tolist(),
    }


def cmd_evaluate(cfg: RunConfig, ws: Workspace, methods: list[str] | None = None
                 ) -> EvaluationReport:
    """Generate and grade scripts_per_class scripts per test class for
    every requested method; pair methods also record pair summaries."""
    course, model, contexts = _test_contexts(cfg, ws, "evaluate")
    methods = methods if methods is not None else cfg.method_list()
    target = cfg.target()
    report = EvaluationReport(meta={
        "n_questions": cfg.n_questions,
        "scripts_per_class": cfg.scripts_per_class,
        "test_classes": [idx for idx, _, _, _ in contexts],
        "target_mu": cfg.target_mu,
        "target_sigma": cfg.target_sigma,
    })

    generator = None
    if "examgan" in methods:
        path = ws.require(ws.gan_checkpoint, "evaluate", "examgen train-examgan")
        generator, _, _ = gan.load_gan(path)
    twins = {}
    for strategy in ("s1", "s2"):
        if f"texamgan_{strategy}" in methods:
            path = ws.require(ws.twin_checkpoint(strategy), "evaluate",
                              "examgen train-texamgan")
            twins[strategy] = twin.TwinModel.load(path)

    for method in methods:
        if method not in _METHOD_KEY:
            raise StageError("evaluate", f"unknown method {method!r}")
        entries: list[dict] = []
        pair_entries: list[dict] = []
        for idx, roster, condition, mastery in contexts:
            for j in range(cfg.scripts_per_class):
                seed = derive_seed(cfg.seed, "evaluate", _METHOD_KEY[method], idx, j)
                if method == "rsf":
                    script = seeding.sample_script_rsf(course, cfg.n_questions, seed)
                elif method == "ga":
                    script = baselines.ga_generate(
                        course, roster, model, cfg.n_questions, cfg.ga_config(),
                        seed, mastery=mastery,
                    )
                elif method == "examgan":
                    script = gan.generate_script(
                        generator, condition, cfg.n_questions, seed, course
                    )
                else:  # texamgan_s1 / texamgan_s2
                    strategy = method.removeprefix("texamgan_")
                    pair = twin.generate_pair(
                        twins[strategy], condition, cfg.n_questions, seed, course,
                        roster=roster, dkt_model=model, target=target, mastery=mastery,
                    )
                    rep_a, rep_b = pair.reports
                    entry_a = _report_entry(idx, seed, pair.e_a, rep_a)
                    entry_b = _report_entry(idx, seed, pair.e_b, rep_b)
                    entries.extend([entry_a, entry_b])
                    pair_entries.append({
                        "class": idx,
                        "seed": seed,
                        "jaccard_distance": pair.jaccard_distance,
                        "shared_ratio": pair.shared_ratio,
                        "delta_difficulty": abs(rep_a.difficulty - rep_b.difficulty),
                        "delta_rationality": abs(rep_a.rationality - rep_b.rationality),
                        "delta_validity": abs(rep_a.validity - rep_b.validity),
                        "delta_distinguishability": abs(
                            rep_a.distinguishability - rep_b.distinguishability
                        ),
                        "report_a": entry_a,
                        "report_b": entry_b,
                    })
                    continue
                quality = assess.quality_report(
                    script, course, roster, model, target, mastery=mastery
                )
                entries.append(_report_entry(idx, seed, script, quality))
        report.methods[method] = entries
        if pair_entries:
            report.pairs[method.removeprefix("texamgan_")] = pair_entries
    return report


def stage_evaluate(cfg: RunConfig, ws: Workspace, methods=None) -> None:
    report = cmd_evaluate(cfg, ws, methods)
    ws.write_json(ws.evaluation, report.to_payload())


_METRICS = ("difficulty", "validity", "rationality", "distinguishability")


def cmd_export_plots(report: EvaluationReport, outdir: str | Path) -> list[Path]:
    """Emit plot-ready CSVs: ascending per-metric series, metric-vs-
    difficulty scatter, per-script histograms, and pair overlap data."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    path = outdir / "sorted_metrics.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "metric", "rank", "value"])
        for method in sorted(report.methods):
            for metric in _METRICS:
                for rank, value in enumerate(report.sorted_series(method, metric)):
                    writer.writerow([method, metric, rank, repr(value)])
    written.append(path)

    path = outdir / "metric_vs_difficulty.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "script_index", "class", "difficulty",
                         "validity", "rationality", "distinguishability", "band"])
        for method in sorted(report.methods):
            for i, entry in enumerate(report.methods[method]):
                writer.writerow(
                    [method, i, entry["class"]]
                    + [repr(entry[m]) for m in _METRICS]
                    + [entry["band"]]
                )
    written.append(path)

    path = outdir / "score_histograms.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "script_index", "score", "mass"])
        for method in sorted(report.methods):
            for i, entry in enumerate(report.methods[method]):
                for score, mass in enumerate(entry["bins"]):
                    if mass:
                        writer.writerow([method, i, score, repr(mass)])
    written.append(path)

    path = outdir / "pair_overlap.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "pair_index", "class", "jaccard_distance",
                         "shared_ratio", "delta_difficulty", "delta_rationality",
                         "delta_validity", "delta_distinguishability"])
        for strategy in sorted(report.pairs):
            for i, entry in enumerate(report.pairs[strategy]):
                writer.writerow([strategy, i, entry["class"]] + [
                    repr(entry[k]) for k in (
                        "jaccard_distance", "shared_ratio", "delta_difficulty",
                        "delta_rationality", "delta_validity",
                        "delta_distinguishability",
                    )
                ])
    written.append(path)
    return written


def stage_export_plots(cfg: RunConfig, ws: Workspace) -> None:
    ws.require(ws.evaluation, "export-plots", "examgen evaluate")
    report = EvaluationReport.from_payload(ws.read_json(ws.evaluation))
    cmd_export_plots(report, ws.plots)


def write_manifest(cfg: RunConfig, ws: Workspace) -> None:
    ws.write_json(ws.manifest, {
        "config": dataclasses.asdict(cfg),
        "seed": cfg.seed,
        "versions": {
            "examgen": examgen.__version__,
            "numpy": np.__version__,
            "python": ".".join(map(str, sys.version_info[:3])),
            "kernels": neural.backend_name(),
        },
    })


def cmd_pipeline(cfg: RunConfig, ws: Workspace) -> None:
    """Run every stage in order; artifacts land under the run directory."""
    write_manifest(cfg, ws)
    methods = cfg.method_list()
    twin_strategies = [m.removeprefix("texamgan_") for m in methods
                       if m.startswith("texamgan_")]
    stages = [
        ("ingest" if cfg.bank else "synth", lambda: stage_data(cfg, ws)),
        ("classes", lambda: stage_classes(cfg, ws)),
        ("train-dkt", lambda: stage_train_dkt(cfg, ws)),
        ("seed", lambda: stage_seed(cfg, ws)),
    ]
    if "examgan" in methods:
        stages.append(("train-examgan", lambda: stage_train_examgan(cfg, ws)))
        stages.append(("generate", lambda: stage_generate(cfg, ws)))
    if twin_strategies:
        stages.append(("train-texamgan",
                       lambda: stage_train_texamgan(cfg, ws, twin_strategies)))
        stages.append(("generate-pair",
                       lambda: stage_generate_pair(cfg, ws, twin_strategies)))
    stages.append(("evaluate", lambda: stage_evaluate(cfg, ws)))
    stages.append(("export-plots", lambda: stage_export_plots(cfg, ws)))

    for name, run in stages:
        try:
            run()
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, str(exc)) from exc


def cmd_solve_sigma(mu: float, target_dis: float, mc_samples: int, seed: int,
                    out: Path | None = None) -> dict:
    sigma_bound, sigma_exact = assess.solve_sigma(mu, target_dis)
    result = {
        "mu": mu,
        "target_distinguishability": target_dis,
        "sigma_bound_form": sigma_bound,
        "sigma_exact_form": sigma_exact,
        "sigma_default": 15.0,
    }
    if mc_samples:
        result["montecarlo"] = {
            "sigma_exact_form": assess.verify_sigma_montecarlo(
                mu, sigma_exact, mc_samples, seed),
            "sigma_default": assess.verify_sigma_montecarlo(
                mu, 15.0, mc_samples, seed),
        }
    if out is not None:
        Workspace(out).write_json(Workspace(out).root / "sigma_report.json", result)
    return result


# ---------------------------------------------------------------------------
# argparse front end


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file (or a manifest.json)")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--out", default="run", help="run directory (default: ./run)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="examgen",
        description="Generate and evaluate exam scripts for classes of students.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = [
        ("ingest", "load a question bank and records into the run directory"),
        ("synth", "synthesize a cohort into the run directory"),
        ("train-dkt", "train the knowledge tracer"),
        ("seed", "build class conditions and filtered training scripts"),
        ("train-examgan", "train the adversarial script generator"),
        ("train-texamgan", "train the twin generator (both strategies by default)"),
        ("generate", "generate scripts for the test classes"),
        ("generate-pair", "generate script pairs for the test classes"),
        ("evaluate", "grade generated scripts for every configured method"),
        ("export-plots", "export plot-ready CSVs from the evaluation report"),
        ("solve-sigma", "report the sigma solvers for a target distinguishability"),
        ("pipeline", "run every stage in sequence"),
    ]
    for name, help_text in commands:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "train-texamgan":
            p.add_argument("--strategy", choices=["s1", "s2"],
                           help="train a single strategy")
        if name == "evaluate":
            p.add_argument("--methods", help="comma list overriding the config")
        if name == "solve-sigma":
            p.add_argument("--mu", type=float, default=70.0)
            p.add_argument("--target", type=float, default=0.39)
            p.add_argument("--mc-samples", type=int, default=0,
                           help="verify by Monte Carlo with this many samples")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed)
        ws = Workspace(args.out)
        if args.command in ("ingest", "synth"):
            if args.command == "ingest" and not cfg.bank:
                raise StageError("ingest", "config must set bank/records paths")
            if args.command == "synth" and cfg.bank:
                raise StageError("synth", "config sets a bank path; use ingest")
            stage_data(cfg, ws)
            stage_classes(cfg, ws)
        elif args.command == "train-dkt":
            stage_train_dkt(cfg, ws)
        elif args.command == "seed":
            stage_seed(cfg, ws)
        elif args.command == "train-examgan":
            stage_train_examgan(cfg, ws)
        elif args.command == "train-texamgan":
            strategies = [args.strategy] if args.strategy else None
            stage_train_texamgan(cfg, ws, strategies)
        elif args.command == "generate":
            stage_generate(cfg, ws)
        elif args.command == "generate-pair":
            stage_generate_pair(cfg, ws)
        elif args.command == "evaluate":
            methods = ([m.strip() for m in args.methods.split(",") if m.strip()]
                       if getattr(args, "methods", None) else None)
            stage_evaluate(cfg, ws, methods)
        elif args.command == "export-plots":
            stage_export_plots(cfg, ws)
        elif args.command == "solve-sigma":
            result = cmd_solve_sigma(args.mu, args.target, args.mc_samples,
                                     cfg.seed, out=Path(args.out))
            for key in ("sigma_bound_form", "sigma_exact_form", "sigma_default"):
                print(f"{key}: {result[key]:.6g}")
            if "montecarlo" in result:
                for key, value in result["montecarlo"].items():
                    print(f"montecarlo[{key}]: {value:.6g}")
        elif args.command == "pipeline":
            cmd_pipeline(cfg, ws)
        else:  # pragma: no cover
            raise StageError("cli", f"unknown command {args.command}")
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"[{args.command}] {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
