"""Conditional adversarial script generator.

The generator maps noise plus a class condition to a [0,1] selection
score per bank question (sigmoid hidden layer, tanh output remapped by
(x+1)/2); the discriminator scores condition/vector pairs with two
sigmoid layers. Training alternates a capped discriminator ascent with a
single non-saturating generator ascent per minibatch. Script extraction
is rank-based: the n highest-scoring questions win, ties broken by
ascending question id, so any strictly monotone remap of the output
leaves selections unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from examgen import neural
from examgen.assess import ExamScript
from examgen.data import Course
from examgen.neural import DenseLayer
from examgen.seeding import Condition, TrainingInstance


@dataclass
class GanConfig:
    learning_rate: float = 0.001
    dropout: float = 0.3
    noise_dim: int = 32
    epochs: int = 300
    batch_size: int = 16
    d_steps_per_g_step: int = 3
    gen_hidden: int = 128
    disc_hidden: int = 128
    d_tol: float = 1e-4  # relative V_D change that ends the inner loop

    def __post_init__(self):
        if min(self.noise_dim, self.batch_size, self.d_steps_per_g_step,
               self.gen_hidden, self.disc_hidden) < 1:
            raise ValueError("GanConfig sizes must be positive")
        if self.learning_rate <= 0 or self.epochs < 0:
            raise ValueError("learning_rate must be positive and epochs >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


@dataclass
class Generator:
    layer1: DenseLayer  # sigmoid
    layer2: DenseLayer  # tanh, output remapped to [0,1]
    noise_dim: int

    @property
    def out_dim(self) -> int:
        return self.layer2.n_out

    def arrays(self, prefix: str = "gen") -> dict[str, np.ndarray]:
        return {
            f"{prefix}_l1_w": self.layer1.w, f"{prefix}_l1_b": self.layer1.b,
            f"{prefix}_l2_w": self.layer2.w, f"{prefix}_l2_b": self.layer2.b,
        }

    @classmethod
    def from_arrays(cls, arrays: dict, noise_dim: int, prefix: str = "gen") -> "Generator":
        return cls(
            DenseLayer(arrays[f"{prefix}_l1_w"], arrays[f"{prefix}_l1_b"], "sigmoid"),
            DenseLayer(arrays[f"{prefix}_l2_w"], arrays[f"{prefix}_l2_b"], "tanh"),
            noise_dim,
        )


@dataclass
class Discriminator:
    layer1: DenseLayer  # sigmoid
    layer2: DenseLayer  # sigmoid, scalar output

    def arrays(self, prefix: str = "disc") -> dict[str, np.ndarray]:
        return {
            f"{prefix}_l1_w": self.layer1.w, f"{prefix}_l1_b": self.layer1.b,
            f"{prefix}_l2_w": self.layer2.w, f"{prefix}_l2_b": self.layer2.b,
        }

    @classmethod
    def from_arrays(cls, arrays: dict, prefix: str = "disc") -> "Discriminator":
        return cls(
            DenseLayer(arrays[f"{prefix}_l1_w"], arrays[f"{prefix}_l1_b"], "sigmoid"),
            DenseLayer(arrays[f"{prefix}_l2_w"], arrays[f"{prefix}_l2_b"], "sigmoid"),
        )


def init_generator(rng: np.random.Generator, cond_dim: int, out_dim: int,
                   config: GanConfig) -> Generator:
    return Generator(
        layer1=neural.init_dense(rng, config.noise_dim + cond_dim, config.gen_hidden, "sigmoid"),
        layer2=neural.init_dense(rng, config.gen_hidden, out_dim, "tanh"),
        noise_dim=config.noise_dim,
    )


def init_discriminator(rng: np.random.Generator, cond_dim: int, vec_dim: int,
                       config: GanConfig) -> Discriminator:
    return Discriminator(
        layer1=neural.init_dense(rng, cond_dim + vec_dim, config.disc_hidden, "sigmoid"),
        layer2=neural.init_dense(rng, config.disc_hidden, 1, "sigmoid"),
    )


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def gen_forward(gen: Generator, z: np.ndarray, condition: Condition | np.ndarray) -> np.ndarray:
    """Selection scores in [0,1] per bank question; z and the condition may
    be single vectors or (batch, dim) matrices."""
    cvals = condition.values if isinstance(condition, Condition) else np.asarray(condition)
    x = np.concatenate([z, np.broadcast_to(cvals, z.shape[:-1] + cvals.shape[-1:])], axis=-1)
    a1 = neural.dense_forward(gen.layer1, x)
    t = neural.dense_forward(gen.layer2, a1)
    return (t + 1.0) / 2.0


def disc_forward(disc: Discriminator, condition: Condition | np.ndarray,
                 v: np.ndarray) -> np.ndarray:
    """Probability that (condition, v) is a real training pair."""
    cvals = condition.values if isinstance(condition, Condition) else np.asarray(condition)
    x = np.concatenate([np.broadcast_to(cvals, v.shape[:-1] + cvals.shape[-1:]), v], axis=-1)
    a1 = neural.dense_forward(disc.layer1, x)
    out = neural.dense_forward(disc.layer2, a1)
    return out[..., 0] if out.ndim > 1 else out[0]


class _GenPass:
    """Batched generator forward with caches for backprop."""

    def __init__(self, gen: Generator, z: np.ndarray, c: np.ndarray,
                 dropout: float = 0.0, rng: np.random.Generator | None = None):
        self.gen = gen
        self.x = np.concatenate([z, c], axis=1)
        self.a1 = _sigmoid(self.x @ gen.layer1.w.T + gen.layer1.b)
        self.mask = (
            neural.dropout_mask(rng, self.a1.shape, dropout) if dropout > 0.0 else None
        )
        self.a1d = self.a1 * self.mask if self.mask is not None else self.a1
        self.t = np.tanh(self.a1d @ gen.layer2.w.T + gen.layer2.b)
        self.out = (self.t + 1.0) / 2.0

    def grads(self, d_out: np.ndarray) -> dict[str, np.ndarray]:
        du2 = d_out * 0.5 * (1.0 - self.t * self.t)
        da1 = du2 @ self.gen.layer2.w
        if self.mask is not None:
            da1 = da1 * self.mask
        du1 = da1 * self.a1 * (1.0 - self.a1)
        return {
            "l1_w": du1.T @ self.x, "l1_b": du1.sum(axis=0),
            "l2_w": du2.T @ self.a1d, "l2_b": du2.sum(axis=0),
        }

    def params(self) -> dict[str, np.ndarray]:
        return {
            "l1_w": self.gen.layer1.w, "l1_b": self.gen.layer1.b,
            "l2_w": self.gen.layer2.w, "l2_b": self.gen.layer2.b,
        }


class _DiscPass:
    """Batched discriminator forward keeping the output at logit level."""

    def __init__(self, disc: Discriminator, c: np.ndarray, v: np.ndarray,
                 dropout: float = 0.0, rng: np.random.Generator | None = None):
        self.disc = disc
        self.cond_dim = c.shape[1]
        self.x = np.concatenate([c, v], axis=1)
        self.a1 = _sigmoid(self.x @ disc.layer1.w.T + disc.layer1.b)
        self.mask = (
            neural.dropout_mask(rng, self.a1.shape, dropout) if dropout > 0.0 else None
        )
        self.a1d = self.a1 * self.mask if self.mask is not None else self.a1
        self.logit = (self.a1d @ disc.layer2.w.T + disc.layer2.b)[:, 0]
        self.prob = _sigmoid(self.logit)

    def grads(self, d_logit: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
        """Parameter grads plus the gradient on the v part of the input."""
        du2 = d_logit[:, None]
        da1 = du2 @ self.disc.layer2.w
        if self.mask is not None:
            da1 = da1 * self.mask
        du1 = da1 * self.a1 * (1.0 - self.a1)
        grads = {
            "l1_w": du1.T @ self.x, "l1_b": du1.sum(axis=0),
            "l2_w": du2.T @ self.a1d, "l2_b": du2.sum(axis=0),
        }
        dx = du1 @ self.disc.layer1.w
        return grads, dx[:, self.cond_dim:]

    def params(self) -> dict[str, np.ndarray]:
        return {
            "l1_w": self.disc.layer1.w, "l1_b": self.disc.layer1.b,
            "l2_w": self.disc.layer2.w, "l2_b": self.disc.layer2.b,
        }


def _check_finite(*values: float) -> None:
    if not all(np.isfinite(v) for v in values):
        raise FloatingPointError(
            "adversarial training diverged (non-finite objective); "
            "lower the learning rate or epochs"
        )


def discriminator_step(disc: Discriminator, c: np.ndarray, v_real: np.ndarray,
                       v_fake: np.ndarray | list[np.ndarray], config: GanConfig,
                       rng: np.random.Generator) -> float:
    """One ascent step on mean log D(real) + sum over fake batches of
    mean log(1 - D(fake)); returns the objective value before the step."""
    fakes = v_fake if isinstance(v_fake, list) else [v_fake]
    real = _DiscPass(disc, c, v_real, config.dropout, rng)
    fake_passes = [_DiscPass(disc, c, v, config.dropout, rng) for v in fakes]
    batch = c.shape[0]
    value = float(
        _log_sigmoid(real.logit).mean()
        + sum(_log_sigmoid(-fp.logit).mean() for fp in fake_passes)
    )
    _check_finite(value)
    # d/dlogit of log sigmoid(u) is (1 - D); of log(1 - sigmoid(u)) is -D.
    params = real.params()
    g_real, _ = real.grads((1.0 - real.prob) / batch)
    neural.sgd_update(params, g_real, config.learning_rate, ascent=True)
    for fp in fake_passes:
        g_fake, _ = fp.grads(-fp.prob / batch)
        neural.sgd_update(params, g_fake, config.learning_rate, ascent=True)
    return value


def generator_step(gen: Generator, disc: Discriminator, c: np.ndarray,
                   config: GanConfig, rng: np.random.Generator) -> float:
    """One non-saturating ascent step on mean log D(G(z|c)|c)."""
    z = rng.standard_normal((c.shape[0], gen.noise_dim))
    gpass = _GenPass(gen, z, c, config.dropout, rng)
    dpass = _DiscPass(disc, c, gpass.out, config.dropout, rng)
    value = float(_log_sigmoid(dpass.logit).mean())
    _check_finite(value)
    _, d_v = dpass.grads((1.0 - dpass.prob) / c.shape[0])
    grads = gpass.grads(d_v)
    neural.sgd_update(gpass.params(), grads, config.learning_rate, ascent=True)
    return value


def _batches(count: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(count)
    for start in range(0, count, batch_size):
        yield order[start : start + batch_size]


def train_examgan(
    data: list[TrainingInstance],
    config: GanConfig,
    seed: int,
    epoch_callback=None,
) -> tuple[Generator, Discriminator, list[tuple[float, float]]]:
    """Alternating adversarial training over (condition, script-vector)
    instances.

    Per minibatch the discriminator ascends its objective until the inner
    step cap or a relative-change convergence test, then the generator
    takes one ascent step. Returns the models and the per-epoch
    (V_D, V_G) trace. Fully deterministic for a fixed seed.
    """
    if not data:
        raise ValueError("no training instances")
    cond_dim = data[0].condition.values.size
    out_dim = data[0].v_e.size
    rng = np.random.default_rng(seed)
    gen = init_generator(rng, cond_dim, out_dim, config)
    disc = init_discriminator(rng, cond_dim, out_dim, config)

    conditions = np.array([inst.condition.values for inst in data])
    vectors = np.array([inst.v_e for inst in data], dtype=float)

    trace: list[tuple[float, float]] = []
    for epoch in range(config.epochs):
        d_values, g_values = [], []
        for batch in _batches(len(data), config.batch_size, rng):
            c = conditions[batch]
            v_real = vectors[batch]
            prev = None
            for _ in range(config.d_steps_per_g_step):
                z = rng.standard_normal((c.shape[0], gen.noise_dim))
                v_fake = _GenPass(gen, z, c, config.dropout, rng).out
                value = discriminator_step(disc, c, v_real, v_fake, config, rng)
                d_values.append(value)
                if prev is not None and abs(value - prev) <= config.d_tol * max(1.0, abs(prev)):
                    break
                prev = value
            g_values.append(generator_step(gen, disc, c, config, rng))
        trace.append((float(np.mean(d_values)), float(np.mean(g_values))))
        if epoch_callback is not None:
            epoch_callback(epoch, gen, disc)
    return gen, disc, trace


def top_n_positions(values: np.ndarray, ids: np.ndarray, n: int) -> np.ndarray:
    """Positions of the n largest values; ties broken by ascending id."""
    if n > values.size:
        raise ValueError(f"cannot select {n} of {values.size} questions")
    order = np.lexsort((ids, -values))
    return order[:n]


def generate_script(
    gen: Generator,
    condition: Condition,
    n: int,
    seed: int,
    course: Course | None = None,
) -> ExamScript:
    """Extract a script: one noise draw, then the top-n questions by
    generator score. Without a course, bank positions double as ids."""
    z = np.random.default_rng(seed).standard_normal(gen.noise_dim)
    values = gen_forward(gen, z, condition)
    ids = (
        np.array([q.id for q in course.qub])
        if course is not None
        else np.arange(values.size)
    )
    chosen = top_n_positions(values, ids, n)
    return ExamScript(tuple(int(ids[p]) for p in chosen))


def save_gan(path: str | Path, gen: Generator, disc: Discriminator,
             meta: dict | None = None) -> None:
    arrays = {**gen.arrays(), **disc.arrays()}
    neural.save_arrays(path, arrays, meta={"kind": "gan", "noise_dim": gen.noise_dim,
                                           **(meta or {})})


def load_gan(path: str | Path) -> tuple[Generator, Discriminator, dict]:
    arrays, meta = neural.load_arrays(path)
    if meta.get("kind") != "gan":
        raise ValueError(f"{path}: not a script-generator checkpoint")
    noise_dim = int(meta["noise_dim"])
    return Generator.from_arrays(arrays, noise_dim), Discriminator.from_arrays(arrays), meta
