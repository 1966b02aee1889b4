"""Minimal neural core: dense layers, an LSTM cell with full
backpropagation through time, plain SGD, inverted dropout, and a
text checkpoint format with bit-exact round-trips.

Sequence-level LSTM work is delegated to the kernel backend (compiled
extension when built, numpy fallback otherwise); everything here is
sized for the small networks this project trains.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from examgen.neural._backend import backend_name, kernels

__all__ = [
    "ACTIVATIONS",
    "DenseLayer",
    "LstmCell",
    "SgdConfig",
    "backend_name",
    "binary_cross_entropy",
    "clip_global_norm",
    "dense_backward",
    "dense_forward",
    "dropout_mask",
    "init_dense",
    "init_lstm",
    "load_arrays",
    "lstm_bptt",
    "lstm_step",
    "lstm_step_backward",
    "save_arrays",
    "sgd_update",
]

_P_FLOOR = 1e-12


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


ACTIVATIONS = {
    "sigmoid": sigmoid,
    "tanh": np.tanh,
    "relu": lambda x: np.maximum(x, 0.0),
    "identity": lambda x: x,
}

# Derivatives expressed in terms of the activation output.
_DERIVATIVES = {
    "sigmoid": lambda y: y * (1.0 - y),
    "tanh": lambda y: 1.0 - y * y,
    "relu": lambda y: (y > 0.0).astype(float),
    "identity": lambda y: np.ones_like(y),
}


@dataclass
class DenseLayer:
    """Fully connected layer y = act(w @ x + b); w has shape (out, in)."""

    w: np.ndarray
    b: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.b.shape != (self.w.shape[0],):
            raise ValueError("bias length must equal output dim")

    @property
    def n_in(self) -> int:
        return self.w.shape[1]

    @property
    def n_out(self) -> int:
        return self.w.shape[0]


@dataclass
class LstmCell:
    """LSTM cell with gate weights packed row-wise as [input, forget,
    output, candidate]: w has shape (4H, D+H), b has shape (4H,)."""

    w: np.ndarray
    b: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.w.shape[0] // 4

    @property
    def input_size(self) -> int:
        return self.w.shape[1] - self.hidden_size


@dataclass
class SgdConfig:
    learning_rate: float = 0.001
    dropout_rate: float = 0.3

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


def init_dense(rng: np.random.Generator, n_in: int, n_out: int, activation: str) -> DenseLayer:
    """Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(n_in)
    return DenseLayer(
        w=rng.uniform(-bound, bound, size=(n_out, n_in)),
        b=rng.uniform(-bound, bound, size=n_out),
        activation=activation,
    )


def init_lstm(rng: np.random.Generator, input_size: int, hidden_size: int) -> LstmCell:
    bound = 1.0 / np.sqrt(input_size + hidden_size)
    return LstmCell(
        w=rng.uniform(-bound, bound, size=(4 * hidden_size, input_size + hidden_size)),
        b=rng.uniform(-bound, bound, size=4 * hidden_size),
    )


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    """activation(w @ x + b); x may be a vector or a (batch, in) matrix."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != layer.n_in:
        raise ValueError(f"input dim {x.shape[-1]} != layer input dim {layer.n_in}")
    return ACTIVATIONS[layer.activation](x @ layer.w.T + layer.b)


def dense_backward(
    layer: DenseLayer, x: np.ndarray, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the forward map: returns (dx, dw, db).

    Batched inputs sum parameter gradients over the batch.
    """
    x = np.asarray(x, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    if x.shape[-1] != layer.n_in or upstream.shape[-1] != layer.n_out:
        raise ValueError("shape mismatch in dense_backward")
    y = dense_forward(layer, x)
    dz = upstream * _DERIVATIVES[layer.activation](y)
    if x.ndim == 1:
        dw = np.outer(dz, x)
        db = dz.copy()
    else:
        dw = dz.T @ x
        db = dz.sum(axis=0)
    dx = dz @ layer.w
    return dx, dw, db


def lstm_step(
    cell: LstmCell, x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray
) -> tuple[np.ndarray, np.ndarray, dict]:
    """One LSTM step; returns (h, c, cache) with cache reusable by
    lstm_step_backward."""
    H = cell.hidden_size
    if x.shape != (cell.input_size,) or h_prev.shape != (H,) or c_prev.shape != (H,):
        raise ValueError("dimension mismatch in lstm_step")
    z = cell.w @ np.concatenate([x, h_prev]) + cell.b
    i = sigmoid(z[:H])
    f = sigmoid(z[H : 2 * H])
    o = sigmoid(z[2 * H : 3 * H])
    g = np.tanh(z[3 * H :])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    cache = {"x": x, "h_prev": h_prev, "c_prev": c_prev, "i": i, "f": f, "o": o, "g": g, "c": c}
    return h, c, cache


def lstm_step_backward(
    cell: LstmCell, cache: dict, dh: np.ndarray, dc: np.ndarray | None = None
) -> tuple[dict[str, np.ndarray], np.ndarray, np.ndarray, np.ndarray]:
    """Backward of one step: returns (param grads, dx, dh_prev, dc_prev)."""
    H = cell.hidden_size
    i, f, o, g, c = cache["i"], cache["f"], cache["o"], cache["g"], cache["c"]
    tc = np.tanh(c)
    do = dh * tc
    dcell = dh * o * (1.0 - tc * tc)
    if dc is not None:
        dcell = dcell + dc
    di = dcell * g
    dg = dcell * i
    df = dcell * cache["c_prev"]
    dc_prev = dcell * f
    dz = np.concatenate(
        [di * i * (1.0 - i), df * f * (1.0 - f), do * o * (1.0 - o), dg * (1.0 - g * g)]
    )
    xh = np.concatenate([cache["x"], cache["h_prev"]])
    grads = {"w": np.outer(dz, xh), "b": dz}
    dxh = cell.w.T @ dz
    return grads, dxh[: cell.input_size], dxh[cell.input_size :], dc_prev


def binary_cross_entropy(p: np.ndarray, label: np.ndarray) -> np.ndarray:
    p = np.clip(p, _P_FLOOR, 1.0 - _P_FLOOR)
    return -(label * np.log(p) + (1.0 - label) * np.log(1.0 - p))


def lstm_bptt(
    cell: LstmCell,
    inputs: np.ndarray,
    readout: DenseLayer,
    target_weights: np.ndarray,
    labels: np.ndarray,
    mask: np.ndarray,
    hidden_dropout: np.ndarray | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Masked BCE over a sequence, with gradients by backpropagation
    through time.

    At each step t the step prediction is target_weights[t] . y_t where
    y_t is the sigmoid readout of h_t; the loss is the sum over unmasked
    steps of the binary cross-entropy against labels[t]. An optional
    (T, H) inverted-dropout mask is applied to the hidden states on the
    readout path only (the recurrent path stays intact).
    """
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise ValueError("inputs must be a non-empty (T, D) array")
    if readout.activation != "sigmoid":
        raise ValueError("readout must use a sigmoid activation")
    H = cell.hidden_size
    inputs = np.ascontiguousarray(inputs, dtype=float)
    mask = np.asarray(mask, dtype=float)
    labels = np.asarray(labels, dtype=float)
    h0 = np.zeros(H)
    c0 = np.zeros(H)

    hs, cs, gates = kernels.lstm_seq_forward(cell.w, cell.b, inputs, h0, c0)
    hs_read = hs if hidden_dropout is None else hs * hidden_dropout
    y = sigmoid(hs_read @ readout.w.T + readout.b)  # (T, K)
    p = np.clip((y * target_weights).sum(axis=1), _P_FLOOR, 1.0 - _P_FLOOR)
    loss = float((mask * binary_cross_entropy(p, labels)).sum())
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite BPTT loss; inputs or parameters exploded")

    dp = mask * (p - labels) / (p * (1.0 - p))
    dy = dp[:, None] * target_weights
    dz_r = dy * y * (1.0 - y)
    d_readout_w = dz_r.T @ hs_read
    d_readout_b = dz_r.sum(axis=0)
    dh = dz_r @ readout.w
    if hidden_dropout is not None:
        dh = dh * hidden_dropout
    dh = np.ascontiguousarray(dh)

    dw, db, _, _, _ = kernels.lstm_seq_backward(
        cell.w, inputs, hs, cs, gates, dh, h0, c0
    )
    grads = {
        "cell_w": dw,
        "cell_b": db,
        "readout_w": d_readout_w,
        "readout_b": d_readout_b,
    }
    return loss, grads


def sgd_update(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    learning_rate: float,
    ascent: bool = False,
) -> dict[str, np.ndarray]:
    """In-place SGD step of magnitude learning_rate; the caller picks the
    direction (ascent=True climbs the objective)."""
    sign = 1.0 if ascent else -1.0
    for name, g in grads.items():
        params[name] += sign * learning_rate * g
    return params


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm;
    returns the pre-clip norm."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if total > max_norm and total > 0.0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    """Inverted-dropout multiplier: zeros with probability rate, survivors
    scaled by 1/(1-rate) so inference needs no rescaling. rate 0 is the
    identity."""
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Checkpoint arrays as self-describing JSON text. Floats are written
    with shortest round-trip repr, so load_arrays restores them bit-exactly."""
    payload = {
        "format": "examgen-checkpoint-v1",
        "meta": meta or {},
        "arrays": {
            name: {"shape": list(a.shape), "data": np.asarray(a, dtype=float).ravel().tolist()}
            for name, a in arrays.items()
        },
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != "examgen-checkpoint-v1":
        raise ValueError(f"{path}: not an examgen checkpoint")
    arrays = {
        name: np.array(entry["data"], dtype=float).reshape(entry["shape"])
        for name, entry in payload["arrays"].items()
    }
    return arrays, payload.get("meta", {})
