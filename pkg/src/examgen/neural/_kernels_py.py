"""Pure-numpy LSTM sequence kernels (fallback for the compiled extension).

Weight layout: w has shape (4H, D+H) with gate rows packed in the order
input, forget, output, candidate; b has shape (4H,). Gate activations are
sigmoid except the candidate, which is tanh.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_seq_forward(w, b, x, h0, c0):
    """Run the LSTM over a whole sequence.

    x: (T, D); h0, c0: (H,). Returns (hs, cs, gates) with hs/cs of shape
    (T, H) and gates (T, 4H) holding post-activation gate values.
    """
    T = x.shape[0]
    H = h0.shape[0]
    hs = np.empty((T, H))
    cs = np.empty((T, H))
    gates = np.empty((T, 4 * H))
    h, c = h0, c0
    for t in range(T):
        z = w @ np.concatenate([x[t], h]) + b
        i = _sigmoid(z[:H])
        f = _sigmoid(z[H : 2 * H])
        o = _sigmoid(z[2 * H : 3 * H])
        g = np.tanh(z[3 * H :])
        c = f * c + i * g
        h = o * np.tanh(c)
        hs[t] = h
        cs[t] = c
        gates[t, :H] = i
        gates[t, H : 2 * H] = f
        gates[t, 2 * H : 3 * H] = o
        gates[t, 3 * H :] = g
    return hs, cs, gates


def lstm_seq_backward(w, x, hs, cs, gates, dh, h0, c0):
    """Backpropagate through time.

    dh: (T, H) upstream gradient on each step's hidden state. Returns
    (dw, db, dx, dh0, dc0).
    """
    T, D = x.shape
    H = h0.shape[0]
    dw = np.zeros_like(w)
    db = np.zeros(4 * H)
    dx = np.zeros_like(x)
    dh_rec = np.zeros(H)
    dc_rec = np.zeros(H)
    for t in range(T - 1, -1, -1):
        i = gates[t, :H]
        f = gates[t, H : 2 * H]
        o = gates[t, 2 * H : 3 * H]
        g = gates[t, 3 * H :]
        c_prev = cs[t - 1] if t > 0 else c0
        h_prev = hs[t - 1] if t > 0 else h0
        tc = np.tanh(cs[t])

        dh_t = dh[t] + dh_rec
        do = dh_t * tc
        dc = dh_t * o * (1.0 - tc * tc) + dc_rec
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_rec = dc * f

        dz = np.concatenate(
            [di * i * (1.0 - i), df * f * (1.0 - f), do * o * (1.0 - o), dg * (1.0 - g * g)]
        )
        xh = np.concatenate([x[t], h_prev])
        dw += np.outer(dz, xh)
        db += dz
        dxh = w.T @ dz
        dx[t] = dxh[:D]
        dh_rec = dxh[D:]
    return dw, db, dx, dh_rec, dc_rec
