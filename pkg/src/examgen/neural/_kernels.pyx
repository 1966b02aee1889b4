# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled LSTM sequence kernels. Same contract as _kernels_py."""

from libc.math cimport exp, tanh

import numpy as np

BACKEND = "compiled"


cdef inline double _sigmoid(double x) noexcept nogil:
    return 1.0 / (1.0 + exp(-x))


def lstm_seq_forward(double[:, ::1] w, double[::1] b, double[:, ::1] x,
                     double[::1] h0, double[::1] c0):
    cdef Py_ssize_t T = x.shape[0]
    cdef Py_ssize_t D = x.shape[1]
    cdef Py_ssize_t H = h0.shape[0]
    hs_arr = np.empty((T, H))
    cs_arr = np.empty((T, H))
    gates_arr = np.empty((T, 4 * H))
    cdef double[:, ::1] hs = hs_arr
    cdef double[:, ::1] cs = cs_arr
    cdef double[:, ::1] gates = gates_arr
    z_arr = np.empty(4 * H)
    hp_arr = np.empty(H)
    cp_arr = np.empty(H)
    cdef double[::1] z = z_arr
    cdef double[::1] h_prev = hp_arr
    cdef double[::1] c_prev = cp_arr
    cdef Py_ssize_t t, r, j
    cdef double acc, i_g, f_g, o_g, g_g, c_new

    with nogil:
        for j in range(H):
            h_prev[j] = h0[j]
            c_prev[j] = c0[j]
        for t in range(T):
            for r in range(4 * H):
                acc = b[r]
                for j in range(D):
                    acc += w[r, j] * x[t, j]
                for j in range(H):
                    acc += w[r, D + j] * h_prev[j]
                z[r] = acc
            for j in range(H):
                i_g = _sigmoid(z[j])
                f_g = _sigmoid(z[H + j])
                o_g = _sigmoid(z[2 * H + j])
                g_g = tanh(z[3 * H + j])
                c_new = f_g * c_prev[j] + i_g * g_g
                cs[t, j] = c_new
                hs[t, j] = o_g * tanh(c_new)
                gates[t, j] = i_g
                gates[t, H + j] = f_g
                gates[t, 2 * H + j] = o_g
                gates[t, 3 * H + j] = g_g
            for j in range(H):
                h_prev[j] = hs[t, j]
                c_prev[j] = cs[t, j]
    return hs_arr, cs_arr, gates_arr


def lstm_seq_backward(double[:, ::1] w, double[:, ::1] x, double[:, ::1] hs,
                      double[:, ::1] cs, double[:, ::1] gates, double[:, ::1] dh,
                      double[::1] h0, double[::1] c0):
    cdef Py_ssize_t T = x.shape[0]
    cdef Py_ssize_t D = x.shape[1]
    cdef Py_ssize_t H = h0.shape[0]
    dw_arr = np.zeros((4 * H, D + H))
    db_arr = np.zeros(4 * H)
    dx_arr = np.zeros((T, D))
    cdef double[:, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef double[:, ::1] dx = dx_arr
    dz_arr = np.empty(4 * H)
    dhr_arr = np.zeros(H)
    dcr_arr = np.zeros(H)
    dhn_arr = np.empty(H)
    cdef double[::1] dz = dz_arr
    cdef double[::1] dh_rec = dhr_arr
    cdef double[::1] dc_rec = dcr_arr
    cdef double[::1] dh_next = dhn_arr
    cdef Py_ssize_t t, r, j
    cdef double i_g, f_g, o_g, g_g, c_prev_j, h_prev_j, tc
    cdef double dh_t, do_, dc, di, dg, df, v

    with nogil:
        for t in range(T - 1, -1, -1):
            for j in range(H):
                i_g = gates[t, j]
                f_g = gates[t, H + j]
                o_g = gates[t, 2 * H + j]
                g_g = gates[t, 3 * H + j]
                c_prev_j = cs[t - 1, j] if t > 0 else c0[j]
                tc = tanh(cs[t, j])

                dh_t = dh[t, j] + dh_rec[j]
                do_ = dh_t * tc
                dc = dh_t * o_g * (1.0 - tc * tc) + dc_rec[j]
                di = dc * g_g
                dg = dc * i_g
                df = dc * c_prev_j
                dc_rec[j] = dc * f_g

                dz[j] = di * i_g * (1.0 - i_g)
                dz[H + j] = df * f_g * (1.0 - f_g)
                dz[2 * H + j] = do_ * o_g * (1.0 - o_g)
                dz[3 * H + j] = dg * (1.0 - g_g * g_g)

            for r in range(4 * H):
                v = dz[r]
                db[r] += v
                for j in range(D):
                    dw[r, j] += v * x[t, j]
                if t > 0:
                    for j in range(H):
                        dw[r, D + j] += v * hs[t - 1, j]
                else:
                    for j in range(H):
                        dw[r, D + j] += v * h0[j]

            for j in range(D):
                v = 0.0
                for r in range(4 * H):
                    v += w[r, j] * dz[r]
                dx[t, j] = v
            for j in range(H):
                v = 0.0
                for r in range(4 * H):
                    v += w[r, D + j] * dz[r]
                dh_next[j] = v
            for j in range(H):
                dh_rec[j] = dh_next[j]
    return dw_arr, db_arr, dx_arr, dhr_arr, dcr_arr
