# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled recurrence kernels; contract identical to ``_kernels_py``."""
import numpy as np
from libc.math cimport exp, tanh

cdef enum:
    VANILLA = 0
    GRU = 1
    LSTM = 2


cdef inline double _sig(double x) nogil:
    return 1.0 / (1.0 + exp(-x))


def rnn_forward(int kind, double[:, ::1] xproj, double[:, ::1] Wh, double[::1] h0, double[::1] c0):
    cdef Py_ssize_t n = xproj.shape[0], gh = xproj.shape[1], H = Wh.shape[1]
    cdef Py_ssize_t t, k, j
    hs_a = np.empty((n, H))
    cs_a = np.zeros((n, H)) if kind == LSTM else np.zeros((0, H))
    gates_a = np.empty((n, gh))
    aux_a = np.empty((n, H)) if kind == GRU else np.zeros((0, H))
    cdef double[:, ::1] hs = hs_a, cs = cs_a, gates = gates_a, aux = aux_a
    cdef double[::1] h = np.array(h0, dtype=np.float64)
    cdef double[::1] c = np.array(c0, dtype=np.float64)
    cdef double[::1] rec = np.empty(gh)
    cdef double acc, r, z, cand, ig, fg, gg, og
    with nogil:
        for t in range(n):
            for k in range(gh):
                acc = 0.0
                for j in range(H):
                    acc = acc + Wh[k, j] * h[j]
                rec[k] = acc
            if kind == VANILLA:
                for k in range(H):
                    h[k] = tanh(xproj[t, k] + rec[k])
                    gates[t, k] = h[k]
            elif kind == GRU:
                for k in range(H):
                    r = _sig(xproj[t, k] + rec[k])
                    z = _sig(xproj[t, H + k] + rec[H + k])
                    cand = tanh(xproj[t, 2 * H + k] + r * rec[2 * H + k])
                    gates[t, k] = r
                    gates[t, H + k] = z
                    gates[t, 2 * H + k] = cand
                    aux[t, k] = rec[2 * H + k]
                    h[k] = (1.0 - z) * h[k] + z * cand
            else:
                for k in range(H):
                    ig = _sig(xproj[t, k] + rec[k])
                    fg = _sig(xproj[t, H + k] + rec[H + k])
                    gg = tanh(xproj[t, 2 * H + k] + rec[2 * H + k])
                    og = _sig(xproj[t, 3 * H + k] + rec[3 * H + k])
                    c[k] = fg * c[k] + ig * gg
                    h[k] = og * tanh(c[k])
                    gates[t, k] = ig
                    gates[t, H + k] = fg
                    gates[t, 2 * H + k] = gg
                    gates[t, 3 * H + k] = og
                    cs[t, k] = c[k]
            for k in range(H):
                hs[t, k] = h[k]
    return hs_a, cs_a, gates_a, aux_a


def rnn_backward(int kind, double[:, ::1] dhs, double[:, ::1] hs, double[:, ::1] cs,
                 double[:, ::1] gates, double[:, ::1] aux, double[:, ::1] Wh,
                 double[::1] h0, double[::1] c0, Py_ssize_t segment):
    cdef Py_ssize_t n = hs.shape[0], H = hs.shape[1], gh = Wh.shape[0]
    cdef Py_ssize_t t, k, j
    dx_a = np.zeros((n, gh))
    dWh_a = np.zeros((gh, H))
    cdef double[:, ::1] dx = dx_a, dWh = dWh_a
    cdef double[::1] dh = np.zeros(H), dh_next = np.zeros(H), dc_next = np.zeros(H)
    cdef double[::1] drec = np.zeros(gh), hp = np.zeros(H), cp = np.zeros(H)
    cdef double r, z, cand, dan, hval, ig, fg, gg, og, tc, dc, acc
    with nogil:
        for t in range(n - 1, -1, -1):
            for k in range(H):
                hp[k] = hs[t - 1, k] if t > 0 else h0[k]
                dh[k] = dhs[t, k] + dh_next[k]
            if kind == VANILLA:
                for k in range(H):
                    hval = gates[t, k]
                    drec[k] = dh[k] * (1.0 - hval * hval)
                    dx[t, k] = drec[k]
                for k in range(H):
                    dh_next[k] = 0.0
            elif kind == GRU:
                for k in range(H):
                    r = gates[t, k]
                    z = gates[t, H + k]
                    cand = gates[t, 2 * H + k]
                    dan = dh[k] * z * (1.0 - cand * cand)
                    drec[k] = dan * aux[t, k] * r * (1.0 - r)
                    drec[H + k] = dh[k] * (cand - hp[k]) * z * (1.0 - z)
                    drec[2 * H + k] = dan * r
                    dx[t, k] = drec[k]
                    dx[t, H + k] = drec[H + k]
                    dx[t, 2 * H + k] = dan
                    dh_next[k] = dh[k] * (1.0 - z)
            else:
                for k in range(H):
                    cp[k] = cs[t - 1, k] if t > 0 else c0[k]
                for k in range(H):
                    ig = gates[t, k]
                    fg = gates[t, H + k]
                    gg = gates[t, 2 * H + k]
                    og = gates[t, 3 * H + k]
                    tc = tanh(cs[t, k])
                    dc = dc_next[k] + dh[k] * og * (1.0 - tc * tc)
                    drec[k] = dc * gg * ig * (1.0 - ig)
                    drec[H + k] = dc * cp[k] * fg * (1.0 - fg)
                    drec[2 * H + k] = dc * ig * (1.0 - gg * gg)
                    drec[3 * H + k] = dh[k] * tc * og * (1.0 - og)
                    dc_next[k] = dc * fg
                    dh_next[k] = 0.0
                for k in range(gh):
                    dx[t, k] = drec[k]
            for k in range(gh):
                for j in range(H):
                    dWh[k, j] += drec[k] * hp[j]
            for j in range(H):
                acc = 0.0
                for k in range(gh):
                    acc = acc + Wh[k, j] * drec[k]
                dh_next[j] += acc
            if t % segment == 0:
                for k in range(H):
                    dh_next[k] = 0.0
                    dc_next[k] = 0.0
    return dx_a, dWh_a
