# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled LSTM sequence kernels.

Same contracts and fused-weight layout as ``cfgdec.kernels.numpy_ref`` and
the same GEMM batching strategy (input projections and weight gradients go
through BLAS); what the C side fuses is the per-step gate algebra and the
sequential dh/dc recurrence, which in NumPy cost a dozen temporaries per
step.
"""

import numpy as np

from libc.math cimport exp, tanh

BACKEND_NAME = "compiled"


cdef inline double _sig(double z) noexcept nogil:
    return 1.0 / (1.0 + exp(-z))


def split_dims(wmat):
    rows, four_h = wmat.shape
    hidden = four_h // 4
    input_dim = rows - 1 - hidden
    if four_h != 4 * hidden or input_dim < 1:
        raise ValueError(f"bad fused weight shape {wmat.shape}")
    return input_dim, hidden


def lstm_step(wmat, x, h_prev, c_prev):
    """One LSTM step from an arbitrary state; returns (h, c_cell)."""
    d, h = split_dims(wmat)
    if x.shape != (d,) or h_prev.shape != (h,) or c_prev.shape != (h,):
        raise ValueError("lstm_step: dimension mismatch")
    a = wmat[0] + x @ wmat[1 : 1 + d] + h_prev @ wmat[1 + d :]
    h_out = np.empty(h)
    c_out = np.empty(h)
    _gates(np.ascontiguousarray(a), np.ascontiguousarray(c_prev), True,
           h_out, c_out, np.empty((1, 4 * h)), 0)
    return h_out, c_out


cdef void _gates(double[::1] a, double[::1] c_prev, bint has_prev,
                 double[::1] h_out, double[::1] c_out,
                 double[:, ::1] gates, Py_ssize_t t) noexcept nogil:
    """Nonlinearity + cell update for one step; records gate activations."""
    cdef Py_ssize_t h = h_out.shape[0]
    cdef Py_ssize_t k
    cdef double gi, gf, go, gg, cc
    for k in range(h):
        gi = _sig(a[k])
        gf = _sig(a[h + k])
        go = _sig(a[2 * h + k])
        gg = tanh(a[3 * h + k])
        cc = gi * gg
        if has_prev:
            cc += gf * c_prev[k]
        c_out[k] = cc
        h_out[k] = go * tanh(cc)
        gates[t, k] = gi
        gates[t, h + k] = gf
        gates[t, 2 * h + k] = go
        gates[t, 3 * h + k] = gg


def lstm_forward(wmat, xs):
    """Run the LSTM over ``xs`` (T, input_dim) from the zero state."""
    d, h = split_dims(wmat)
    steps = xs.shape[0]
    if xs.shape != (steps, d):
        raise ValueError("lstm_forward: dimension mismatch")
    hs = np.empty((steps, h))
    cs = np.empty((steps, h))
    gates = np.empty((steps, 4 * h))
    if not steps:
        return hs, cs, gates
    xin = np.ascontiguousarray(xs) @ wmat[1 : 1 + d]
    xin += wmat[0]
    wh = np.ascontiguousarray(wmat[1 + d :])
    a = np.empty(4 * h)
    for t in range(steps):
        if t:
            np.matmul(hs[t - 1], wh, out=a)
            a += xin[t]
        else:
            a[:] = xin[0]
        _gates(a, cs[t - 1] if t else a[:h], t > 0, hs[t], cs[t], gates, t)
    return hs, cs, gates


cdef void _da_step(double[:, ::1] gates, double[:, ::1] cs, double[:, ::1] d_hs,
                   double[::1] dh_next, double[::1] dc_next, double[::1] da,
                   Py_ssize_t t) noexcept nogil:
    """Gate pre-activation gradients for step ``t``; updates dc_next in place."""
    cdef Py_ssize_t h = dh_next.shape[0]
    cdef Py_ssize_t k
    cdef double gi, gf, go, gg, tc, dh, dc
    for k in range(h):
        gi = gates[t, k]
        gf = gates[t, h + k]
        go = gates[t, 2 * h + k]
        gg = gates[t, 3 * h + k]
        tc = tanh(cs[t, k])
        dh = d_hs[t, k] + dh_next[k]
        dc = dc_next[k] + dh * go * (1.0 - tc * tc)
        da[k] = dc * gg * gi * (1.0 - gi)
        da[h + k] = dc * cs[t - 1, k] * gf * (1.0 - gf) if t > 0 else 0.0
        da[2 * h + k] = dh * tc * go * (1.0 - go)
        da[3 * h + k] = dc * gi * (1.0 - gg * gg)
        dc_next[k] = dc * gf


def lstm_backward(wmat, xs, hs, cs, gates, d_hs):
    """Backpropagate through a recorded forward pass; returns (d_wmat, d_xs)."""
    d, h = split_dims(wmat)
    steps = xs.shape[0]
    d_wmat = np.zeros_like(wmat)
    if not steps:
        return d_wmat, np.empty_like(xs)
    xs = np.ascontiguousarray(xs)
    gates_c = np.ascontiguousarray(gates)
    cs_c = np.ascontiguousarray(cs)
    d_hs_c = np.ascontiguousarray(d_hs)
    wh = np.ascontiguousarray(wmat[1 + d :])
    das = np.empty((steps, 4 * h))
    dh_next = np.zeros(h)
    dc_next = np.zeros(h)
    for t in range(steps - 1, -1, -1):
        _da_step(gates_c, cs_c, d_hs_c, dh_next, dc_next, das[t], t)
        if t:
            np.matmul(wh, das[t], out=dh_next)
    d_wmat[0] = das.sum(axis=0)
    d_wmat[1 : 1 + d] = xs.T @ das
    if steps > 1:
        d_wmat[1 + d :] = hs[:-1].T @ das[1:]
    d_xs = das @ wmat[1 : 1 + d].T
    return d_wmat, d_xs
