"""NumPy reference implementation of the LSTM sequence kernels.

Weight layout is a single fused float64 matrix of shape
``(1 + input_dim + hidden_dim, 4 * hidden_dim)``: row 0 is the bias, the next
``input_dim`` rows multiply the step input and the remaining rows multiply
the previous hidden state.  Columns come in four ``hidden_dim``-wide blocks
for the input, forget and output gates (sigmoid) and the candidate (tanh):

    a   = b + x @ Wx + h_prev @ Wh
    c_t = sigm(a_f) * c_prev + sigm(a_i) * tanh(a_g)
    h_t = sigm(a_o) * tanh(c_t)

Sequence kernels start from zero hidden and cell state.  The compiled
backend implements the same contracts; this module is the fallback and the
correctness reference.
"""

import numpy as np

BACKEND_NAME = "numpy"


def _sigmoid(z):
    # exp overflow for very negative z saturates to exactly 0.0, which is
    # the right answer; silence the spurious warning
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


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
    i = _sigmoid(a[:h])
    f = _sigmoid(a[h : 2 * h])
    o = _sigmoid(a[2 * h : 3 * h])
    g = np.tanh(a[3 * h :])
    c_cell = f * c_prev + i * g
    return o * np.tanh(c_cell), c_cell


def lstm_forward(wmat, xs):
    """Run the LSTM over ``xs`` (T, input_dim) from the zero state.

    Returns ``(hs, cs, gates)`` where ``hs``/``cs`` are the (T, hidden)
    hidden and cell states and ``gates`` the (T, 4*hidden) post-nonlinearity
    activations needed by :func:`lstm_backward`.
    """
    d, h = split_dims(wmat)
    steps = xs.shape[0]
    if xs.shape != (steps, d):
        raise ValueError("lstm_forward: dimension mismatch")
    hs = np.empty((steps, h))
    cs = np.empty((steps, h))
    gates = np.empty((steps, 4 * h))
    h_prev = np.zeros(h)
    c_prev = np.zeros(h)
    wh = wmat[1 + d :]
    # input contribution for every step in one GEMM; only the recurrence
    # stays sequential
    xin = xs @ wmat[1 : 1 + d] + wmat[0]
    for t in range(steps):
        a = xin[t] + h_prev @ wh
        gi = _sigmoid(a[:h])
        gf = _sigmoid(a[h : 2 * h])
        go = _sigmoid(a[2 * h : 3 * h])
        gg = np.tanh(a[3 * h :])
        c_prev = gf * c_prev + gi * gg
        h_prev = go * np.tanh(c_prev)
        gates[t, :h] = gi
        gates[t, h : 2 * h] = gf
        gates[t, 2 * h : 3 * h] = go
        gates[t, 3 * h :] = gg
        cs[t] = c_prev
        hs[t] = h_prev
    return hs, cs, gates


def lstm_backward(wmat, xs, hs, cs, gates, d_hs):
    """Backpropagate through a recorded forward pass.

    ``d_hs`` holds the loss gradient w.r.t. every step's hidden output.
    Returns ``(d_wmat, d_xs)``.
    """
    d, h = split_dims(wmat)
    steps = xs.shape[0]
    d_wmat = np.zeros_like(wmat)
    dh_next = np.zeros(h)
    dc_next = np.zeros(h)
    wh = wmat[1 + d :]
    # the dh/dc chain is inherently sequential; collect every step's
    # pre-activation gradient and do the weight/input GEMMs once at the end
    das = np.empty((steps, 4 * h))
    for t in range(steps - 1, -1, -1):
        gi = gates[t, :h]
        gf = gates[t, h : 2 * h]
        go = gates[t, 2 * h : 3 * h]
        gg = gates[t, 3 * h :]
        c_prev = cs[t - 1] if t > 0 else np.zeros(h)
        tc = np.tanh(cs[t])
        dh = d_hs[t] + dh_next
        dc = dc_next + dh * go * (1.0 - tc * tc)
        da = das[t]
        da[:h] = dc * gg * gi * (1.0 - gi)
        da[h : 2 * h] = dc * c_prev * gf * (1.0 - gf)
        da[2 * h : 3 * h] = dh * tc * go * (1.0 - go)
        da[3 * h :] = dc * gi * (1.0 - gg * gg)
        dh_next = wh @ da
        dc_next = dc * gf
    d_wmat[0] = das.sum(axis=0)
    d_wmat[1 : 1 + d] = xs.T @ das
    if steps > 1:
        d_wmat[1 + d :] = hs[:-1].T @ das[1:]
    d_xs = das @ wmat[1 : 1 + d].T
    return d_wmat, d_xs
