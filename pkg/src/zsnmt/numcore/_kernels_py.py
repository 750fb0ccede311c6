"""Pure-numpy LSTM recurrence kernels.

Reference implementation of the hot loop; the Cython module ``_kernels``
exposes the same two functions with the same signatures and is preferred
at import time when it has been built.

Layout conventions shared by both backends:

* all arrays are time-major, C-contiguous, float32 or float64;
* gate blocks along the last axis of a ``4H`` array are ``[i, f, g, o]``;
* ``mask`` is a ``(T, B)`` uint8 array; where it is zero the state is carried
  through unchanged, which lets right-padded batches run in either direction.
"""

import numpy as np


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_forward(xw, w_h, h0, c0, mask, reverse):
    """Run one LSTM layer over a sequence.

    ``xw`` holds the input projections ``x_t @ W_x + b`` of shape (T, B, 4H).
    Returns ``(hs, cs, gates, tcs)`` where ``hs``/``cs`` are the carried
    states after each step, ``gates`` the activated gates and ``tcs`` the
    ``tanh`` of the candidate cell, all indexed by time.
    """
    T, B, G = xw.shape
    H = G // 4
    dtype = xw.dtype
    hs = np.empty((T, B, H), dtype=dtype)
    cs = np.empty((T, B, H), dtype=dtype)
    gates = np.empty((T, B, G), dtype=dtype)
    tcs = np.empty((T, B, H), dtype=dtype)
    h, c = h0, c0
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        z = xw[t] + h @ w_h
        act = gates[t]
        act[:, : 2 * H] = _sigmoid(z[:, : 2 * H])
        act[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
        act[:, 3 * H :] = _sigmoid(z[:, 3 * H :])
        i = act[:, :H]
        f = act[:, H : 2 * H]
        g = act[:, 2 * H : 3 * H]
        o = act[:, 3 * H :]
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        tcs[t] = tc
        m = mask[t].astype(bool)[:, None]
        c = np.where(m, c_new, c)
        h = np.where(m, o * tc, h)
        hs[t] = h
        cs[t] = c
    return hs, cs, gates, tcs


def lstm_backward(dhs, dh_last, dc_last, w_h, h0, c0, mask, hs, cs, gates, tcs, reverse):
    """Backward sweep matching :func:`lstm_forward`.

    ``dhs`` is the gradient w.r.t. every per-step output, ``dh_last`` and
    ``dc_last`` the gradients w.r.t. the final carried state.  Returns
    ``(dxw, dw_h, dh0, dc0)``.
    """
    T, B, G = gates.shape
    H = G // 4
    dtype = gates.dtype
    dxw = np.empty((T, B, G), dtype=dtype)
    dw_h = np.zeros_like(w_h)
    dh = dh_last.copy()
    dc = dc_last.copy()
    # processing order of the forward pass, walked backwards
    steps = list(range(T - 1, -1, -1)) if reverse else list(range(T))
    for k in range(T - 1, -1, -1):
        t = steps[k]
        if k > 0:
            h_prev = hs[steps[k - 1]]
            c_prev = cs[steps[k - 1]]
        else:
            h_prev, c_prev = h0, c0
        dh = dh + dhs[t]
        m = mask[t].astype(bool)[:, None]
        act = gates[t]
        i = act[:, :H]
        f = act[:, H : 2 * H]
        g = act[:, 2 * H : 3 * H]
        o = act[:, 3 * H :]
        tc = tcs[t]
        dh_new = np.where(m, dh, 0)
        dc_new = np.where(m, dc, 0) + dh_new * o * (1 - tc * tc)
        dz = dxw[t]
        dz[:, :H] = dc_new * g * i * (1 - i)
        dz[:, H : 2 * H] = dc_new * c_prev * f * (1 - f)
        dz[:, 2 * H : 3 * H] = dc_new * i * (1 - g * g)
        dz[:, 3 * H :] = dh_new * tc * o * (1 - o)
        dw_h += h_prev.T @ dz
        dh = np.where(m, 0, dh) + dz @ w_h.T
        dc = np.where(m, 0, dc) + dc_new * f
    return dxw, dw_h, dh, dc
