# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled LSTM recurrence kernels (float32 and float64).

Same contract as ``_kernels_py``; see that module for layout conventions.
"""

import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport exp, expf, tanh, tanhf
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemm, sgemm

cnp.import_array()


cdef inline void _gemm(char ta, char tb, int m, int n, int k, floating alpha,
                       floating* a, int lda, floating* b, int ldb,
                       floating beta, floating* c, int ldc) noexcept nogil:
    # column-major BLAS call; callers pass row-major operands swapped
    if floating is float:
        sgemm(&ta, &tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)
    else:
        dgemm(&ta, &tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


cdef inline floating _sig(floating x) noexcept nogil:
    # clamp keeps exp finite; the kernel is built with -ffast-math
    x = min(max(x, -40.0), 40.0)
    if floating is float:
        return 1.0 / (1.0 + expf(-x))
    else:
        return 1.0 / (1.0 + exp(-x))


cdef inline floating _tanh(floating x) noexcept nogil:
    if floating is float:
        return tanhf(x)
    else:
        return tanh(x)


cdef inline void _activate(floating* z, floating* act, int B, int H) noexcept nogil:
    # gate blocks [i, f, g, o]: sigmoid, sigmoid, tanh, sigmoid
    cdef int b, j
    cdef int G = 4 * H
    cdef floating* zr
    cdef floating* ar
    for b in range(B):
        zr = z + b * G
        ar = act + b * G
        for j in range(2 * H):
            ar[j] = _sig(zr[j])
        for j in range(2 * H, 3 * H):
            ar[j] = _tanh(zr[j])
        for j in range(3 * H, G):
            ar[j] = _sig(zr[j])


cdef inline void _cell(floating* act, floating* c_prev, floating* c_new,
                       floating* h_new, floating* tc, int H) noexcept nogil:
    cdef int j
    cdef floating cn
    for j in range(H):
        cn = act[H + j] * c_prev[j] + act[j] * act[2 * H + j]
        c_new[j] = cn
        tc[j] = _tanh(cn)
    for j in range(H):
        h_new[j] = act[3 * H + j] * tc[j]


cdef void _forward(floating[:, :, ::1] xw, floating[:, ::1] w_h,
                   floating[:, ::1] h0, floating[:, ::1] c0,
                   const unsigned char[:, ::1] mask, bint reverse,
                   floating[:, :, ::1] hs, floating[:, :, ::1] cs,
                   floating[:, :, ::1] gates, floating[:, :, ::1] tcs,
                   floating[:, ::1] z) noexcept nogil:
    cdef int T = xw.shape[0], B = xw.shape[1], G = xw.shape[2]
    cdef int H = G // 4
    cdef int k, t, b
    cdef floating* h_prev
    cdef floating* c_prev
    for k in range(T):
        t = T - 1 - k if reverse else k
        if k == 0:
            h_prev = &h0[0, 0]
            c_prev = &c0[0, 0]
        else:
            h_prev = &hs[t + 1 if reverse else t - 1, 0, 0]
            c_prev = &cs[t + 1 if reverse else t - 1, 0, 0]
        memcpy(&z[0, 0], &xw[t, 0, 0], B * G * sizeof(floating))
        # z (B x G) += h_prev (B x H) @ w_h (H x G)
        _gemm(c'N', c'N', G, B, H, 1.0, &w_h[0, 0], G, h_prev, H, 1.0, &z[0, 0], G)
        _activate(&z[0, 0], &gates[t, 0, 0], B, H)
        for b in range(B):
            _cell(&gates[t, b, 0], c_prev + b * H, &cs[t, b, 0], &hs[t, b, 0], &tcs[t, b, 0], H)
            if not mask[t, b]:
                memcpy(&cs[t, b, 0], c_prev + b * H, H * sizeof(floating))
                memcpy(&hs[t, b, 0], h_prev + b * H, H * sizeof(floating))


def lstm_forward(xw, w_h, h0, c0, mask, reverse):
    T, B, G = xw.shape
    H = G // 4
    dtype = xw.dtype
    hs = np.empty((T, B, H), dtype=dtype)
    cs = np.empty((T, B, H), dtype=dtype)
    gates = np.empty((T, B, G), dtype=dtype)
    tcs = np.empty((T, B, H), dtype=dtype)
    z = np.empty((B, G), dtype=dtype)
    xw = np.ascontiguousarray(xw)
    w_h = np.ascontiguousarray(w_h, dtype=dtype)
    h0 = np.ascontiguousarray(h0, dtype=dtype)
    c0 = np.ascontiguousarray(c0, dtype=dtype)
    mask = np.ascontiguousarray(mask, dtype=np.uint8)
    if T == 0:
        return hs, cs, gates, tcs
    if dtype == np.float32:
        _forward[float](xw, w_h, h0, c0, mask, reverse, hs, cs, gates, tcs, z)
    elif dtype == np.float64:
        _forward[double](xw, w_h, h0, c0, mask, reverse, hs, cs, gates, tcs, z)
    else:
        raise TypeError(f"unsupported dtype {dtype}")
    return hs, cs, gates, tcs


cdef inline void _cell_backward(floating* act, floating* tc, floating* c_prev,
                                floating* dh, floating* dc, floating* dz, int H) noexcept nogil:
    # dh holds the incoming gradient; dc is updated in place to d c_prev
    cdef int j
    cdef floating gi, gf, gg, go, t, dcn
    for j in range(H):
        gi = act[j]
        gf = act[H + j]
        gg = act[2 * H + j]
        go = act[3 * H + j]
        t = tc[j]
        dcn = dc[j] + dh[j] * go * (1 - t * t)
        dz[j] = dcn * gg * gi * (1 - gi)
        dz[H + j] = dcn * c_prev[j] * gf * (1 - gf)
        dz[2 * H + j] = dcn * gi * (1 - gg * gg)
        dz[3 * H + j] = dh[j] * t * go * (1 - go)
        dc[j] = dcn * gf


cdef void _backward(floating[:, :, ::1] dhs, floating[:, ::1] w_h,
                    floating[:, ::1] h0, floating[:, ::1] c0,
                    const unsigned char[:, ::1] mask, bint reverse,
                    floating[:, :, ::1] hs, floating[:, :, ::1] cs,
                    floating[:, :, ::1] gates, floating[:, :, ::1] tcs,
                    floating[:, :, ::1] dxw, floating[:, ::1] dw_h,
                    floating[:, ::1] dh, floating[:, ::1] dc,
                    floating[:, ::1] dh_next) noexcept nogil:
    cdef int T = gates.shape[0], B = gates.shape[1], G = gates.shape[2]
    cdef int H = G // 4
    cdef int k, t, b, j
    cdef floating* h_prev
    cdef floating* c_prev
    for k in range(T - 1, -1, -1):
        t = T - 1 - k if reverse else k
        if k == 0:
            h_prev = &h0[0, 0]
            c_prev = &c0[0, 0]
        else:
            h_prev = &hs[t + 1 if reverse else t - 1, 0, 0]
            c_prev = &cs[t + 1 if reverse else t - 1, 0, 0]
        for b in range(B):
            for j in range(H):
                dh[b, j] += dhs[t, b, j]
            if mask[t, b]:
                _cell_backward(&gates[t, b, 0], &tcs[t, b, 0], c_prev + b * H,
                               &dh[b, 0], &dc[b, 0], &dxw[t, b, 0], H)
                for j in range(H):
                    dh_next[b, j] = 0
            else:
                for j in range(G):
                    dxw[t, b, j] = 0
                for j in range(H):
                    dh_next[b, j] = dh[b, j]
        # dw_h (H x G) += h_prev^T (H x B) @ dz (B x G)
        _gemm(c'N', c'T', G, H, B, 1.0, &dxw[t, 0, 0], G, h_prev, H, 1.0, &dw_h[0, 0], G)
        # dh (B x H) = dz (B x G) @ w_h^T (G x H) + carried part
        _gemm(c'T', c'N', H, B, G, 1.0, &w_h[0, 0], G, &dxw[t, 0, 0], G, 0.0, &dh[0, 0], H)
        for b in range(B):
            for j in range(H):
                dh[b, j] += dh_next[b, j]


def lstm_backward(dhs, dh_last, dc_last, w_h, h0, c0, mask, hs, cs, gates, tcs, reverse):
    T, B, G = gates.shape
    H = G // 4
    dtype = gates.dtype
    dxw = np.empty((T, B, G), dtype=dtype)
    dw_h = np.zeros((H, G), dtype=dtype)
    dh = np.array(dh_last, dtype=dtype, order="C", copy=True)
    dc = np.array(dc_last, dtype=dtype, order="C", copy=True)
    dh_next = np.empty((B, H), dtype=dtype)
    dhs = np.ascontiguousarray(dhs, dtype=dtype)
    w_h = np.ascontiguousarray(w_h, dtype=dtype)
    h0 = np.ascontiguousarray(h0, dtype=dtype)
    c0 = np.ascontiguousarray(c0, dtype=dtype)
    mask = np.ascontiguousarray(mask, dtype=np.uint8)
    if T == 0:
        return dxw, dw_h, dh, dc
    if dtype == np.float32:
        _backward[float](dhs, w_h, h0, c0, mask, reverse, hs, cs, gates, tcs,
                         dxw, dw_h, dh, dc, dh_next)
    elif dtype == np.float64:
        _backward[double](dhs, w_h, h0, c0, mask, reverse, hs, cs, gates, tcs,
                          dxw, dw_h, dh, dc, dh_next)
    else:
        raise TypeError(f"unsupported dtype {dtype}")
    return dxw, dw_h, dh, dc
