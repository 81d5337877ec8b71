# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Contracts match ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline double _clip(double x) nogil:
    if x > 1.0:
        return 1.0
    if x < -1.0:
        return -1.0
    return x


def proximity_batch(vhat, prototypes, targets, center):
    cdef double[:, ::1] V = np.ascontiguousarray(vhat, dtype=np.float64)
    cdef double[:, ::1] P = np.ascontiguousarray(prototypes, dtype=np.float64)
    cdef long long[::1] T = np.ascontiguousarray(targets, dtype=np.int64)
    cdef double[::1] c = np.ascontiguousarray(center, dtype=np.float64)
    cdef Py_ssize_t n = V.shape[0], d = V.shape[1], C = P.shape[0]
    out_arr = np.empty((n, 3), dtype=np.float64)
    neg_arr = np.empty(n, dtype=np.int64)
    cdef double[:, ::1] out = out_arr
    cdef long long[::1] neg = neg_arr
    cdef Py_ssize_t i, j, k, best
    cdef double dot, cos_pos, cos_neg, cos_ui
    with nogil:
        for i in range(n):
            cos_pos = 0.0
            cos_neg = -2.0
            best = -1
            for j in range(C):
                dot = 0.0
                for k in range(d):
                    dot = dot + V[i, k] * P[j, k]
                dot = _clip(dot)
                if j == T[i]:
                    cos_pos = dot
                elif dot > cos_neg:
                    cos_neg = dot
                    best = j
            dot = 0.0
            for k in range(d):
                dot = dot + V[i, k] * c[k]
            cos_ui = _clip(dot)
            out[i, 0] = 1.0 - cos_pos
            out[i, 1] = 1.0 - cos_neg
            out[i, 2] = 1.0 - cos_ui
            neg[i] = best
    return out_arr, neg_arr


def spatial_conv_forward(pooled, kernel, double bias):
    cdef double[:, :, :, ::1] X = np.ascontiguousarray(pooled, dtype=np.float64)
    cdef double[:, :, ::1] K = np.ascontiguousarray(kernel, dtype=np.float64)
    cdef Py_ssize_t B = X.shape[0], Pn = X.shape[1], H = X.shape[2], W = X.shape[3]
    cdef Py_ssize_t ks = K.shape[2], r = ks // 2
    out_arr = np.empty((B, H, W), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, p, y, x, di, dj, yy, xx
    cdef double acc
    with nogil:
        for b in range(B):
            for y in range(H):
                for x in range(W):
                    acc = bias
                    for p in range(Pn):
                        for di in range(ks):
                            yy = y + di - r
                            if yy < 0 or yy >= H:
                                continue
                            for dj in range(ks):
                                xx = x + dj - r
                                if xx < 0 or xx >= W:
                                    continue
                                acc = acc + X[b, p, yy, xx] * K[p, di, dj]
                    out[b, y, x] = acc
    return out_arr


def spatial_conv_backward(pooled, kernel, grad_out):
    cdef double[:, :, :, ::1] X = np.ascontiguousarray(pooled, dtype=np.float64)
    cdef double[:, :, ::1] K = np.ascontiguousarray(kernel, dtype=np.float64)
    cdef double[:, :, ::1] G = np.ascontiguousarray(grad_out, dtype=np.float64)
    cdef Py_ssize_t B = X.shape[0], Pn = X.shape[1], H = X.shape[2], W = X.shape[3]
    cdef Py_ssize_t ks = K.shape[2], r = ks // 2
    gx_arr = np.zeros((B, Pn, H, W), dtype=np.float64)
    gk_arr = np.zeros((Pn, ks, ks), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, ::1] gk = gk_arr
    cdef Py_ssize_t b, p, y, x, di, dj, yy, xx
    cdef double g, gb = 0.0
    with nogil:
        for b in range(B):
            for y in range(H):
                for x in range(W):
                    g = G[b, y, x]
                    gb = gb + g
                    for p in range(Pn):
                        for di in range(ks):
                            yy = y + di - r
                            if yy < 0 or yy >= H:
                                continue
                            for dj in range(ks):
                                xx = x + dj - r
                                if xx < 0 or xx >= W:
                                    continue
                                gk[p, di, dj] += X[b, p, yy, xx] * g
                                gx[b, p, yy, xx] += K[p, di, dj] * g
    return gx_arr, gk_arr, gb
