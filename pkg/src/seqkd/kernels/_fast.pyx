# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled sequence kernels; signature-compatible with seqkd.kernels.ref.

Direct loops over (batch, length, channels) float64 buffers. Max-pool ties
resolve to the lowest window offset, matching the numpy backend bit for bit.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

NAME = "compiled"


def conv1d_same(double[:, :, ::1] x, double[:, :, ::1] w, double[::1] b):
    cdef Py_ssize_t B = x.shape[0], L = x.shape[1], Cin = x.shape[2]
    cdef Py_ssize_t K = w.shape[0], Cout = w.shape[2]
    cdef Py_ssize_t left = (K - 1) // 2
    out_arr = np.empty((B, L, Cout), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, t, k, ci, co, src
    cdef double acc
    with nogil:
        for i in range(B):
            for t in range(L):
                for co in range(Cout):
                    out[i, t, co] = b[co]
                for k in range(K):
                    src = t + k - left
                    if src < 0 or src >= L:
                        continue
                    for ci in range(Cin):
                        acc = x[i, src, ci]
                        for co in range(Cout):
                            out[i, t, co] += acc * w[k, ci, co]
    return out_arr


def conv1d_same_backward(double[:, :, ::1] x, double[:, :, ::1] w, double[:, :, ::1] gy):
    cdef Py_ssize_t B = x.shape[0], L = x.shape[1], Cin = x.shape[2]
    cdef Py_ssize_t K = w.shape[0], Cout = w.shape[2]
    cdef Py_ssize_t left = (K - 1) // 2
    gx_arr = np.zeros((B, L, Cin), dtype=np.float64)
    gw_arr = np.zeros((K, Cin, Cout), dtype=np.float64)
    gb_arr = np.zeros(Cout, dtype=np.float64)
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, :, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t i, t, k, ci, co, src
    cdef double g, xv
    with nogil:
        for i in range(B):
            for t in range(L):
                for co in range(Cout):
                    gb[co] += gy[i, t, co]
                for k in range(K):
                    src = t + k - left
                    if src < 0 or src >= L:
                        continue
                    # two passes so each inner loop is a clean reduction / axpy
                    for ci in range(Cin):
                        g = 0.0
                        for co in range(Cout):
                            g += gy[i, t, co] * w[k, ci, co]
                        gx[i, src, ci] += g
                    for ci in range(Cin):
                        xv = x[i, src, ci]
                        for co in range(Cout):
                            gw[k, ci, co] += xv * gy[i, t, co]
    return gx_arr, gw_arr, gb_arr


def maxpool1d(double[:, :, ::1] x, Py_ssize_t size):
    cdef Py_ssize_t B = x.shape[0], L = x.shape[1], C = x.shape[2]
    cdef Py_ssize_t Lo = L // size
    y_arr = np.empty((B, Lo, C), dtype=np.float64)
    a_arr = np.zeros((B, Lo, C), dtype=np.int64)
    cdef double[:, :, ::1] y = y_arr
    cdef long long[:, :, ::1] a = a_arr
    cdef Py_ssize_t i, t, c, k
    cdef double best, v
    with nogil:
        for i in range(B):
            for t in range(Lo):
                for c in range(C):
                    best = x[i, t * size, c]
                    a[i, t, c] = 0
                    for k in range(1, size):
                        v = x[i, t * size + k, c]
                        if v > best:
                            best = v
                            a[i, t, c] = k
                    y[i, t, c] = best
    return y_arr, a_arr


def maxpool1d_backward(long long[:, :, ::1] arg, double[:, :, ::1] gy, Py_ssize_t size, Py_ssize_t length):
    cdef Py_ssize_t B = gy.shape[0], Lo = gy.shape[1], C = gy.shape[2]
    gx_arr = np.zeros((B, length, C), dtype=np.float64)
    cdef double[:, :, ::1] gx = gx_arr
    cdef Py_ssize_t i, t, c
    with nogil:
        for i in range(B):
            for t in range(Lo):
                for c in range(C):
                    gx[i, t * size + arg[i, t, c], c] += gy[i, t, c]
    return gx_arr


def avgpool1d(double[:, :, ::1] x, Py_ssize_t size):
    cdef Py_ssize_t B = x.shape[0], L = x.shape[1], C = x.shape[2]
    cdef Py_ssize_t Lo = L // size
    y_arr = np.zeros((B, Lo, C), dtype=np.float64)
    cdef double[:, :, ::1] y = y_arr
    cdef Py_ssize_t i, t, c, k
    with nogil:
        for i in range(B):
            for t in range(Lo):
                for k in range(size):
                    for c in range(C):
                        y[i, t, c] += x[i, t * size + k, c]
                for c in range(C):
                    y[i, t, c] /= size
    return y_arr


def avgpool1d_backward(double[:, :, ::1] gy, Py_ssize_t size, Py_ssize_t length):
    cdef Py_ssize_t B = gy.shape[0], Lo = gy.shape[1], C = gy.shape[2]
    gx_arr = np.empty((B, length, C), dtype=np.float64)
    cdef double[:, :, ::1] gx = gx_arr
    cdef Py_ssize_t i, t, c, k
    with nogil:
        for i in range(B):
            for t in range(Lo):
                for k in range(size):
                    for c in range(C):
                        gx[i, t * size + k, c] = gy[i, t, c] / size
    return gx_arr


def maxpool2d(double[:, :, ::1] x, Py_ssize_t size):
    cdef Py_ssize_t N = x.shape[0], R = x.shape[1], C = x.shape[2]
    cdef Py_ssize_t Ro = R // size, Co = C // size
    y_arr = np.empty((N, Ro, Co), dtype=np.float64)
    a_arr = np.zeros((N, Ro, Co), dtype=np.int64)
    cdef double[:, :, ::1] y = y_arr
    cdef long long[:, :, ::1] a = a_arr
    cdef Py_ssize_t n, r, c, kr, kc
    cdef double best, v
    with nogil:
        for n in range(N):
            for r in range(Ro):
                for c in range(Co):
                    best = x[n, r * size, c * size]
                    a[n, r, c] = 0
                    for kr in range(size):
                        for kc in range(size):
                            if kr == 0 and kc == 0:
                                continue
                            v = x[n, r * size + kr, c * size + kc]
                            if v > best:
                                best = v
                                a[n, r, c] = kr * size + kc
                    y[n, r, c] = best
    return y_arr, a_arr


def maxpool2d_backward(long long[:, :, ::1] arg, double[:, :, ::1] gy, Py_ssize_t size,
                       Py_ssize_t rows, Py_ssize_t cols):
    cdef Py_ssize_t N = gy.shape[0], Ro = gy.shape[1], Co = gy.shape[2]
    gx_arr = np.zeros((N, rows, cols), dtype=np.float64)
    cdef double[:, :, ::1] gx = gx_arr
    cdef Py_ssize_t n, r, c, kr, kc
    with nogil:
        for n in range(N):
            for r in range(Ro):
                for c in range(Co):
                    kr = arg[n, r, c] // size
                    kc = arg[n, r, c] % size
                    gx[n, r * size + kr, c * size + kc] += gy[n, r, c]
    return gx_arr


def upsample1d(double[:, :, ::1] x, Py_ssize_t factor):
    cdef Py_ssize_t B = x.shape[0], L = x.shape[1], C = x.shape[2]
    y_arr = np.empty((B, L * factor, C), dtype=np.float64)
    cdef double[:, :, ::1] y = y_arr
    cdef Py_ssize_t i, t, c, k
    with nogil:
        for i in range(B):
            for t in range(L):
                for k in range(factor):
                    for c in range(C):
                        y[i, t * factor + k, c] = x[i, t, c]
    return y_arr


def upsample1d_backward(double[:, :, ::1] gy, Py_ssize_t factor):
    cdef Py_ssize_t B = gy.shape[0], Lup = gy.shape[1], C = gy.shape[2]
    cdef Py_ssize_t L = Lup // factor
    gx_arr = np.zeros((B, L, C), dtype=np.float64)
    cdef double[:, :, ::1] gx = gx_arr
    cdef Py_ssize_t i, t, c, k
    with nogil:
        for i in range(B):
            for t in range(L):
                for k in range(factor):
                    for c in range(C):
                        gx[i, t, c] += gy[i, t * factor + k, c]
    return gx_arr
