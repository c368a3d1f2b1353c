# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled tree kernels. Same contracts and arithmetic order as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

GINI = 0
NEWTON = 1

NAME = "cython"


def split_gains(const double[:, ::1] xt, const cnp.int64_t[:, ::1] order,
                feats, const double[::1] s1, const double[::1] s2,
                const double[::1] w, int kind, double lam, double gamma,
                double min_leaf):
    cdef cnp.int64_t[::1] fv = np.ascontiguousarray(feats, dtype=np.int64)
    cdef Py_ssize_t k = fv.shape[0]
    cdef Py_ssize_t m = order.shape[1]
    out_arr = np.empty((k, m - 1 if m > 0 else 0), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, f
    cdef cnp.int64_t r, rn
    cdef double nL, N, nR, pL, P, pR, parent, left, right
    cdef double GL, HL, G, H, GR, HR
    if m < 2:
        return out_arr
    with nogil:
        for i in range(k):
            f = fv[i]
            N = 0.0
            P = 0.0
            H = 0.0
            for j in range(m):
                r = order[f, j]
                N = N + w[r]
                P = P + s1[r]
                H = H + s2[r]
            if kind == 0:
                parent = 2.0 * P * (N - P) / N
            else:
                parent = P * P / (H + lam)
            G = P
            nL = 0.0
            pL = 0.0
            HL = 0.0
            for j in range(m - 1):
                r = order[f, j]
                rn = order[f, j + 1]
                nL = nL + w[r]
                pL = pL + s1[r]
                if kind != 0:
                    HL = HL + s2[r]
                nR = N - nL
                if xt[f, r] == xt[f, rn] or nL < min_leaf or nR < min_leaf:
                    out[i, j] = -INFINITY
                    continue
                if kind == 0:
                    pR = P - pL
                    left = 2.0 * pL * (nL - pL) / nL
                    right = 2.0 * pR * (nR - pR) / nR
                    out[i, j] = (parent - left - right) / N
                else:
                    GL = pL
                    GR = G - GL
                    HR = H - HL
                    out[i, j] = 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent) - gamma
    return out_arr


def partition(const cnp.int64_t[:, ::1] order, go_left):
    cdef const cnp.uint8_t[::1] gl = np.ascontiguousarray(go_left).view(np.uint8)
    cdef Py_ssize_t d = order.shape[0], m = order.shape[1]
    cdef Py_ssize_t nl = 0, i, j, a, b
    if d == 0:
        return np.empty((0, 0), np.int64), np.empty((0, 0), np.int64)
    for j in range(m):
        if gl[order[0, j]]:
            nl += 1
    left_arr = np.empty((d, nl), dtype=np.int64)
    right_arr = np.empty((d, m - nl), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] L = left_arr
    cdef cnp.int64_t[:, ::1] R = right_arr
    cdef cnp.int64_t r
    with nogil:
        for i in range(d):
            a = 0
            b = 0
            for j in range(m):
                r = order[i, j]
                if gl[r]:
                    L[i, a] = r
                    a += 1
                else:
                    R[i, b] = r
                    b += 1
    return left_arr, right_arr


def predict_tree(const cnp.int32_t[::1] feature, const double[::1] threshold,
                 const cnp.int32_t[::1] left, const cnp.int32_t[::1] right,
                 const double[::1] value, const double[:, ::1] X):
    cdef Py_ssize_t n = X.shape[0], i
    cdef cnp.int32_t node, f
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    with nogil:
        for i in range(n):
            node = 0
            f = feature[node]
            while f >= 0:
                if X[i, f] < threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
                f = feature[node]
            out[i] = value[node]
    return out_arr
