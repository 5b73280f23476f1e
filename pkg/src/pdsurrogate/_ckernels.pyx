# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. See ``_pykernels.py`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, INFINITY

cnp.import_array()


def dp_cluster(const double[::1] z, const double[::1] w, int kmax, double tol):
    cdef Py_ssize_t m = z.shape[0]
    cdef Py_ssize_t i, j, k, pick
    cdef double sw, s1, s2, v, best
    cw_arr = np.zeros(m + 1)
    cwz_arr = np.zeros(m + 1)
    cwz2_arr = np.zeros(m + 1)
    cdef double[::1] cw = cw_arr
    cdef double[::1] cwz = cwz_arr
    cdef double[::1] cwz2 = cwz2_arr
    # np.cumsum accumulates left to right, matching the numpy backend exactly
    cw_arr[1:] = np.cumsum(np.asarray(w))
    cwz_arr[1:] = np.cumsum(np.asarray(w) * np.asarray(z))
    cwz2_arr[1:] = np.cumsum(np.asarray(w) * np.asarray(z) * np.asarray(z))

    cost_arr = np.full((kmax, m), np.inf)
    start_arr = np.full((kmax, m), -1, dtype=np.int64)
    cdef double[:, ::1] cost = cost_arr
    cdef long long[:, ::1] start = start_arr
    cand_arr = np.empty(m)
    cdef double[::1] cand = cand_arr

    for i in range(m):
        sw = cw[i + 1]
        s1 = cwz[i + 1]
        s2 = cwz2[i + 1]
        v = s2 - s1 * s1 / sw
        cost[0, i] = v if v > 0.0 else 0.0
        start[0, i] = 0
    for k in range(1, kmax):
        for i in range(k, m):
            best = INFINITY
            for j in range(k, i + 1):
                sw = cw[i + 1] - cw[j]
                s1 = cwz[i + 1] - cwz[j]
                s2 = cwz2[i + 1] - cwz2[j]
                v = s2 - s1 * s1 / sw
                if v < 0.0:
                    v = 0.0
                v = cost[k - 1, j - 1] + v
                cand[j] = v
                if v < best:
                    best = v
            pick = k
            for j in range(k, i + 1):
                if cand[j] <= best + tol:
                    pick = j
                    break
            cost[k, i] = cand[pick]
            start[k, i] = pick
    return cost_arr, start_arr


def build_histograms(const int[:, ::1] bins, const long long[::1] rows,
                     const double[::1] g, const double[::1] h, int nbins):
    cdef Py_ssize_t p = bins.shape[1]
    cdef Py_ssize_t r = rows.shape[0]
    cdef Py_ssize_t a, f, row
    cdef int b
    G_arr = np.zeros((p, nbins))
    H_arr = np.zeros((p, nbins))
    C_arr = np.zeros((p, nbins))
    cdef double[:, ::1] G = G_arr
    cdef double[:, ::1] H = H_arr
    cdef double[:, ::1] C = C_arr
    cdef double gv, hv
    with nogil:
        for a in range(r):
            row = rows[a]
            gv = g[row]
            hv = h[row]
            for f in range(p):
                b = bins[row, f]
                G[f, b] += gv
                H[f, b] += hv
                C[f, b] += 1.0
    return G_arr, H_arr, C_arr


def predict_ensemble(const double[:, ::1] X, const int[::1] feat, const double[::1] thr,
                     const unsigned char[::1] is_cat, const int[::1] left, const int[::1] right,
                     const double[::1] value, const unsigned char[::1] default_left,
                     const int[::1] mask_off, const int[::1] mask_len,
                     const unsigned char[::1] masks, const int[::1] roots):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t T = roots.shape[0]
    cdef Py_ssize_t i, t
    cdef int node, f, code
    cdef double x, acc
    cdef bint go_left
    out_arr = np.zeros(n)
    cdef double[::1] out = out_arr
    with nogil:
        for i in range(n):
            acc = 0.0
            for t in range(T):
                node = roots[t]
                while feat[node] >= 0:
                    f = feat[node]
                    x = X[i, f]
                    if is_cat[node] == 0:
                        go_left = x <= thr[node]
                    elif x >= 0 and x < mask_len[node] and x == floor(x):
                        code = <int>x
                        go_left = masks[mask_off[node] + code] != 0
                    else:
                        go_left = default_left[node] != 0
                    node = left[node] if go_left else right[node]
                acc += value[node]
            out[i] = acc
    return out_arr
