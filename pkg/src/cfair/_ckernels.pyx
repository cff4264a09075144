# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels in ``_pykernels``.

Loops run in a fixed order so results are bit-reproducible run to run.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


cdef inline double _clamp(double x) noexcept nogil:
    if x > 1.0:
        return 1.0
    if x < -1.0:
        return -1.0
    return x


cdef void _row_norms(double[:, ::1] X, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(X.shape[0]):
        acc = 0.0
        for j in range(X.shape[1]):
            acc += X[i, j] * X[i, j]
        out[i] = sqrt(acc)


cdef inline double _dot(const double* a, const double* b, Py_ssize_t d) noexcept nogil:
    # four independent partial sums break the serial dependency chain; the
    # combination order is fixed, so the result is still reproducible
    cdef Py_ssize_t j, d4 = d - d % 4
    cdef double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0
    for j in range(0, d4, 4):
        a0 += a[j] * b[j]
        a1 += a[j + 1] * b[j + 1]
        a2 += a[j + 2] * b[j + 2]
        a3 += a[j + 3] * b[j + 3]
    for j in range(d4, d):
        a0 += a[j] * b[j]
    return (a0 + a1) + (a2 + a3)


def pair_cosines(double[:, ::1] G, double[:, ::1] M):
    cdef Py_ssize_t B = G.shape[0], K = M.shape[0], i, k
    S_arr = np.empty((B, K), dtype=np.float64)
    gn_arr = np.empty(B, dtype=np.float64)
    mn_arr = np.empty(K, dtype=np.float64)
    cdef double[:, ::1] S = S_arr
    cdef double[::1] gn = gn_arr
    cdef double[::1] mn = mn_arr
    with nogil:
        _row_norms(G, gn)
        _row_norms(M, mn)
        for i in range(B):
            for k in range(K):
                S[i, k] = _clamp(_dot(&G[i, 0], &M[k, 0], G.shape[1]) * (1.0 / (gn[i] * mn[k])))
    return S_arr


cdef inline void _axpy(double a, const double* x, double* y, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t j
    for j in range(n):
        y[j] += a * x[j]


def pair_loss_grad(double[:, ::1] G, double[:, ::1] M, double[:, ::1] T, double[:, ::1] W):
    cdef Py_ssize_t B = G.shape[0], K = M.shape[0], d = G.shape[1]
    cdef Py_ssize_t i, k
    cdef double loss = 0.0, s, e, r, inv_gm
    dG_arr = np.zeros((B, d), dtype=np.float64)
    dM_arr = np.zeros((K, d), dtype=np.float64)
    C_arr = np.empty((B, K), dtype=np.float64)   # r / (|g_i| |m_k|)
    gs_arr = np.zeros(B, dtype=np.float64)       # sum_k r s, per image
    ms_arr = np.zeros(K, dtype=np.float64)       # sum_i r s, per centroid
    gn_arr = np.empty(B, dtype=np.float64)
    mn_arr = np.empty(K, dtype=np.float64)
    cdef double[:, ::1] dG = dG_arr
    cdef double[:, ::1] dM = dM_arr
    cdef double[:, ::1] C = C_arr
    cdef double[::1] gs = gs_arr
    cdef double[::1] ms = ms_arr
    cdef double[::1] gn = gn_arr
    cdef double[::1] mn = mn_arr

    with nogil:
        _row_norms(G, gn)
        _row_norms(M, mn)
        # pass 1: residuals and per-pair coefficients
        for i in range(B):
            for k in range(K):
                inv_gm = 1.0 / (gn[i] * mn[k])
                s = _clamp(_dot(&G[i, 0], &M[k, 0], G.shape[1]) * inv_gm)
                e = s - T[i, k]
                loss += W[i, k] * e * e
                r = 2.0 * W[i, k] * e
                C[i, k] = r * inv_gm
                gs[i] += r * s
                ms[k] += r * s
        # pass 2: dG_i = sum_k C_ik m_k - gs_i g_i / |g_i|^2, and symmetrically for dM
        for i in range(B):
            for k in range(K):
                if C[i, k] != 0.0:
                    _axpy(C[i, k], &M[k, 0], &dG[i, 0], d)
                    _axpy(C[i, k], &G[i, 0], &dM[k, 0], d)
        for i in range(B):
            _axpy(-gs[i] / (gn[i] * gn[i]), &G[i, 0], &dG[i, 0], d)
        for k in range(K):
            _axpy(-ms[k] / (mn[k] * mn[k]), &M[k, 0], &dM[k, 0], d)
    return loss, dG_arr, dM_arr


def pair_scores(double[:, ::1] U, ids):
    cdef cnp.int64_t[::1] lab = np.ascontiguousarray(ids, dtype=np.int64)
    cdef Py_ssize_t n = U.shape[0], d = U.shape[1]
    cdef Py_ssize_t i, j, ng = 0, ni = 0
    cdef double dot
    cdef cnp.int64_t total = n * (n - 1) // 2
    cdef cnp.int64_t n_gen = 0
    # count genuine pairs first so both outputs are allocated exactly once
    counts = np.bincount(np.asarray(lab), minlength=1) if n else np.zeros(1, dtype=np.int64)
    n_gen = int(np.sum(counts * (counts - 1) // 2))
    gen_arr = np.empty(n_gen, dtype=np.float64)
    imp_arr = np.empty(total - n_gen, dtype=np.float64)
    cdef double[::1] gen = gen_arr
    cdef double[::1] imp = imp_arr
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                dot = _clamp(_dot(&U[i, 0], &U[j, 0], d))
                if lab[i] == lab[j]:
                    gen[ng] = dot
                    ng += 1
                else:
                    imp[ni] = dot
                    ni += 1
    return gen_arr, imp_arr
