# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels; see ``_pykernels`` for semantics.

Matrix products go through BLAS dgemm from scipy; the softmax, span search
and scatter loops run in C without the GIL.
"""

import numpy as np
from libc.math cimport exp, sqrt
from scipy.linalg.cython_blas cimport dgemm


cdef void _gemm(char ta, char tb, double alpha, const double[:, ::1] a, const double[:, ::1] b,
                double beta, double[:, ::1] c) noexcept nogil:
    # Row-major c = alpha * op(a) @ op(b) + beta * c.  BLAS is column-major,
    # so compute c.T = op(b).T @ op(a).T by swapping the operands.
    cdef int n = c.shape[0], p = c.shape[1]
    cdef int m = a.shape[0] if ta == b'T' else a.shape[1]
    cdef int lda = a.shape[1], ldb = b.shape[1], ldc = p
    cdef Py_ssize_t i, j
    if n == 0 or p == 0:
        return
    if m == 0:
        for i in range(n):
            for j in range(p):
                c[i, j] *= beta
        return
    dgemm(&tb, &ta, &p, &n, &m, &alpha, <double*>&b[0, 0], &ldb, <double*>&a[0, 0], &lda, &beta, &c[0, 0], &ldc)


cdef inline const double[:, ::1] _c(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def attention_forward(X, Wq, Wk, Wv):
    cdef const double[:, ::1] x = _c(X)
    cdef const double[:, ::1] wq = _c(Wq), wk = _c(Wk), wv = _c(Wv)
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    Q_ = np.empty((n, d)); K_ = np.empty((n, d)); V_ = np.empty((n, d))
    A_ = np.empty((n, n)); Y_ = np.array(x, dtype=np.float64, copy=True)
    cdef double[:, ::1] Q = Q_, K = K_, V = V_, A = A_, Y = Y_
    cdef Py_ssize_t i, j
    cdef double scale = 1.0 / sqrt(<double>d), mx, tot
    with nogil:
        _gemm(b'N', b'N', 1.0, x, wq, 0.0, Q)
        _gemm(b'N', b'N', 1.0, x, wk, 0.0, K)
        _gemm(b'N', b'N', 1.0, x, wv, 0.0, V)
        _gemm(b'N', b'T', scale, Q, K, 0.0, A)
        for i in range(n):
            mx = A[i, 0]
            for j in range(1, n):
                if A[i, j] > mx:
                    mx = A[i, j]
            tot = 0.0
            for j in range(n):
                A[i, j] = exp(A[i, j] - mx)
                tot += A[i, j]
            for j in range(n):
                A[i, j] /= tot
        _gemm(b'N', b'N', 1.0, A, V, 1.0, Y)
    return Y_, Q_, K_, V_, A_


def attention_backward(dY, X, Wq, Wk, Wv, Q, K, V, A):
    cdef const double[:, ::1] dy = _c(dY), x = _c(X), q = _c(Q), k = _c(K), v = _c(V), a = _c(A)
    cdef const double[:, ::1] wq = _c(Wq), wk = _c(Wk), wv = _c(Wv)
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    dS_ = np.empty((n, n)); dQ_ = np.empty((n, d)); dK_ = np.empty((n, d)); dV_ = np.empty((n, d))
    dWq_ = np.empty((d, d)); dWk_ = np.empty((d, d)); dWv_ = np.empty((d, d))
    dX_ = np.array(dy, dtype=np.float64, copy=True)
    cdef double[:, ::1] dS = dS_, dQ = dQ_, dK = dK_, dV = dV_, dX = dX_
    cdef double[:, ::1] dWq = dWq_, dWk = dWk_, dWv = dWv_
    cdef Py_ssize_t i, j
    cdef double scale = 1.0 / sqrt(<double>d), rowdot
    with nogil:
        _gemm(b'T', b'N', 1.0, a, dy, 0.0, dV)
        _gemm(b'N', b'T', 1.0, dy, v, 0.0, dS)
        for i in range(n):
            rowdot = 0.0
            for j in range(n):
                rowdot += dS[i, j] * a[i, j]
            for j in range(n):
                dS[i, j] = a[i, j] * (dS[i, j] - rowdot) * scale
        _gemm(b'N', b'N', 1.0, dS, k, 0.0, dQ)
        _gemm(b'T', b'N', 1.0, dS, q, 0.0, dK)
        _gemm(b'T', b'N', 1.0, x, dQ, 0.0, dWq)
        _gemm(b'T', b'N', 1.0, x, dK, 0.0, dWk)
        _gemm(b'T', b'N', 1.0, x, dV, 0.0, dWv)
        _gemm(b'N', b'T', 1.0, dQ, wq, 1.0, dX)
        _gemm(b'N', b'T', 1.0, dK, wk, 1.0, dX)
        _gemm(b'N', b'T', 1.0, dV, wv, 1.0, dX)
    return dX_, dWq_, dWk_, dWv_


def decode_span(start, end, mask, Py_ssize_t max_len):
    cdef const double[::1] ps = np.ascontiguousarray(start, dtype=np.float64)
    cdef const double[::1] pe = np.ascontiguousarray(end, dtype=np.float64)
    cdef const unsigned char[::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t n = ps.shape[0], s, e, hi, bs = -1, be = -1
    cdef double best = -1.0, score
    with nogil:
        for s in range(n):
            if not m[s]:
                continue
            hi = s + max_len
            if hi > n:
                hi = n
            for e in range(s, hi):
                if m[e]:
                    score = ps[s] * pe[e]
                    if score > best:
                        bs = s
                        be = e
                        best = score
    return bs, be, best


def scatter_add_rows(table, ids, rows):
    cdef double[:, ::1] t = table
    ids_ = np.ascontiguousarray(ids, dtype=np.int64)
    cdef const long long[::1] idx = ids_
    cdef const double[:, ::1] r = np.ascontiguousarray(rows, dtype=np.float64)
    cdef Py_ssize_t i, j, row, d = r.shape[1]
    if idx.shape[0] and (ids_.min() < 0 or ids_.max() >= t.shape[0]):
        raise IndexError("row id outside table")
    with nogil:
        for i in range(idx.shape[0]):
            row = idx[i]
            for j in range(d):
                t[row, j] += r[i, j]
