# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled iterative-projection sweep.

Mirrors :func:`ebidlma._ip_fallback.ip_sweep`; see that module for the
array conventions.
"""
from cython.parallel cimport parallel, prange
from libc.math cimport isfinite, sqrt
from libc.stdlib cimport free, malloc

ctypedef double complex cplx

cdef extern from "complex.h" nogil:
    double cabs(double complex)
    double creal(double complex)
    double complex conj(double complex)


cdef int _solve_unit(cplx* A, cplx* w, int N, int n) noexcept nogil:
    """Solve A w = e_n in place (A is destroyed). Returns 0 on success."""
    cdef int r, c, k, p
    cdef double best, mag
    cdef cplx tmp, f
    for r in range(N):
        w[r] = 0
    w[n] = 1
    for k in range(N):
        p = k
        best = cabs(A[k * N + k])
        for r in range(k + 1, N):
            mag = cabs(A[r * N + k])
            if mag > best:
                best = mag
                p = r
        if best == 0.0 or not isfinite(best):
            return 1
        if p != k:
            for c in range(N):
                tmp = A[k * N + c]
                A[k * N + c] = A[p * N + c]
                A[p * N + c] = tmp
            tmp = w[k]
            w[k] = w[p]
            w[p] = tmp
        for r in range(k + 1, N):
            f = A[r * N + k] / A[k * N + k]
            if f != 0:
                for c in range(k, N):
                    A[r * N + c] = A[r * N + c] - f * A[k * N + c]
                w[r] = w[r] - f * w[k]
    for k in range(N - 1, -1, -1):
        tmp = w[k]
        for c in range(k + 1, N):
            tmp = tmp - A[k * N + c] * w[c]
        w[k] = tmp / A[k * N + k]
    return 0


cdef int _update_row(cplx* Wi, cplx* U, cplx* A, cplx* w, int N, int n) noexcept nogil:
    """One IP row update; returns 0 ok, 1 singular/non-PD."""
    cdef int r, a, b
    cdef cplx acc
    cdef double q
    for r in range(N):
        for b in range(N):
            acc = 0
            for a in range(N):
                acc = acc + Wi[r * N + a] * U[a * N + b]
            A[r * N + b] = acc
    if _solve_unit(A, w, N, n):
        return 1
    q = 0.0
    for a in range(N):
        acc = 0
        for b in range(N):
            acc = acc + U[a * N + b] * w[b]
        q = q + creal(conj(w[a]) * acc)
    if not (q > 0.0) or not isfinite(q):
        return 1
    q = sqrt(q)
    for a in range(N):
        Wi[n * N + a] = conj(w[a]) / q
    return 0


def ip_sweep(cplx[:, :, ::1] W, const cplx[:, :, ::1] X,
             const double[:, :, ::1] weights, int num_threads=1):
    """Update every row of every W_i once, in place.

    Returns ``(n_regularized, n_failed)``.
    """
    cdef Py_ssize_t I = X.shape[0]
    cdef Py_ssize_t J = X.shape[1]
    cdef int N = <int> X.shape[2]
    cdef Py_ssize_t i, j
    cdef int n, a, b, status
    cdef double scale, wij
    cdef cplx* U
    cdef cplx* A
    cdef cplx* w
    cdef cplx* Wi
    cdef int n_reg = 0
    cdef int n_fail = 0

    if W.shape[0] != I or W.shape[1] != N or W.shape[2] != N:
        raise ValueError("W must have shape (n_bins, n_channels, n_channels)")
    if weights.shape[0] != N or weights.shape[1] != I or weights.shape[2] != J:
        raise ValueError("weights must have shape (n_sources, n_bins, n_frames)")

    with nogil, parallel(num_threads=num_threads):
        U = <cplx*> malloc(N * N * sizeof(cplx))
        A = <cplx*> malloc(N * N * sizeof(cplx))
        w = <cplx*> malloc(N * sizeof(cplx))
        for i in prange(I, schedule="static"):
            Wi = &W[i, 0, 0]
            for n in range(N):
                for a in range(N * N):
                    U[a] = 0
                for j in range(J):
                    wij = 1.0 / (weights[n, i, j] * J)
                    for a in range(N):
                        for b in range(N):
                            U[a * N + b] = U[a * N + b] + wij * X[i, j, a] * conj(X[i, j, b])
                status = _update_row(Wi, U, A, w, N, n)
                if status:
                    scale = 0.0
                    for a in range(N):
                        scale = scale + creal(U[a * N + a])
                    scale = 1e-10 * scale / N
                    if not (scale > 0.0):
                        scale = 1e-10
                    for a in range(N):
                        U[a * N + a] = U[a * N + a] + scale
                    n_reg += 1
                    if _update_row(Wi, U, A, w, N, n):
                        n_fail += 1
        free(U)
        free(A)
        free(w)
    return n_reg, n_fail
