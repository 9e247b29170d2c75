# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops.  Signatures mirror :mod:`mvlevy._kernels_py`."""
import numpy as np
cimport numpy as cnp
from libc.math cimport tanh

cnp.import_array()


def tanh_mean_field(const double[:, :, ::1] x, const double[:, :, ::1] cloud,
                    double alpha, double beta, double ell):
    cdef Py_ssize_t R = x.shape[0], M = x.shape[1], d = x.shape[2]
    cdef Py_ssize_t N = cloud.shape[1]
    if cloud.shape[0] != R or cloud.shape[2] != d:
        raise ValueError("cloud shape does not match evaluation points")
    out = np.empty((R, M, d), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t r, i, j, k
    cdef double acc, xi, inv_ell = 1.0 / ell, inv_n = 1.0 / N
    with nogil:
        for r in range(R):
            for i in range(M):
                for k in range(d):
                    xi = x[r, i, k]
                    acc = 0.0
                    for j in range(N):
                        acc = acc + tanh((cloud[r, j, k] - xi) * inv_ell)
                    o[r, i, k] = -alpha * xi + beta * ell * (acc * inv_n)
    return out


def linear_recursion(const double[:, :, ::1] A, const double[:, :, ::1] F, const double[:, ::1] v0, double dt):
    """``V[k+1] = V[k] + dt * (A[k] @ V[k] + F[:, k])`` for a batch of forcings."""
    cdef Py_ssize_t n = A.shape[0], d = A.shape[1], B = F.shape[0]
    if F.shape[1] != n or F.shape[2] != d or v0.shape[0] != B or v0.shape[1] != d:
        raise ValueError("shape mismatch in linear_recursion")
    out = np.empty((B, n + 1, d), dtype=np.float64)
    cdef double[:, :, ::1] V = out
    cdef Py_ssize_t b, k, i, j
    cdef double acc
    with nogil:
        for b in range(B):
            for i in range(d):
                V[b, 0, i] = v0[b, i]
            for k in range(n):
                for i in range(d):
                    acc = 0.0
                    for j in range(d):
                        acc = acc + A[k, i, j] * V[b, k, j]
                    V[b, k + 1, i] = V[b, k, i] + dt * (acc + F[b, k, i])
    return out


def sup_sq_distance(const double[:, :, :, ::1] paths, const double[:, ::1] ref):
    """``max_k |paths[r, p, k] - ref[k]|^2`` for every replica/particle."""
    cdef Py_ssize_t R = paths.shape[0], P = paths.shape[1], n = paths.shape[2], d = paths.shape[3]
    out = np.zeros((R, P), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t r, p, k, i
    cdef double s, diff, best
    with nogil:
        for r in range(R):
            for p in range(P):
                best = 0.0
                for k in range(n):
                    s = 0.0
                    for i in range(d):
                        diff = paths[r, p, k, i] - ref[k, i]
                        s = s + diff * diff
                    if s > best:
                        best = s
                o[r, p] = best
    return out
