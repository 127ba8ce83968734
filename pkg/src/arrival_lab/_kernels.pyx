# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the loops in ``_kernels_py``."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def antidiagonal_gather(const double complex[:, ::1] rho):
    cdef Py_ssize_t n = rho.shape[0]
    cdef Py_ssize_t half = n // 2
    out_arr = np.zeros((n, n), dtype=np.complex128)
    cdef double complex[:, ::1] out = out_arr
    cdef Py_ssize_t j, k, s, a, b
    for j in range(n):
        for k in range(n):
            s = k if k < (n + 1) // 2 else k - n
            a = j + s
            b = j - s
            if a >= 0 and a < n and b >= 0 and b < n:
                out[j, k] = rho[a, b]
    return out_arr


def anti_wick_assemble(const double[:, ::1] g, const double complex[:, ::1] h):
    cdef Py_ssize_t nq = g.shape[0]
    cdef Py_ssize_t n = g.shape[1]
    out_arr = np.zeros((n, n), dtype=np.complex128)
    cdef double complex[:, ::1] out = out_arr
    cdef Py_ssize_t q, x, y
    cdef double gx
    for q in range(nq):
        for x in range(n):
            gx = g[q, x]
            if gx == 0.0:
                continue
            for y in range(n):
                out[x, y] += gx * g[q, y] * h[q, x - y + n - 1]
    return out_arr
