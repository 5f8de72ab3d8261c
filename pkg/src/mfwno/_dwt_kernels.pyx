# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Hot kernels for the periodized wavelet filter bank.

Both routines act on C-contiguous (rows, n) float64 blocks; the Python layer
handles axis moves, level bookkeeping, and the index lookup tables.  The
analysis gather table and the synthesis scatter tables are precomputed by
``mfwno.kernels`` so the loops here are pure fused multiply-adds.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def analysis_step(
    const double[:, ::1] x,
    const double[::1] lo,
    const double[::1] hi,
    const long long[:, ::1] idx,
    double[:, ::1] out_a,
    double[:, ::1] out_d,
):
    """out_a[r,k] = sum_i lo[i]*x[r, idx[k,i]]; out_d likewise with hi."""
    cdef Py_ssize_t rows = x.shape[0]
    cdef Py_ssize_t half = idx.shape[0]
    cdef Py_ssize_t taps = idx.shape[1]
    cdef Py_ssize_t r, k, i
    cdef double sa, sd, xv
    for r in range(rows):
        for k in range(half):
            sa = 0.0
            sd = 0.0
            for i in range(taps):
                xv = x[r, idx[k, i]]
                sa += lo[i] * xv
                sd += hi[i] * xv
            out_a[r, k] = sa
            out_d[r, k] = sd


def synthesis_step(
    const double[:, ::1] a,
    const double[:, ::1] d,
    const long long[:, ::1] kidx,
    const double[:, ::1] clo,
    const double[:, ::1] chi,
    double[:, ::1] out,
):
    """Adjoint of analysis_step: out[r,j] = sum_t clo[j,t]*a[r,kidx[j,t]] + chi[j,t]*d[r,kidx[j,t]]."""
    cdef Py_ssize_t rows = a.shape[0]
    cdef Py_ssize_t n = kidx.shape[0]
    cdef Py_ssize_t taps = kidx.shape[1]
    cdef Py_ssize_t r, j, t, k
    cdef double s
    for r in range(rows):
        for j in range(n):
            s = 0.0
            for t in range(taps):
                k = kidx[j, t]
                s += clo[j, t] * a[r, k] + chi[j, t] * d[r, k]
            out[r, j] = s
