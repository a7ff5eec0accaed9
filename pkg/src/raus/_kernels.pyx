# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for categorical draws over cumulative outcome tables.

Each row ``r`` of ``cum`` is a nondecreasing cumulative distribution over
``M`` outcomes whose last entry is the total probability of *any* outcome;
uniform draws beyond it mean "no outcome" (a silent device).  The outcome
for a uniform ``u`` is the number of entries of the row that are ``<= u``,
so results match the numpy fallback bit for bit.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def draw_outcomes(const double[:, ::1] cum, const double[:, ::1] u):
    """Outcome index per (trial, row); ``M`` marks a silent row."""
    cdef Py_ssize_t T = u.shape[0], R = cum.shape[0], M = cum.shape[1]
    cdef Py_ssize_t t, r, j
    cdef double x
    if u.shape[1] != R:
        raise ValueError("u must have one column per table row")
    out = np.empty((T, R), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] o = out
    with nogil:
        for t in range(T):
            for r in range(R):
                x = u[t, r]
                j = 0
                while j < M and x >= cum[r, j]:
                    j += 1
                o[t, r] = j
    return out


def count_hits(const double[:, ::1] cum, const double[:, ::1] u,
               const cnp.int64_t[::1] group, Py_ssize_t n_groups):
    """Per-trial outcome counts, shape ``(T, n_groups, M)``.

    ``group[r]`` assigns table row ``r`` to a preamble pool (a subvector).
    """
    cdef Py_ssize_t T = u.shape[0], R = cum.shape[0], M = cum.shape[1]
    cdef Py_ssize_t t, r, j, g
    cdef double x
    if u.shape[1] != R or group.shape[0] != R:
        raise ValueError("u and group must have one entry per table row")
    for r in range(R):
        if group[r] < 0 or group[r] >= n_groups:
            raise ValueError("group index out of range")
    counts = np.zeros((T, n_groups, M), dtype=np.int64)
    cdef cnp.int64_t[:, :, ::1] c = counts
    with nogil:
        for t in range(T):
            for r in range(R):
                x = u[t, r]
                j = 0
                while j < M and x >= cum[r, j]:
                    j += 1
                if j < M:
                    g = group[r]
                    c[t, g, j] += 1
    return counts
