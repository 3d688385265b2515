# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels (CSR matmul, BFS levels)."""

import numpy as np


def spmm(indptr, indices, data, dense):
    """CSR-sparse times dense matrix product."""
    cdef const Py_ssize_t[::1] ip = indptr
    cdef const Py_ssize_t[::1] ix = indices
    cdef const double[::1] dv = data
    cdef const double[:, ::1] xv = np.ascontiguousarray(dense, dtype=np.float64)
    cdef Py_ssize_t n_rows = ip.shape[0] - 1
    cdef Py_ssize_t n_cols = xv.shape[1]
    out_arr = np.zeros((n_rows, n_cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, jj, j, c
    cdef double w
    for i in range(n_rows):
        for jj in range(ip[i], ip[i + 1]):
            j = ix[jj]
            w = dv[jj]
            for c in range(n_cols):
                out[i, c] += w * xv[j, c]
    return out_arr


def bfs_levels(indptr, indices, n, source):
    """Breadth-first hop counts from `source`; unreachable nodes get -1."""
    cdef const Py_ssize_t[::1] ip = indptr
    cdef const Py_ssize_t[::1] ix = indices
    cdef Py_ssize_t nn = n
    levels_arr = np.full(nn, -1, dtype=np.intp)
    queue_arr = np.empty(nn, dtype=np.intp)
    cdef Py_ssize_t[::1] levels = levels_arr
    cdef Py_ssize_t[::1] queue = queue_arr
    cdef Py_ssize_t head = 0, tail = 0
    cdef Py_ssize_t u, v, jj
    levels[source] = 0
    queue[tail] = source
    tail += 1
    while head < tail:
        u = queue[head]
        head += 1
        for jj in range(ip[u], ip[u + 1]):
            v = ix[jj]
            if levels[v] < 0:
                levels[v] = levels[u] + 1
                queue[tail] = v
                tail += 1
    return levels_arr
