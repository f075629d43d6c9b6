# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled scatter/segment kernels for the message-passing hot loop.

Same contract as pcbgnn._kernels_np: per output cell, addends are summed in
ascending value order so results are invariant to edge-row permutations.
"""

import numpy as np

cimport numpy as cnp
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef inline void _insertion_sort(double* buf, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef double x
    for i in range(1, n):
        x = buf[i]
        k = i - 1
        while k >= 0 and buf[k] > x:
            buf[k + 1] = buf[k]
            k -= 1
        buf[k + 1] = x


cdef inline void _sort_values(double* buf, Py_ssize_t n) noexcept nogil:
    # Shell sort: no recursion, fine for the segment sizes seen here
    # (node degrees; a few hundred at most for large ground nets).
    cdef Py_ssize_t gap, i, k
    cdef double x
    if n < 32:
        _insertion_sort(buf, n)
        return
    gap = n // 2
    while gap > 0:
        for i in range(gap, n):
            x = buf[i]
            k = i
            while k >= gap and buf[k - gap] > x:
                buf[k] = buf[k - gap]
                k -= gap
            buf[k] = x
        gap //= 2


def scatter_add_rows(values, idx, Py_ssize_t num_rows):
    """out[i, j] = sum of values[e, j] over e with idx[e] == i (value-sorted)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] ix = np.ascontiguousarray(idx, dtype=np.int64)
    cdef Py_ssize_t n_edges = v.shape[0]
    cdef Py_ssize_t dim = v.shape[1]
    if ix.shape[0] != n_edges:
        raise ValueError("idx length does not match values rows")
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] out = np.zeros((num_rows, dim), dtype=np.float64)
    if n_edges == 0:
        return out
    cdef Py_ssize_t e, j, s, seg_len, p
    for e in range(n_edges):
        if ix[e] < 0 or ix[e] >= num_rows:
            raise IndexError("scatter index out of range")
    # Group edges by target row (stable), then sort each segment's values
    # per column before accumulating.
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] order = np.argsort(ix, kind="stable").astype(np.int64)
    cdef double* buf = <double*> malloc(n_edges * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef double acc
    cdef Py_ssize_t row
    try:
        with nogil:
            s = 0
            while s < n_edges:
                row = ix[order[s]]
                seg_len = 1
                while s + seg_len < n_edges and ix[order[s + seg_len]] == row:
                    seg_len += 1
                for j in range(dim):
                    for p in range(seg_len):
                        buf[p] = v[order[s + p], j]
                    _sort_values(buf, seg_len)
                    acc = 0.0
                    for p in range(seg_len):
                        acc += buf[p]
                    out[row, j] = acc
                s += seg_len
    finally:
        free(buf)
    return out


def scatter_add_rows_fast(values, idx, Py_ssize_t num_rows):
    """Plain deterministic scatter-add in row order (gradient accumulation)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] ix = np.ascontiguousarray(idx, dtype=np.int64)
    cdef Py_ssize_t n_edges = v.shape[0]
    cdef Py_ssize_t dim = v.shape[1]
    if ix.shape[0] != n_edges:
        raise ValueError("idx length does not match values rows")
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] out = np.zeros((num_rows, dim), dtype=np.float64)
    cdef Py_ssize_t e, j, row
    for e in range(n_edges):
        if ix[e] < 0 or ix[e] >= num_rows:
            raise IndexError("scatter index out of range")
    with nogil:
        for e in range(n_edges):
            row = ix[e]
            for j in range(dim):
                out[row, j] += v[e, j]
    return out


def segment_max(values, idx, Py_ssize_t num_rows, double fill=-np.inf):
    """out[i, j] = max of values[e, j] over e with idx[e] == i, else fill."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] ix = np.ascontiguousarray(idx, dtype=np.int64)
    cdef Py_ssize_t n_edges = v.shape[0]
    cdef Py_ssize_t dim = v.shape[1]
    if ix.shape[0] != n_edges:
        raise ValueError("idx length does not match values rows")
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] out = np.full((num_rows, dim), fill, dtype=np.float64)
    cdef Py_ssize_t e, j
    for e in range(n_edges):
        if ix[e] < 0 or ix[e] >= num_rows:
            raise IndexError("segment index out of range")
    with nogil:
        for e in range(n_edges):
            for j in range(dim):
                if v[e, j] > out[ix[e], j]:
                    out[ix[e], j] = v[e, j]
    return out
