"""Pure-numpy kernels; fallback when the compiled extension is unavailable.

Both backends implement the same contract: scatter_add_rows sums each output
cell's addends in ascending value order, so the result is a function of the
addend multiset only. Permuting edge rows (e.g. after relabeling graph
nodes) cannot change the output bits, which is what makes the GNN layers
exactly permutation-equivariant. The two backends may differ from each other
in the last ulp (different summation trees), but each is deterministic and
order-invariant on its own.
"""

from __future__ import annotations

import numpy as np


def scatter_add_rows(values: np.ndarray, idx: np.ndarray, num_rows: int) -> np.ndarray:
    """out[i, j] = sum of values[e, j] over e with idx[e] == i (value-sorted)."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    idx = np.asarray(idx, dtype=np.int64)
    if values.ndim != 2:
        raise ValueError(f"values must be 2-D, got shape {values.shape}")
    if idx.shape != (values.shape[0],):
        raise ValueError(f"idx shape {idx.shape} does not match {values.shape[0]} rows")
    out = np.zeros((num_rows, values.shape[1]), dtype=np.float64)
    if values.shape[0] == 0:
        return out
    if idx.size and (idx.min() < 0 or idx.max() >= num_rows):
        raise IndexError("scatter index out of range")
    for j in range(values.shape[1]):
        order = np.lexsort((values[:, j], idx))
        v = values[order, j]
        ids = idx[order]
        starts = np.concatenate(([0], np.flatnonzero(np.diff(ids)) + 1))
        out[ids[starts], j] = np.add.reduceat(v, starts)
    return out


def scatter_add_rows_fast(values: np.ndarray, idx: np.ndarray, num_rows: int) -> np.ndarray:
    """Plain deterministic scatter-add (row order, no canonical value sort).

    Used for gradient accumulation, where bit-level invariance to input
    permutations is not part of the contract.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape != (values.shape[0],):
        raise ValueError(f"idx shape {idx.shape} does not match {values.shape[0]} rows")
    out = np.zeros((num_rows, values.shape[1]), dtype=np.float64)
    if values.shape[0]:
        if idx.min() < 0 or idx.max() >= num_rows:
            raise IndexError("scatter index out of range")
        np.add.at(out, idx, values)
    return out


def segment_max(values: np.ndarray, idx: np.ndarray, num_rows: int, fill: float = -np.inf) -> np.ndarray:
    """out[i, j] = max of values[e, j] over e with idx[e] == i, else fill."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape != (values.shape[0],):
        raise ValueError(f"idx shape {idx.shape} does not match {values.shape[0]} rows")
    out = np.full((num_rows, values.shape[1]), fill, dtype=np.float64)
    if values.shape[0]:
        if idx.min() < 0 or idx.max() >= num_rows:
            raise IndexError("segment index out of range")
        np.maximum.at(out, idx, values)
    return out
