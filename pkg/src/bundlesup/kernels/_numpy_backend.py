"""NumPy reference implementations of the hot kernels.

These are the fallback used when the compiled extension is not built.
Both backends must agree to floating-point roundoff on identical inputs.
"""

import numpy as np


def spmm(indptr, indices, data, dense):
    """CSR-sparse times dense matrix product.

    indptr/indices describe the sparsity pattern row-wise, data holds the
    nonzero values. Empty rows produce zero rows in the output.
    """
    dense = np.asarray(dense, dtype=np.float64)
    n_rows = indptr.shape[0] - 1
    out = np.zeros((n_rows, dense.shape[1]), dtype=np.float64)
    if indices.shape[0] == 0:
        return out
    gathered = data[:, None] * dense[indices]
    nonempty = np.flatnonzero(np.diff(indptr) > 0)
    # reduceat segment starts must be strictly in-bounds, which holds
    # because every listed row has at least one stored entry
    out[nonempty] = np.add.reduceat(gathered, indptr[nonempty], axis=0)
    return out


def bfs_levels(indptr, indices, n, source):
    """Breadth-first hop counts from `source`; unreachable nodes get -1."""
    levels = np.full(n, -1, dtype=np.intp)
    levels[source] = 0
    frontier = np.array([source], dtype=np.intp)
    depth = 0
    while frontier.size:
        depth += 1
        chunks = [indices[indptr[u]:indptr[u + 1]] for u in frontier]
        neighbors = np.unique(np.concatenate(chunks))
        frontier = neighbors[levels[neighbors] < 0]
        levels[frontier] = depth
    return levels
