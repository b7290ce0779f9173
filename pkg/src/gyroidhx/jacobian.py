"""Sparse Jacobians by complex-step differentiation with column colouring.

Residual rows and unknown columns carry an anchor position (face or cell
centre, in index units). A column may only influence rows whose anchor lies
within ``radius`` (Chebyshev) of its own, so columns that never share a row
can be perturbed together.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

CS_STEP = 1e-30


def sparsity_pattern(row_anchor, col_anchor, radius: float = 1.01,
                     row_block=None, col_block=None, coupling=None) -> sp.csr_matrix:
    """Boolean pattern of rows within ``radius`` of each column anchor.

    ``coupling[rb, cb]`` (optional) removes blocks known to be independent.
    """
    row_anchor = np.atleast_2d(np.asarray(row_anchor, dtype=float))
    col_anchor = np.atleast_2d(np.asarray(col_anchor, dtype=float))
    tree = cKDTree(row_anchor)
    hits = tree.query_ball_point(col_anchor, radius, p=np.inf)
    cols = np.repeat(np.arange(len(col_anchor)), [len(h) for h in hits])
    rows = np.concatenate([np.asarray(h, dtype=int) for h in hits]) if len(cols) else np.zeros(0, int)
    if coupling is not None:
        keep = np.asarray(coupling, bool)[np.asarray(row_block)[rows], np.asarray(col_block)[cols]]
        rows, cols = rows[keep], cols[keep]
    return sp.csr_matrix((np.ones(len(rows), bool), (rows, cols)),
                         shape=(len(row_anchor), len(col_anchor)))


def greedy_coloring(pattern: sp.spmatrix) -> np.ndarray:
    """Colour columns so that no two columns of one colour share a row."""
    P = sp.csc_matrix(pattern, dtype=np.int8)
    conflict = (P.T @ P).tocsr()
    n = conflict.shape[0]
    color = -np.ones(n, dtype=int)
    for j in range(n):
        nb = conflict.indices[conflict.indptr[j]:conflict.indptr[j + 1]]
        used = set(color[nb][color[nb] >= 0].tolist())
        c = 0
        while c in used:
            c += 1
        color[j] = c
    return color


class ColoredJacobian:
    """Reusable complex-step Jacobian for a fixed sparsity pattern."""

    def __init__(self, pattern: sp.spmatrix):
        self.pattern = sp.csr_matrix(pattern, dtype=bool)
        self.color = greedy_coloring(self.pattern)
        self.ncolors = int(self.color.max()) + 1 if len(self.color) else 0
        coo = self.pattern.tocoo()
        self.rows, self.cols = coo.row, coo.col

    def __call__(self, fun, x) -> sp.csr_matrix:
        x = np.asarray(x, dtype=float)
        nrow, ncol = self.pattern.shape
        vals = np.zeros(len(self.rows))
        for c in range(self.ncolors):
            xc = x.astype(complex)
            xc[self.color == c] += 1j * CS_STEP
            d = np.imag(fun(xc)) / CS_STEP
            sel = self.color[self.cols] == c
            vals[sel] = d[self.rows[sel]]
        return sp.csr_matrix((vals, (self.rows, self.cols)), shape=(nrow, ncol))


def complex_step_gradient(fun, x, support) -> np.ndarray:
    """Gradient of a scalar function over the indices in ``support`` (zero elsewhere)."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in np.unique(np.asarray(support, dtype=int)):
        xc = x.astype(complex)
        xc[i] += 1j * CS_STEP
        g[i] = np.imag(fun(xc)) / CS_STEP
    return g
