"""Linear cone-weight density filter over the core cells."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .grid import StructuredGrid


class FilterError(ValueError):
    pass


def _grid_signature(grid: StructuredGrid) -> tuple:
    lo, hi = grid.core_box
    return (grid.shape, grid.h, grid.hz, tuple(lo), tuple(hi))


def filter_matrix(grid: StructuredGrid, radius: float, allow_degenerate: bool = False) -> sp.csr_matrix:
    """Row-normalised cone-weight matrix F with ``gamma_hat = F @ gamma``.

    Rows and columns follow the C-order of ``grid.core_mask``.
    """
    if not radius > 0:
        raise FilterError("filter radius must be positive")
    pts = grid.core_cell_centers()
    n = len(pts)
    if radius <= 0.5 * grid.h:
        if not allow_degenerate:
            raise FilterError(
                f"radius {radius:g} <= h/2 = {0.5 * grid.h:g}: filter degenerates to identity"
            )
        return sp.identity(n, format="csr")
    neigh = cKDTree(pts).query_ball_point(pts, radius)
    rows = np.repeat(np.arange(n), [len(nb) for nb in neigh])
    cols = np.concatenate([np.sort(nb) for nb in neigh]).astype(int)
    w = radius - np.linalg.norm(pts[rows] - pts[cols], axis=1)
    keep = w > 0
    W = sp.csr_matrix((w[keep], (rows[keep], cols[keep])), shape=(n, n))
    rowsum = np.asarray(W.sum(axis=1)).ravel()
    return sp.diags(1.0 / rowsum) @ W


class DensityFilter:
    """Forward filter and its exact transpose for one grid and radius."""

    def __init__(self, grid: StructuredGrid, radius: float, allow_degenerate: bool = False):
        self.radius = float(radius)
        self.signature = _grid_signature(grid)
        self.matrix = filter_matrix(grid, radius, allow_degenerate).tocsr()
        self.matrix_t = self.matrix.T.tocsr()

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def _check(self, x, grid, radius):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.size,):
            raise FilterError(f"field has shape {x.shape}, filter expects ({self.size},)")
        if grid is not None and _grid_signature(grid) != self.signature:
            raise FilterError("grid differs from the one the filter was built on")
        if radius is not None and float(radius) != self.radius:
            raise FilterError(f"radius {radius} differs from forward radius {self.radius}")
        return x

    def apply(self, gamma, grid: StructuredGrid | None = None, radius: float | None = None) -> np.ndarray:
        return self.matrix @ self._check(gamma, grid, radius)

    def chain_rule(self, dj_dgamma_hat, grid: StructuredGrid | None = None,
                   radius: float | None = None) -> np.ndarray:
        """Pull a gradient w.r.t. the filtered field back to the raw field."""
        return self.matrix_t @ self._check(dj_dgamma_hat, grid, radius)


def apply_filter(gamma, grid: StructuredGrid, radius: float, allow_degenerate: bool = False) -> np.ndarray:
    return DensityFilter(grid, radius, allow_degenerate).apply(gamma)


def filter_chain_rule(dj_dgamma_hat, grid: StructuredGrid, radius: float,
                      allow_degenerate: bool = False) -> np.ndarray:
    return DensityFilter(grid, radius, allow_degenerate).chain_rule(dj_dgamma_hat)


def gamma_hat_to_c(gamma_hat, c_min: float, c_max: float) -> np.ndarray:
    """Level-set offset ``c`` for each filtered design value."""
    if not c_min < c_max:
        raise ValueError("c_min must be < c_max")
    g = np.asarray(gamma_hat, dtype=float)
    if np.any(g < -1e-12) or np.any(g > 1 + 1e-12):
        raise ValueError("gamma_hat outside [0, 1]")
    return c_min + np.clip(g, 0.0, 1.0) * (c_max - c_min)


def c_to_gamma_hat(c, c_min: float, c_max: float) -> np.ndarray:
    return (np.asarray(c, dtype=float) - c_min) / (c_max - c_min)
