"""Reconstruction of explicit graded gyroid walls from a design field."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from .filtering import gamma_hat_to_c
from .geometry import (CellField, GeometryError, GyroidSpec, MeshError, TriMesh, box_mesh, chord_lengths,
                       pinch_off_c, ray_hits, solid_mesh)
from .grid import StructuredGrid
from .materials import C_MAX, C_MIN, L_CELL

PARTITION_THICKNESS = 0.5e-3


class PinchOffError(GeometryError):
    def __init__(self, msg, cells=()):
        super().__init__(msg)
        self.cells = list(cells)


@dataclass
class DesignField:
    """Filtered design values on the core box, shape (nx, ny, nz)."""

    gamma_hat: np.ndarray
    origin: np.ndarray
    spacing: np.ndarray

    def __post_init__(self):
        self.gamma_hat = np.asarray(self.gamma_hat, dtype=float)
        if self.gamma_hat.ndim != 3 or self.gamma_hat.size == 0:
            raise GeometryError("design field must be a non-empty 3-D array")
        if not np.all(np.isfinite(self.gamma_hat)):
            raise GeometryError("design field does not cover the core box")
        self.origin = np.asarray(self.origin, dtype=float)
        self.spacing = np.broadcast_to(np.asarray(self.spacing, dtype=float), (3,)).copy()

    @property
    def box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.origin, self.origin + self.spacing * np.array(self.gamma_hat.shape)

    @classmethod
    def from_grid(cls, grid: StructuredGrid, gh_core) -> "DesignField":
        lo, hi = grid.core_box
        vals = np.asarray(gh_core, dtype=float).reshape(tuple(hi - lo))
        return cls(vals, lo * grid.spacing, grid.spacing)

    @classmethod
    def from_full(cls, values, spacing, origin=(0.0, 0.0, 0.0)) -> "DesignField":
        """From a full-grid array that is NaN outside the core."""
        v = np.asarray(values, dtype=float)
        idx = np.argwhere(np.isfinite(v))
        if len(idx) == 0:
            raise GeometryError("design field has no finite values")
        lo, hi = idx.min(axis=0), idx.max(axis=0) + 1
        sp_ = np.asarray(spacing, dtype=float)
        return cls(v[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]], np.asarray(origin) + lo * sp_, sp_)


@dataclass
class Dehomogenized:
    spec: GyroidSpec
    wall: TriMesh
    partitions: list
    mesh: TriMesh
    c: np.ndarray


def design_spec(design: DesignField, l_cell: float = L_CELL, c_min: float = C_MIN,
                c_max: float = C_MAX) -> GyroidSpec:
    c = gamma_hat_to_c(design.gamma_hat, c_min, c_max)
    lo, hi = design.box
    return GyroidSpec(l_cell, CellField(c, lo, design.spacing, c_min, c_max), lo, hi)


def check_pinch_off(c, l_cell: float, resolution: int = 32) -> None:
    """Raise :class:`PinchOffError` listing cells whose offset disconnects a fluid."""
    limit = pinch_off_c(l_cell, resolution)
    bad = np.argwhere(np.asarray(c) >= limit)
    if len(bad):
        cells = [tuple(int(i) for i in b) for b in bad]
        raise PinchOffError(f"{len(cells)} cells exceed the pinch-off offset {limit:.4g} m: {cells[:10]}", cells)


def partition_slabs(design: DesignField, flow_axis: int = 1, thickness: float = PARTITION_THICKNESS,
                    gap: float = 0.0) -> list[TriMesh]:
    """Solid slabs on both core faces normal to the flow axis.

    ``gap`` separates each slab from the core box so that the slab and the
    capped wall mesh stay disjoint closed shells.
    """
    lo, hi = design.box
    out = []
    for face, sgn in ((lo[flow_axis], -1.0), (hi[flow_axis], 1.0)):
        a, b = lo.copy(), hi.copy()
        near = face + sgn * gap
        a[flow_axis], b[flow_axis] = sorted((near, near + sgn * thickness))
        out.append(box_mesh(a, b))
    return out


def dehomogenize(design: DesignField, resolution: int = 16, l_cell: float = L_CELL, c_min: float = C_MIN,
                 c_max: float = C_MAX, partitions: bool = True, flow_axis: int = 1,
                 pinch_resolution: int = 32) -> Dehomogenized:
    """Graded wall mesh (plus partition slabs) for a design field.

    ``resolution`` is in voxels per unit cell and must be at least 8.
    """
    if resolution < 8:
        raise GeometryError("resolution must be >= 8 voxels per unit cell")
    spec = design_spec(design, l_cell, c_min, c_max)
    c = spec.c.values
    check_pinch_off(c, l_cell, pinch_resolution)
    wall = solid_mesh(spec, resolution)
    slabs = partition_slabs(design, flow_axis, gap=l_cell / resolution) if partitions else []
    mesh = wall
    for s in slabs:
        mesh = mesh.merge(s)
    mesh.watertight = mesh.is_watertight()
    if not mesh.watertight:
        raise MeshError("dehomogenized mesh is not watertight")
    return Dehomogenized(spec, wall, slabs, mesh, c)


def cell_thickness(wall: TriMesh, design: DesignField, rays_per_axis: int = 12, axis: int = 2) -> np.ndarray:
    """Mean solid chord length per design cell from rays along ``axis``.

    Ray positions use a fixed irrational jitter so that no ray passes
    exactly through a mesh vertex or edge on the voxel lattice.
    """
    if axis != 2:
        raise ValueError("only rays along z are supported")
    shape = design.gamma_hat.shape
    frac = (np.arange(rays_per_axis) + 0.5) / rays_per_axis
    fu = np.clip(frac + 0.0137 * np.sqrt(2.0), 0, 1)
    fv = np.clip(frac + 0.0113 * np.sqrt(3.0), 0, 1)
    ii, jj, a, b = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), fu, fv, indexing="ij")
    origins = np.stack([design.origin[0] + (ii + a).ravel() * design.spacing[0],
                        design.origin[1] + (jj + b).ravel() * design.spacing[1],
                        np.zeros(ii.size)], axis=1)
    cell = (ii * shape[1] + jj).ravel()
    zlo = design.box[0][2]
    total = np.zeros(shape[0] * shape[1] * shape[2])
    count = np.zeros_like(total)
    for c, hh in zip(cell, ray_hits(wall, origins, axis=axis)):
        seg = chord_lengths(hh)
        k = np.clip(((hh[0::2] + 0.5 * seg - zlo) // design.spacing[2]).astype(int), 0, shape[2] - 1)
        np.add.at(total, c * shape[2] + k, seg)
        np.add.at(count, c * shape[2] + k, 1)
    out = np.divide(total, count, out=np.zeros_like(total), where=count > 0)
    return out.reshape(shape)


def thickness_correlation(wall: TriMesh, design: DesignField, rays_per_axis: int = 12) -> float:
    """Spearman rank correlation between ray-cast thickness and the design."""
    t = cell_thickness(wall, design, rays_per_axis)
    g = design.gamma_hat.ravel()
    if np.ptp(g) == 0:
        return float("nan")
    return float(spearmanr(t.ravel(), g).statistic)
