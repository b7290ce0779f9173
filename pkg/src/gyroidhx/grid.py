"""Structured grids, region tags and the default counterflow layout."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SOLID = 0
CORE = 1
FLUID1_PLENUM = 2
FLUID2_PLENUM = 3
SHARED_PLENUM = 4

REGION_NAMES = {
    SOLID: "SOLID",
    CORE: "CORE",
    FLUID1_PLENUM: "FLUID1_PLENUM",
    FLUID2_PLENUM: "FLUID2_PLENUM",
    SHARED_PLENUM: "SHARED_PLENUM",
}


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class BoundaryFace:
    """A boundary face of the cell grid.

    ``axis`` is 0/1/2 and ``index`` is the face-grid index triple, i.e. the
    face sits between cells ``index - e_axis`` and ``index`` along ``axis``.
    """

    axis: int
    index: tuple[int, int, int]

    @property
    def side(self) -> int:
        """-1 for a face on the low boundary, +1 on the high boundary."""
        return -1 if self.index[self.axis] == 0 else 1


@dataclass
class StructuredGrid:
    """Uniform cell-centred Cartesian grid.

    In-plane cells are squares of edge ``h``; the z spacing ``hz`` defaults to
    ``h`` and may differ only for one-cell-thick (quasi-2D) grids.
    """

    nx: int
    ny: int
    nz: int
    h: float
    region: np.ndarray
    inlets: dict[int, list[BoundaryFace]] = field(default_factory=dict)
    outlets: dict[int, list[BoundaryFace]] = field(default_factory=dict)
    hz: float | None = None

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 1:
            raise GridError("cell counts must be >= 1")
        if not self.h > 0:
            raise GridError("cell size must be positive")
        if self.hz is None:
            self.hz = self.h
        if not self.hz > 0:
            raise GridError("z spacing must be positive")
        if self.hz != self.h and self.nz != 1:
            raise GridError("anisotropic spacing is only allowed for nz == 1")
        self.region = np.asarray(self.region, dtype=np.int8).reshape(self.shape)
        for faces in list(self.inlets.values()) + list(self.outlets.values()):
            for f in faces:
                n = self.shape[f.axis]
                if f.index[f.axis] not in (0, n):
                    raise GridError(f"face {f} is not on the domain boundary")
        if np.any(self.region == CORE):
            idx = np.argwhere(self.region == CORE)
            lo, hi = idx.min(axis=0), idx.max(axis=0) + 1
            box = self.region[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
            if not np.all(box == CORE):
                raise GridError("CORE cells must form a single box-shaped block")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def ncells(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def spacing(self) -> np.ndarray:
        return np.array([self.h, self.h, self.hz])

    @property
    def cell_volume(self) -> float:
        return self.h * self.h * self.hz

    def face_area(self, axis: int) -> float:
        return self.cell_volume / self.spacing[axis]

    def centers(self) -> np.ndarray:
        """Cell-centre coordinates, shape (nx, ny, nz, 3)."""
        axes = [(np.arange(n) + 0.5) * d for n, d in zip(self.shape, self.spacing)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    @property
    def core_mask(self) -> np.ndarray:
        return self.region == CORE

    @property
    def core_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Index bounds ``(lo, hi)`` of the core block (hi exclusive)."""
        idx = np.argwhere(self.core_mask)
        if len(idx) == 0:
            raise GridError("grid has no CORE cells")
        return idx.min(axis=0), idx.max(axis=0) + 1

    def fluid_mask(self, fluid: int) -> np.ndarray:
        """Cells carrying the flow/thermal fields of ``fluid`` (1 or 2)."""
        own = FLUID1_PLENUM if fluid == 1 else FLUID2_PLENUM
        return (self.region == CORE) | (self.region == own) | (self.region == SHARED_PLENUM)

    def degenerate_axes(self) -> tuple[bool, bool, bool]:
        return tuple(n == 1 for n in self.shape)

    def core_cell_centers(self) -> np.ndarray:
        return self.centers()[self.core_mask]


def channel_1d(n: int, h: float, counterflow: bool = True) -> StructuredGrid:
    """All-core straight channel along x with inlets on opposite ends."""
    region = np.full((n, 1, 1), CORE, dtype=np.int8)
    left = [BoundaryFace(0, (0, 0, 0))]
    right = [BoundaryFace(0, (n, 0, 0))]
    inlets = {1: left, 2: right if counterflow else left}
    outlets = {1: right, 2: left if counterflow else right}
    return StructuredGrid(n, 1, 1, h, region, inlets, outlets)


def counterflow_layout(
    core_cells: tuple[int, int] = (8, 8),
    l_cell: float = 4.6e-3,
    refine: int = 1,
    duct_width_cells: int = 2,
    duct_length_cells: int = 1,
    depth: float | None = None,
) -> StructuredGrid:
    """Quasi-2D counterflow exchanger: square core fed by centred ducts.

    Fluid 1 enters through the bottom duct (y = 0) and leaves through the top
    duct; fluid 2 runs the opposite way. The ducts are shared plenum cells in
    which the two streams are independent continua (the partition wall is
    implicit). Sizes are in unit cells; ``refine`` subdivides each unit cell
    in-plane.
    """
    cx, cy = core_cells
    if duct_width_cells > cx:
        raise GridError("duct wider than core")
    n = refine
    h = l_cell / n
    nx, ny = cx * n, (cy + 2 * duct_length_cells) * n
    region = np.full((nx, ny, 1), SOLID, dtype=np.int8)
    d0 = duct_length_cells * n
    region[:, d0:d0 + cy * n, :] = CORE
    w0 = ((cx - duct_width_cells) * n) // 2
    w1 = w0 + duct_width_cells * n
    region[w0:w1, :d0, :] = SHARED_PLENUM
    region[w0:w1, d0 + cy * n:, :] = SHARED_PLENUM
    bottom = [BoundaryFace(1, (i, 0, 0)) for i in range(w0, w1)]
    top = [BoundaryFace(1, (i, ny, 0)) for i in range(w0, w1)]
    return StructuredGrid(
        nx, ny, 1, h, region,
        inlets={1: bottom, 2: top},
        outlets={1: top, 2: bottom},
        hz=l_cell if depth is None else depth,
    )
