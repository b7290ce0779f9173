"""Two-level-set gyroid walls: phase queries, cell measurements and meshing."""
from __future__ import annotations

import json
import logging
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from skimage.measure import marching_cubes

logger = logging.getLogger(__name__)

SOLID, FLUID1, FLUID2 = 0, 1, 2

# triangle labels
WALL_FLUID1, WALL_FLUID2, CAP, PARTITION = 0, 1, 2, 3


class GeometryError(ValueError):
    pass


class MeshError(GeometryError):
    pass


def gyroid(x, y, z, l_cell: float):
    """Gyroid level-set function, range [-1.5, 1.5]."""
    k = 2.0 * np.pi / l_cell
    X, Y, Z = k * np.asarray(x), k * np.asarray(y), k * np.asarray(z)
    return np.sin(X) * np.cos(Y) + np.sin(Z) * np.cos(X) + np.sin(Y) * np.cos(Z)


TPMS_FUNCTIONS = {"gyroid": gyroid}


@dataclass
class CellField:
    """Cell-centred values on a regular lattice, trilinearly interpolated.

    Points outside the span of cell centres take the nearest edge value, and
    interpolated values are clamped to ``[lo, hi]``.
    """

    values: np.ndarray
    origin: np.ndarray
    spacing: np.ndarray
    lo: float = -np.inf
    hi: float = np.inf

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3:
            raise GeometryError("cell field must be a 3-D array")
        self.origin = np.asarray(self.origin, dtype=float)
        self.spacing = np.broadcast_to(np.asarray(self.spacing, dtype=float), (3,)).copy()

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        v = self.values
        idx0, frac = [], []
        for a in range(3):
            n = v.shape[a]
            s = (pts[..., a] - self.origin[a]) / self.spacing[a] - 0.5
            s = np.clip(s, 0.0, n - 1)
            i0 = np.minimum(np.floor(s).astype(int), max(n - 2, 0))
            idx0.append(i0)
            frac.append(s - i0 if n > 1 else np.zeros_like(s))
        out = np.zeros(pts.shape[:-1])
        for corner in range(8):
            bits = [(corner >> a) & 1 for a in range(3)]
            w = np.ones(pts.shape[:-1])
            ii = []
            for a in range(3):
                n = v.shape[a]
                w = w * (frac[a] if bits[a] else 1.0 - frac[a])
                ii.append(np.minimum(idx0[a] + bits[a], n - 1))
            out += w * v[ii[0], ii[1], ii[2]]
        return np.clip(out, self.lo, self.hi)


@dataclass
class GyroidSpec:
    """Graded two-level-set gyroid inside an axis-aligned box.

    ``c`` is either a constant offset [m] or a :class:`CellField`.
    """

    l_cell: float
    c: float | CellField = 0.0
    box_lo: np.ndarray = field(default_factory=lambda: np.zeros(3))
    box_hi: np.ndarray | None = None
    family: str = "gyroid"

    def __post_init__(self):
        if not self.l_cell > 0:
            raise GeometryError("l_cell must be positive")
        self.box_lo = np.asarray(self.box_lo, dtype=float)
        self.box_hi = (np.full(3, self.l_cell) if self.box_hi is None
                       else np.asarray(self.box_hi, dtype=float))
        if np.any(self.box_hi <= self.box_lo):
            raise GeometryError("empty domain box")
        if not isinstance(self.c, CellField) and self.c < 0:
            raise GeometryError("c must be non-negative")

    def c_at(self, pts: np.ndarray) -> np.ndarray:
        if isinstance(self.c, CellField):
            return self.c(pts)
        return np.full(np.shape(pts)[:-1], float(self.c))

    def g(self, pts: np.ndarray) -> np.ndarray:
        f = TPMS_FUNCTIONS[self.family]
        return f(pts[..., 0], pts[..., 1], pts[..., 2], self.l_cell)

    def level_sets(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``(G1, G2)``; the wall is where both are >= 0."""
        t = self.c_at(pts) / self.l_cell
        g = self.g(pts)
        return t + g, t - g

    def to_json(self) -> dict:
        d = {"l_cell_m": self.l_cell, "family": self.family,
             "box_lo_m": self.box_lo.tolist(), "box_hi_m": self.box_hi.tolist()}
        if isinstance(self.c, CellField):
            d["c_field_m"] = {"values": self.c.values.tolist(), "origin_m": self.c.origin.tolist(),
                              "spacing_m": self.c.spacing.tolist(), "lo": self.c.lo, "hi": self.c.hi}
        else:
            d["c_m"] = float(self.c)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "GyroidSpec":
        if "c_field_m" in d:
            f = d["c_field_m"]
            c = CellField(np.array(f["values"]), f["origin_m"], f["spacing_m"], f["lo"], f["hi"])
        else:
            c = d["c_m"]
        return cls(d["l_cell_m"], c, d["box_lo_m"], d["box_hi_m"], d.get("family", "gyroid"))


def phase_at(points, spec: GyroidSpec) -> np.ndarray:
    """Phase code per point: SOLID (0), FLUID1 (1) or FLUID2 (2)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    g1, g2 = spec.level_sets(pts)
    out = np.full(len(pts), SOLID, dtype=np.int8)
    out[g1 < 0] = FLUID1
    out[g2 < 0] = FLUID2
    return out


def _cell_samples(l_cell: float, n: int) -> np.ndarray:
    t = (np.arange(n) + 0.5) * (l_cell / n)
    return np.stack(np.meshgrid(t, t, t, indexing="ij"), axis=-1)


def _triangle_areas(verts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def _nudge(vol: np.ndarray) -> np.ndarray:
    # values on (or within rounding of) the level produce coincident vertices
    vol = np.array(vol, dtype=float)
    eps = 1e-4 * max(float(np.max(np.abs(vol))), 1e-300)
    near = np.abs(vol) < eps
    vol[near] = np.where(vol[near] < 0, -eps, eps)
    return vol


def surface_area(l_cell: float, offset: float, resolution: int = 64, family: str = "gyroid") -> float:
    """Area [m^2] of the periodic surface ``g = offset`` inside one unit cell."""
    t = np.linspace(0.0, l_cell, resolution + 1)
    X, Y, Z = np.meshgrid(t, t, t, indexing="ij")
    vol = _nudge(TPMS_FUNCTIONS[family](X, Y, Z, l_cell) - offset)
    d = l_cell / resolution
    verts, faces, _, _ = marching_cubes(vol, 0.0, spacing=(d, d, d))
    return float(_triangle_areas(verts, faces).sum())


@dataclass
class CellMeasure:
    eps1: float
    eps2: float
    solid_frac: float
    area1: float
    area2: float
    stderr: float

    @property
    def porosity(self) -> float:
        return self.eps1 + self.eps2


def measure_cell(spec: GyroidSpec, samples: int = 64 ** 3, area_resolution: int = 64,
                 tol: float | None = None) -> CellMeasure:
    """Volume fractions and interfacial areas of one unit cell at constant c.

    Volumes use stratified midpoint sampling on an n^3 lattice with
    n = round(samples ** (1/3)).
    """
    if samples < 10_000:
        raise GeometryError("measure_cell needs at least 1e4 samples")
    if isinstance(spec.c, CellField):
        raise GeometryError("measure_cell needs a constant c")
    n = int(round(samples ** (1.0 / 3.0)))
    pts = _cell_samples(spec.l_cell, n)
    g1, g2 = spec.level_sets(pts)
    N = n ** 3
    n1 = int(np.count_nonzero(g1 < 0))
    n2 = int(np.count_nonzero(g2 < 0))
    ns = N - n1 - n2
    p = (n1 + n2) / N
    se = float(np.sqrt(max(p * (1 - p), 1e-300) / N))
    if tol is not None and se > tol:
        warnings.warn(f"estimated standard error {se:.2e} exceeds tolerance {tol:.2e}", stacklevel=2)
    t = float(spec.c) / spec.l_cell
    a1 = surface_area(spec.l_cell, -t, area_resolution, spec.family)
    a2 = surface_area(spec.l_cell, t, area_resolution, spec.family)
    return CellMeasure(n1 / N, n2 / N, ns / N, a1, a2, se)


# ---------------------------------------------------------------------------
# connectivity / pinch-off
# ---------------------------------------------------------------------------

def _periodic_components(mask: np.ndarray) -> int:
    """Number of face-connected components of ``mask`` on a periodic lattice."""
    idx = -np.ones(mask.shape, dtype=np.int64)
    idx[mask] = np.arange(int(mask.sum()))
    rows, cols = [], []
    for a in range(3):
        nb = np.roll(idx, -1, axis=a)
        both = (idx >= 0) & (nb >= 0)
        rows.append(idx[both])
        cols.append(nb[both])
    n = int(mask.sum())
    if n == 0:
        return 0
    r, c = np.concatenate(rows), np.concatenate(cols)
    A = sp.coo_matrix((np.ones(len(r)), (r, c)), shape=(n, n))
    return connected_components(A, directed=False)[0]


def fluid_connected(c: float, l_cell: float, resolution: int = 32, family: str = "gyroid") -> bool:
    """True when both fluid phases of a periodic cell are single components."""
    spec = GyroidSpec(l_cell, c, family=family)
    pts = _cell_samples(l_cell, resolution)
    g1, g2 = spec.level_sets(pts)
    return _periodic_components(g1 < 0) == 1 and _periodic_components(g2 < 0) == 1


def pinch_off_c(l_cell: float, resolution: int = 32, family: str = "gyroid", tol: float = 1e-3) -> float:
    """Smallest offset c [m] (to ``tol * l_cell``) at which a fluid phase disconnects."""
    lo, hi = 0.0, 1.5 * l_cell
    while hi - lo > tol * l_cell:
        mid = 0.5 * (lo + hi)
        if fluid_connected(mid, l_cell, resolution, family):
            lo = mid
        else:
            hi = mid
    return hi


# ---------------------------------------------------------------------------
# meshes
# ---------------------------------------------------------------------------

@dataclass
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray
    labels: np.ndarray | None = None
    watertight: bool = False

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.labels is None:
            self.labels = np.zeros(len(self.faces), dtype=np.int8)
        self.labels = np.asarray(self.labels, dtype=np.int8)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def triangle_areas(self) -> np.ndarray:
        return _triangle_areas(self.vertices, self.faces)

    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def edge_counts(self) -> np.ndarray:
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts

    def is_watertight(self) -> bool:
        return self.n_faces > 0 and bool(np.all(self.edge_counts() == 2))

    def euler_characteristic(self) -> int:
        used = np.unique(self.faces)
        return len(used) - len(self.edge_counts()) + self.n_faces

    def merge(self, other: "TriMesh") -> "TriMesh":
        off = len(self.vertices)
        return TriMesh(np.vstack([self.vertices, other.vertices]),
                       np.vstack([self.faces, other.faces + off]),
                       np.concatenate([self.labels, other.labels]),
                       self.watertight and other.watertight)

    def volume(self) -> float:
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def _mesh_from_volume(vol: np.ndarray, origin: np.ndarray, d: np.ndarray,
                      min_area: float) -> tuple[np.ndarray, np.ndarray]:
    """Closed isosurface of ``{vol >= 0}``: pad with an outside layer first."""
    padded = np.pad(_nudge(vol), 1, constant_values=-1.0)
    verts, faces, _, _ = marching_cubes(padded, 0.0, spacing=tuple(d), allow_degenerate=True)
    verts = verts - d + origin
    # skimage orients normals toward decreasing values; flip to point outward
    faces = faces[:, ::-1].astype(np.int64)
    areas = _triangle_areas(verts, faces)
    if np.any(areas <= min_area):
        raise MeshError(f"{int(np.sum(areas <= min_area))} degenerate triangles")
    return verts, faces


def _sample_box(spec: GyroidSpec, resolution: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if resolution < 8:
        raise GeometryError("resolution must be >= 8 voxels per unit cell")
    ext = spec.box_hi - spec.box_lo
    n = np.maximum(np.round(ext / spec.l_cell * resolution).astype(int), 1)
    d = ext / n
    axes = [spec.box_lo[a] + d[a] * np.arange(n[a] + 1) for a in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return pts, spec.box_lo.copy(), d


def _check_manifold(verts, faces):
    m = TriMesh(verts, faces)
    if not m.is_watertight():
        raise MeshError("isosurface is not a closed 2-manifold")


def extract_isosurface(spec: GyroidSpec, which: str = "G1", resolution: int = 32) -> TriMesh:
    """Closed mesh bounding ``{G >= 0}`` inside the box for one level set.

    Cut faces on the box boundary are capped; the caps sit within half a
    voxel outside the box.
    """
    pts, origin, d = _sample_box(spec, resolution)
    g1, g2 = spec.level_sets(pts)
    vol = {"G1": g1, "G2": g2}[which.upper()]
    verts, faces = _mesh_from_volume(vol, origin, d, 1e-12 * spec.l_cell ** 2)
    _check_manifold(verts, faces)
    labels = _label_faces(spec, verts, faces, which.upper())
    return TriMesh(verts, faces, labels, watertight=True)


def _label_faces(spec, verts, faces, which):
    cen = verts[faces].mean(axis=1)
    outside = np.any((cen < spec.box_lo + 1e-9) | (cen > spec.box_hi - 1e-9), axis=1)
    g1, g2 = spec.level_sets(np.clip(cen, spec.box_lo, spec.box_hi))
    if which == "G1":
        lab = np.full(len(faces), WALL_FLUID1, dtype=np.int8)
    elif which == "G2":
        lab = np.full(len(faces), WALL_FLUID2, dtype=np.int8)
    else:
        lab = np.where(g1 <= g2, WALL_FLUID1, WALL_FLUID2).astype(np.int8)
    lab[outside] = CAP
    return lab


def solid_mesh(spec: GyroidSpec, resolution: int = 32) -> TriMesh:
    """Closed mesh of the wall region ``G1 >= 0 and G2 >= 0`` in the box."""
    pts, origin, d = _sample_box(spec, resolution)
    g1, g2 = spec.level_sets(pts)
    verts, faces = _mesh_from_volume(np.minimum(g1, g2), origin, d, 1e-12 * spec.l_cell ** 2)
    _check_manifold(verts, faces)
    return TriMesh(verts, faces, _label_faces(spec, verts, faces, "both"), watertight=True)


def box_mesh(lo, hi, label: int = PARTITION) -> TriMesh:
    """Closed, outward-oriented axis-aligned box (12 triangles)."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    v = np.array([[lo[0] if i & 1 == 0 else hi[0],
                   lo[1] if i & 2 == 0 else hi[1],
                   lo[2] if i & 4 == 0 else hi[2]] for i in range(8)])
    f = np.array([[0, 2, 1], [1, 2, 3], [4, 5, 6], [5, 7, 6],
                  [0, 1, 4], [1, 5, 4], [2, 6, 3], [3, 6, 7],
                  [0, 4, 2], [2, 4, 6], [1, 3, 5], [3, 7, 5]])
    return TriMesh(v, f, np.full(12, label, dtype=np.int8), watertight=True)


# ---------------------------------------------------------------------------
# STL / VTK
# ---------------------------------------------------------------------------

def facet_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    a, b, c = vertices[faces[:, 0]], vertices[faces[:, 1]], vertices[faces[:, 2]]
    n = np.cross(b - a, c - a)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    return n / np.where(norm > 0, norm, 1.0)


_STL_DTYPE = np.dtype([("normal", "<f4", (3,)), ("v", "<f4", (3, 3)), ("attr", "<u2")])


def export_stl(mesh: TriMesh, path, validate: bool = False, header: bytes = b"gyroidhx binary STL") -> None:
    """Binary little-endian STL with normals recomputed from the winding."""
    if validate and not (mesh.watertight and mesh.is_watertight()):
        raise MeshError("refusing validated export of a non-watertight mesh")
    v32 = mesh.vertices.astype("<f4")
    rec = np.zeros(mesh.n_faces, dtype=_STL_DTYPE)
    rec["v"] = v32[mesh.faces]
    rec["normal"] = facet_normals(v32.astype(float), mesh.faces).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(header[:80].ljust(80, b"\0"))
        fh.write(struct.pack("<I", mesh.n_faces))
        fh.write(rec.tobytes())


def read_stl(path) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(triangles (m,3,3) float32, normals (m,3) float32)``."""
    data = Path(path).read_bytes()
    if len(data) < 84:
        raise MeshError("file too short for binary STL")
    (n,) = struct.unpack("<I", data[80:84])
    if len(data) != 84 + 50 * n:
        raise MeshError(f"size {len(data)} inconsistent with {n} facets")
    rec = np.frombuffer(data[84:], dtype=_STL_DTYPE, count=n)
    return rec["v"].copy(), rec["normal"].copy()


def mesh_from_triangles(tris: np.ndarray) -> TriMesh:
    """Index a triangle soup by exact vertex equality."""
    flat = tris.reshape(-1, 3)
    uniq, inv = np.unique(flat, axis=0, return_inverse=True)
    return TriMesh(uniq.astype(float), inv.reshape(-1, 3))


def write_vtk_polydata(mesh: TriMesh, path, title: str = "gyroidhx mesh") -> None:
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(title[:255] + "\nASCII\nDATASET POLYDATA\n")
        fh.write(f"POINTS {len(mesh.vertices)} double\n")
        for x, y, z in mesh.vertices:
            fh.write(f"{x!r} {y!r} {z!r}\n")
        fh.write(f"POLYGONS {mesh.n_faces} {4 * mesh.n_faces}\n")
        for a, b, c in mesh.faces:
            fh.write(f"3 {a} {b} {c}\n")
        fh.write(f"CELL_DATA {mesh.n_faces}\nSCALARS label int 1\nLOOKUP_TABLE default\n")
        fh.write("\n".join(str(int(v)) for v in mesh.labels) + "\n")


def save_spec_json(spec: GyroidSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_json(), indent=2))


# ---------------------------------------------------------------------------
# ray casting
# ---------------------------------------------------------------------------

def ray_hits(mesh: TriMesh, origins: np.ndarray, axis: int = 2, bin_size: float | None = None) -> list[np.ndarray]:
    """Sorted hit coordinates along ``axis`` for axis-aligned rays.

    ``origins`` are (m, 3); only the two transverse coordinates are used.
    """
    u, v = [a for a in range(3) if a != axis]
    tri = mesh.vertices[mesh.faces]
    tu, tv = tri[:, :, u], tri[:, :, v]
    umin, umax = tu.min(axis=1), tu.max(axis=1)
    vmin, vmax = tv.min(axis=1), tv.max(axis=1)
    if bin_size is None:
        bin_size = 4.0 * float(np.median(np.maximum(umax - umin, vmax - vmin)) + 1e-300)
    u0, v0 = umin.min(), vmin.min()
    bins: dict[tuple[int, int], list[int]] = {}
    iu0 = np.floor((umin - u0) / bin_size).astype(int)
    iu1 = np.floor((umax - u0) / bin_size).astype(int)
    iv0 = np.floor((vmin - v0) / bin_size).astype(int)
    iv1 = np.floor((vmax - v0) / bin_size).astype(int)
    for t in range(len(tri)):
        for a in range(iu0[t], iu1[t] + 1):
            for b in range(iv0[t], iv1[t] + 1):
                bins.setdefault((a, b), []).append(t)
    out = []
    for o in np.atleast_2d(origins):
        key = (int(np.floor((o[u] - u0) / bin_size)), int(np.floor((o[v] - v0) / bin_size)))
        cand = np.array(bins.get(key, []), dtype=int)
        if len(cand) == 0:
            out.append(np.empty(0))
            continue
        p = tri[cand]
        pu, pv = p[:, :, u] - o[u], p[:, :, v] - o[v]
        # signed areas of the sub-triangles around the ray in the (u, v) plane
        w0 = pu[:, 1] * pv[:, 2] - pu[:, 2] * pv[:, 1]
        w1 = pu[:, 2] * pv[:, 0] - pu[:, 0] * pv[:, 2]
        w2 = pu[:, 0] * pv[:, 1] - pu[:, 1] * pv[:, 0]
        s = w0 + w1 + w2
        sg = np.sign(s)
        # a ray through a shared edge or vertex is owned by exactly one
        # triangle: zero edge functions count only on "top-left" edges
        inside = s != 0
        for w, a, b in ((w0, 1, 2), (w1, 2, 0), (w2, 0, 1)):
            du, dv = sg * (pu[:, b] - pu[:, a]), sg * (pv[:, b] - pv[:, a])
            top_left = (dv > 0) | ((dv == 0) & (du < 0))
            inside &= (sg * w > 0) | ((w == 0) & top_left)
        if not np.any(inside):
            out.append(np.empty(0))
            continue
        wa, wb, wc, ss = w0[inside], w1[inside], w2[inside], s[inside]
        pa = p[inside][:, :, axis]
        depth = (wa * pa[:, 0] + wb * pa[:, 1] + wc * pa[:, 2]) / ss
        out.append(np.sort(depth))
    return out


def chord_lengths(hits: np.ndarray) -> np.ndarray:
    """Lengths of inside segments for a ray crossing a closed surface."""
    if len(hits) % 2:
        raise MeshError("odd number of crossings: ray grazes an edge or mesh is open")
    return hits[1::2] - hits[0::2]
