import time

import numpy as np
import pytest

from gyroidhx.geometry import (CAP, FLUID1, FLUID2, SOLID, CellField, GeometryError, GyroidSpec, MeshError,
                               TriMesh, box_mesh, chord_lengths, export_stl, extract_isosurface, fluid_connected,
                               gyroid, measure_cell, mesh_from_triangles, phase_at, pinch_off_c, ray_hits,
                               read_stl, solid_mesh, surface_area, write_vtk_polydata)
from gyroidhx.materials import C_MAX, C_MIN, DESIGN_C_VALUES, L_CELL

# Minimal-surface area per unit cell (L = 1) from the coarea formula
# A = int delta(g) |grad g| dV with a Gaussian delta on a 256^3 midpoint
# lattice, Richardson-extrapolated over widths 0.16, 0.08, 0.04.
A0_ORACLE = 3.09165


def test_gyroid_maximum_point():
    x = np.full(3, L_CELL / 8)
    assert gyroid(*x, L_CELL) == pytest.approx(1.5, rel=1e-14)
    spec = GyroidSpec(L_CELL, 0.31 * L_CELL)
    assert phase_at(x, spec)[0] == FLUID2


def test_zero_thickness_is_all_fluid():
    pts = np.random.default_rng(0).random((5000, 3)) * L_CELL
    ph = phase_at(pts, GyroidSpec(L_CELL, 0.0))
    assert not np.any(ph == SOLID)


def test_inversion_swaps_fluids():
    spec = GyroidSpec(L_CELL, C_MIN)
    pts = (np.random.default_rng(1).random((10_000, 3)) - 0.5) * 4 * L_CELL
    a, b = phase_at(pts, spec), phase_at(-pts, spec)
    assert np.array_equal(a == FLUID1, b == FLUID2)
    assert np.array_equal(a == SOLID, b == SOLID)


def test_spec_json_roundtrip():
    cf = CellField(np.arange(8.0).reshape(2, 2, 2) * 1e-4 + C_MIN, [0, 0, 0], L_CELL, C_MIN, C_MAX)
    spec = GyroidSpec(L_CELL, cf, [0, 0, 0], [2 * L_CELL] * 3)
    back = GyroidSpec.from_json(spec.to_json())
    pts = np.random.default_rng(2).random((50, 3)) * 2 * L_CELL
    assert np.array_equal(spec.c_at(pts), back.c_at(pts))


def test_cell_field_clamps_and_interpolates():
    cf = CellField(np.array([0.0, 1.0, 2.0]).reshape(3, 1, 1), [0, 0, 0], 1.0, 0.25, 1.75)
    x = np.array([[0.0, 0, 0], [1.0, 0, 0], [1.5, 0, 0], [2.0, 0, 0], [3.0, 0, 0]])
    np.testing.assert_allclose(cf(x), [0.25, 0.5, 1.0, 1.5, 1.75])


def test_measure_zero_offset():
    m = measure_cell(GyroidSpec(L_CELL, 0.0))
    assert m.eps1 == pytest.approx(0.5, abs=0.005)
    assert m.eps2 == pytest.approx(0.5, abs=0.005)
    assert m.solid_frac == 0.0
    assert m.eps1 + m.eps2 + m.solid_frac == 1.0


def test_minimal_surface_area_oracle():
    m = measure_cell(GyroidSpec(L_CELL, 0.0))
    assert m.area1 / L_CELL ** 2 == pytest.approx(A0_ORACLE, rel=2e-3)
    assert surface_area(1.0, 0.0, 128) == pytest.approx(A0_ORACLE, rel=5e-4)


def test_measure_requires_samples():
    with pytest.raises(GeometryError):
        measure_cell(GyroidSpec(L_CELL, C_MIN), samples=1000)


@pytest.fixture(scope="module")
def design_measures():
    return [measure_cell(GyroidSpec(L_CELL, c)) for c in DESIGN_C_VALUES]


def test_fluid_fractions_equal(design_measures):
    for m in design_measures:
        assert abs(m.eps1 - m.eps2) <= 4 * m.stderr + 1e-12
        assert m.eps1 + m.eps2 + m.solid_frac == pytest.approx(1.0, abs=1e-15)


def test_fractions_monotone(design_measures):
    eps = np.array([m.eps1 for m in design_measures])
    sol = np.array([m.solid_frac for m in design_measures])
    assert np.all(np.diff(eps) < 0) and np.all(np.diff(sol) > 0)


def test_interface_areas_congruent(design_measures):
    for m in design_measures:
        assert m.area1 == pytest.approx(m.area2, rel=0.01)


def test_pinch_off_above_c_max():
    assert fluid_connected(C_MAX, L_CELL)
    assert pinch_off_c(L_CELL) > C_MAX
    assert not fluid_connected(1.45 * L_CELL, L_CELL)


def test_isosurface_refinement():
    spec = GyroidSpec(L_CELL, C_MIN)
    a32 = extract_isosurface(spec, "G1", 32).area()
    a64 = extract_isosurface(spec, "G1", 64).area()
    a128 = extract_isosurface(spec, "G1", 128).area()
    assert abs(a32 - a64) / a64 < 0.02
    # successive differences shrink
    assert abs(a64 - a128) < abs(a32 - a64)


def test_minimal_surface_mesh_closed_even_euler():
    m = extract_isosurface(GyroidSpec(L_CELL, 0.0), "G1", 24)
    assert m.is_watertight()
    assert m.euler_characteristic() % 2 == 0
    assert np.any(m.labels == CAP)
    # caps sit up to half a voxel outside the box
    assert 0.5 < m.volume() / L_CELL ** 3 < 0.5 * (1 + 1 / 24) ** 3


def test_resolution_precondition():
    with pytest.raises(GeometryError):
        extract_isosurface(GyroidSpec(L_CELL, C_MIN), "G1", 4)


def test_no_degenerate_triangles():
    m = solid_mesh(GyroidSpec(L_CELL, C_MIN), 32)
    assert m.triangle_areas().min() > 1e-12 * L_CELL ** 2


def test_graded_thickness_increases_along_x():
    n = 20
    c = np.linspace(C_MIN, C_MAX, n).reshape(n, 1, 1)
    spec = GyroidSpec(L_CELL, CellField(c, [0, 0, 0], L_CELL, C_MIN, C_MAX), [0, 0, 0], [n * L_CELL, L_CELL, L_CELL])
    mesh = solid_mesh(spec, 16)
    # the same relative ray pattern in every unit cell, so only c differs
    f = (np.arange(10) + 0.5) / 10 + 0.0123
    u, v = np.meshgrid(f, f, indexing="ij")
    thick = []
    for i in range(n):
        o = np.stack([(i + u.ravel()) * L_CELL, v.ravel() * L_CELL, np.zeros(u.size)], axis=1)
        chords = np.concatenate([chord_lengths(h) for h in ray_hits(mesh, o)])
        thick.append(chords.mean())
    assert np.all(np.diff(thick) > 0)


def test_stl_tetrahedron(tmp_path):
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
    f = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    m = TriMesh(v, f, watertight=True)
    assert m.is_watertight() and m.volume() == pytest.approx(1 / 6)
    p = tmp_path / "tet.stl"
    export_stl(m, p, validate=True)
    assert p.stat().st_size == 284
    tris, normals = read_stl(p)
    assert np.array_equal(tris, v[f].astype(np.float32))
    np.testing.assert_allclose(normals[3], np.ones(3) / np.sqrt(3), rtol=1e-6)


def test_stl_validated_export_refuses_open_mesh(tmp_path):
    m = TriMesh(np.eye(3), [[0, 1, 2]])
    with pytest.raises(MeshError):
        export_stl(m, tmp_path / "x.stl", validate=True)


def _independent_closed_check(tris):
    """Edge multiset count on the raw triangle soup, keyed by exact coordinates."""
    edges = {}
    for t in tris:
        k = [tuple(p) for p in t.tolist()]
        for a, b in ((0, 1), (1, 2), (2, 0)):
            e = (k[a], k[b]) if k[a] < k[b] else (k[b], k[a])
            edges[e] = edges.get(e, 0) + 1
    return all(n == 2 for n in edges.values())


def test_gyroid_stl_reader_validated(tmp_path):
    m = solid_mesh(GyroidSpec(L_CELL, C_MIN), 32)
    p = tmp_path / "cell.stl"
    export_stl(m, p, validate=True)
    tris, _ = read_stl(p)
    assert len(tris) == m.n_faces
    assert _independent_closed_check(tris)
    assert mesh_from_triangles(tris).is_watertight()


def test_box_mesh_and_vtk(tmp_path):
    b = box_mesh([0, 0, 0], [1, 2, 3])
    assert b.is_watertight() and b.volume() == pytest.approx(6.0)
    write_vtk_polydata(b, tmp_path / "b.vtk")
    txt = (tmp_path / "b.vtk").read_text()
    assert "POLYGONS 12 48" in txt


def test_chord_lengths_odd_count():
    with pytest.raises(MeshError):
        chord_lengths(np.array([0.0, 1.0, 2.0]))


def test_measure_runtime():
    t = time.perf_counter()
    measure_cell(GyroidSpec(L_CELL, C_MIN), samples=10 ** 6)
    assert time.perf_counter() - t < 10


def test_ray_through_shared_edge_counted_once():
    b = box_mesh([0, 0, 0], [1, 1, 1])
    # (0.5, 0.5) and (0.25, 0.75) lie on the diagonals splitting the z faces
    for o in ([0.5, 0.5, 0], [0.25, 0.75, 0]):
        hits = ray_hits(b, np.array([o], float))[0]
        assert len(hits) == 2
        np.testing.assert_allclose(chord_lengths(hits), [1.0])
