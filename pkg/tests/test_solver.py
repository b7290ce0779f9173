import numpy as np
import pytest

from gyroidhx.grid import channel_1d, counterflow_layout
from gyroidhx.materials import L_CELL, T_COLD_IN, T_HOT_IN, WATER
from gyroidhx.properties import EffectivePropertySet
from gyroidhx.solver import (BoundaryConditions, Discretization, SolverConfig, SolverError, compute_objective,
                             residual_operator, solve)


def lateral_flux(state, fluid=1, centre=(3, 5)):
    """Flux through the y-faces at mid-core height, split into centre and lateral columns."""
    grid = state.disc.grid
    op = state.disc.ops[fluid]
    v = state.face_velocity(fluid)
    lo, hi = grid.core_box
    j = (lo[1] + hi[1]) // 2
    per_col = np.array([v[op.fid(1, (i, j, 0))] for i in range(lo[0], hi[0])]) * grid.face_area(1)
    cols = np.arange(lo[0], hi[0])
    lateral = (cols < centre[0]) | (cols >= centre[1])
    return per_col[lateral].sum(), per_col[~lateral].sum()


def boundary_flux(state, fluid):
    d = state.disc
    op = d.ops[fluid]
    v = state.face_velocity(fluid)
    area = np.array([d.grid.face_area(op.axis[g]) for g in range(op.nF)])
    inflow = -np.sum(v[op.inlet_faces] * op.side[op.inlet_faces] * area[op.inlet_faces])
    outflow = np.sum(v[op.outlet_faces] * op.side[op.outlet_faces] * area[op.outlet_faces])
    return inflow, outflow


@pytest.fixture(scope="module")
def desk_state(desk_grid, props):
    disc = Discretization(desk_grid, BoundaryConditions())
    return disc.solve(np.full(disc.ncore, 0.5), props)


# ---------------------------------------------------------------- flow closures

@pytest.mark.parametrize("beta", [0.0, 1e5])
def test_channel_pressure_drop_matches_closure(beta):
    n, h, u = 10, 1e-3, 0.01
    p = EffectivePropertySet.constant(alpha=1e6, beta=beta, h=0.0, kf=0.0, ks=0.0)
    st = solve(channel_1d(n, h), np.full(n, 0.5), p, BoundaryConditions(u_in={1: u, 2: u}))
    ob = compute_objective(st)
    exact = (1e6 * u + beta * u * u) * n * h
    assert ob.dp1 == pytest.approx(exact, rel=1e-12)
    assert ob.dp2 == pytest.approx(exact, rel=1e-12)


def test_thick_centre_redirects_flow_to_lateral_columns(desk_grid, props):
    disc = Discretization(desk_grid, BoundaryConditions())
    centre = desk_grid.core_cell_centers()[:, 0] / desk_grid.h
    uniform = disc.solve(np.full(disc.ncore, 0.5), props)
    thick = np.where((centre > 3) & (centre < 5), 1.0, 0.5)
    graded = disc.solve(thick, props)
    lat_u, mid_u = lateral_flux(uniform)
    lat_g, mid_g = lateral_flux(graded)
    assert lat_g > lat_u
    assert mid_g < mid_u
    assert lat_g + mid_g == pytest.approx(lat_u + mid_u, rel=1e-8)


def test_raising_uniform_design_raises_pressure_drop(desk_grid, props):
    disc = Discretization(desk_grid, BoundaryConditions())
    dp = [compute_objective(disc.solve(np.full(disc.ncore, g), props)).dp_ave for g in (0.0, 0.25, 0.5, 0.75, 1.0)]
    assert np.all(np.diff(dp) > 0)


# ---------------------------------------------------------------- thermal

def test_isothermal_fixed_point(desk_grid, props):
    t0 = 310.0
    bc = BoundaryConditions(t_in={1: t0, 2: t0})
    st = solve(desk_grid, np.full(64, 0.5), props, bc)
    for T in (st.T1, st.T2, st.Tw):
        assert np.allclose(T, t0, atol=1e-9)
    ob = compute_objective(st, w=0.7)
    assert ob.q_ave == pytest.approx(0.0, abs=1e-9)
    assert ob.J == pytest.approx(0.7 * ob.dp_ave, rel=1e-9)


def test_counterflow_effectiveness_ntu():
    n, hg, u = 200, 1e-4, 0.01
    area = 3.09 * L_CELL ** 2
    a = area / L_CELL ** 3
    length = n * hg
    h_star = 2 * WATER.rho * WATER.cp * u / (length * a)     # NTU = 1
    p = EffectivePropertySet.constant(alpha=1e6, beta=0.0, h=h_star, kf=0.0, ks=0.0, area=area)
    st = solve(channel_1d(n, hg), np.full(n, 0.5), p, BoundaryConditions(u_in={1: u, 2: u}))
    cap = WATER.rho * WATER.cp * u * hg * hg
    ntu = length * hg * hg * a * (h_star * h_star / (2 * h_star)) / cap
    eff = ntu / (1 + ntu)
    ob = compute_objective(st)
    expected = cap * (T_HOT_IN - T_COLD_IN) * eff
    assert abs(ob.q1) == pytest.approx(expected, rel=0.01)
    assert abs(ob.q2) == pytest.approx(expected, rel=0.01)


def test_global_energy_balance(desk_state):
    ob = compute_objective(desk_state)
    assert abs(abs(ob.q1) - abs(ob.q2)) / max(abs(ob.q1), abs(ob.q2)) <= 1e-3


def test_q_matches_stream_enthalpy_change(desk_state):
    disc = desk_state.disc
    grid = disc.grid
    ob = compute_objective(desk_state)
    op = disc.ops[1]
    Tf = np.zeros(disc.nC + 1)
    Tf[op.cells] = desk_state.T1
    of = op.outlet_faces
    cell = np.where(op.cL[of] != disc.nC, op.cL[of], op.cH[of])
    vdot = disc.bc.u_in[1] * grid.face_area(1) * len(op.inlet_faces)
    t_out = np.mean(Tf[cell])
    assert ob.q_ave == pytest.approx(WATER.rho * WATER.cp * vdot * abs(t_out - T_HOT_IN), rel=1e-3)


@pytest.mark.parametrize("fluid", [1, 2])
def test_global_mass_balance(desk_state, fluid):
    inflow, outflow = boundary_flux(desk_state, fluid)
    assert outflow == pytest.approx(inflow, rel=1e-8)


def test_maximum_principle(desk_state):
    for T in (desk_state.T1, desk_state.T2, desk_state.Tw):
        assert T.min() >= T_COLD_IN - 0.1
        assert T.max() <= T_HOT_IN + 0.1


# ---------------------------------------------------------------- residual operator

def test_converged_residual_is_small(desk_state, props):
    d = desk_state.disc
    r = residual_operator(desk_state.s, desk_state.gh, props, d)
    s0 = np.zeros(d.n)
    s0[d.offsets[2]:] = 300.0
    r0 = residual_operator(s0, desk_state.gh, props, d)
    assert np.linalg.norm(r) / np.linalg.norm(r0) <= 1e-6


def test_residual_shape_mismatch(desk_state, props):
    with pytest.raises(ValueError):
        residual_operator(desk_state.s[:-1], desk_state.gh, props, desk_state.disc)


def test_perturbation_is_local(desk_state, props):
    d = desk_state.disc
    k = d.offsets[2] + 10                  # one fluid-1 temperature
    s = desk_state.s.copy()
    base = d.residual(s, desk_state.gh, props)
    s[k] += 1e-3
    changed = np.flatnonzero(d.residual(s, desk_state.gh, props) != base)
    J = d.state_jacobian(desk_state.s, desk_state.gh, props).tocsc()
    col = J[:, k]
    coupled = col.indices[col.data != 0]
    assert len(changed) > 0
    assert set(changed) == set(coupled)
    assert len(changed) < 20


def test_jacobian_directional_derivative(props, rng):
    grid = counterflow_layout((3, 3))
    d = Discretization(grid, BoundaryConditions())
    st = d.solve(np.full(d.ncore, 0.5), props)
    s = st.s * (1 + 1e-3 * rng.standard_normal(d.n))
    gh = rng.uniform(0.2, 0.8, d.ncore)
    J = d.state_jacobian(s, gh, props)
    v = rng.standard_normal(d.n) * np.abs(s).clip(1e-3)
    eps = 1e-6
    fd = (d.residual(s + eps * v, gh, props) - d.residual(s - eps * v, gh, props)) / (2 * eps)
    jv = J @ v
    assert np.linalg.norm(fd - jv) <= 1e-5 * np.linalg.norm(jv)


def test_solve_is_deterministic(desk_grid, props):
    a = solve(desk_grid, np.full(64, 0.3), props)
    b = solve(desk_grid, np.full(64, 0.3), props)
    assert np.array_equal(a.s, b.s)


def test_divergence_carries_history(desk_grid, props):
    with pytest.raises(SolverError) as err:
        solve(desk_grid, np.full(64, 0.5), props, cfg=SolverConfig(max_iter=1))
    assert len(err.value.history) >= 1


def test_design_shape_checked(desk_grid, props):
    with pytest.raises(ValueError):
        solve(desk_grid, np.full(10, 0.5), props)


def test_state_fields_cover_grid(desk_state):
    f = desk_state.fields()
    n = desk_state.disc.nC
    assert set(f) == {"U1", "p1", "U2", "p2", "T1", "T2", "Tw"}
    assert f["U1"].shape == (n, 3) and f["Tw"].shape == (n,)


# ---------------------------------------------------------------- grid refinement

@pytest.fixture(scope="module")
def refinement(props):
    out = {}
    for r in (2, 4):
        g = counterflow_layout(refine=r)
        d = Discretization(g, BoundaryConditions())
        out[r] = compute_objective(d.solve(np.full(d.ncore, 0.5), props))
    return out


def test_heat_rate_grid_convergence(refinement):
    a, b = refinement[2].q_ave, refinement[4].q_ave
    assert abs(b - a) / abs(b) <= 0.02


@pytest.mark.xfail(strict=True, reason="duct-to-core inflow corner is singular; the Brinkman layer "
                                       "is not resolved at desk resolution")
def test_pressure_drop_grid_convergence(refinement):
    a, b = refinement[2].dp_ave, refinement[4].dp_ave
    assert abs(b - a) / abs(b) <= 0.02
