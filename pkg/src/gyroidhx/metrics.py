"""Thermal-hydraulic performance metrics of effective-model solutions."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .properties import EffectivePropertySet
from .solver import BoundaryConditions, Discretization, SolverConfig, State, compute_objective

DEFAULT_ETAS = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3)


class MetricsError(ValueError):
    pass


def hydraulic_diameter(gh, grid, props: EffectivePropertySet) -> tuple[float, float, float]:
    """``(D_h, V_f_total, A_total)`` from per-cell homogenised properties.

    Both fluids count towards the fluid volume, and both wall interfaces
    towards the heat-exchange area.
    """
    gh = np.asarray(gh, dtype=float)
    if gh.size == 0:
        raise MetricsError("core region is empty")
    v = props.evaluate(gh, np.full(gh.shape, props.u_lo))
    vc = grid.cell_volume
    v_f = float(np.sum(2.0 * v.eps) * vc)
    a_total = float(np.sum(2.0 * v.area) * vc / props.l_cell ** 3)
    if not a_total > 0:
        raise MetricsError("zero heat-exchange area")
    return 4.0 * v_f / a_total, v_f, a_total


def lmtd(dt_a: float, dt_b: float, rtol: float = 1e-9) -> float:
    """Log-mean temperature difference with the equal-difference limit."""
    if dt_a <= 0 or dt_b <= 0:
        raise MetricsError("temperature cross: end differences must be positive")
    if abs(dt_a - dt_b) <= rtol * max(dt_a, dt_b):
        return 0.5 * (dt_a + dt_b)
    return (dt_a - dt_b) / math.log(dt_a / dt_b)


def reynolds(rho: float, u_in: float, d_h: float, mu: float) -> float:
    return rho * u_in * d_h / mu


def fanning_friction(d_h: float, dp: float, rho: float, u_in: float, l_hx: float) -> float:
    return d_h * dp / (2.0 * rho * u_in ** 2 * l_hx)


def overall_coefficient(q: float, a_total: float, dt_lmtd: float) -> float:
    return q / (a_total * dt_lmtd)


def nusselt(u_coeff: float, d_h: float, k_f: float) -> float:
    return u_coeff * d_h / k_f


def colburn_j(nu: float, re: float, pr: float) -> float:
    return nu / (re * pr ** (1.0 / 3.0))


def pec(j: float, j0: float, f: float, f0: float) -> float:
    return (j / j0) / (f / f0)


def improvement_rate(f_low_opt: float, f_low_uni: float) -> float:
    if f_low_uni <= 0:
        raise MetricsError("uniform-design low-velocity fraction must be positive")
    return (1.0 - f_low_opt / f_low_uni) * 100.0


@dataclass
class Uniformity:
    mean: float
    cv: float
    f_low: dict


def uniformity_from_speeds(speed, area, etas=DEFAULT_ETAS) -> Uniformity:
    speed = np.asarray(speed, dtype=float).ravel()
    area = np.broadcast_to(np.asarray(area, dtype=float), speed.shape).ravel()
    if speed.size == 0 or area.sum() <= 0:
        raise MetricsError("empty section")
    for e in etas:
        if not 0 < e < 1:
            raise MetricsError("eta must lie in (0, 1)")
    atot = area.sum()
    mean = float(np.sum(area * speed) / atot)
    sd = float(np.sqrt(np.sum(area * (speed - mean) ** 2) / atot))
    f_low = {float(e): float(np.sum(area[speed <= e * mean]) / atot) for e in etas}
    return Uniformity(mean, sd / mean if mean > 0 else 0.0, f_low)


def section_speeds(state: State, fluid: int = 1, z: float | None = None, core_only: bool = True):
    """|u| and cell areas on the z-section through the given height (default mid-depth)."""
    grid = state.disc.grid
    z = 0.5 * grid.nz * grid.hz if z is None else z
    k = int(np.clip(np.floor(z / grid.hz), 0, grid.nz - 1))
    u = state.cell_velocity(fluid).reshape(grid.nx, grid.ny, grid.nz, 3)[:, :, k]
    mask = (grid.core_mask if core_only else grid.fluid_mask(fluid))[:, :, k]
    speed = np.linalg.norm(u, axis=-1)[mask]
    return speed, np.full(speed.shape, grid.h * grid.h)


def velocity_uniformity(state: State, fluid: int = 1, etas=DEFAULT_ETAS, z: float | None = None) -> Uniformity:
    speed, area = section_speeds(state, fluid, z)
    return uniformity_from_speeds(speed, area, etas)


@dataclass
class MetricsReport:
    Q: float
    dP: float
    Re: float
    D_h: float
    f: float
    LMTD: float
    U_coeff: float
    Nu: float
    Pr: float
    j: float
    PEC: float
    u_in: float
    L_HX: float
    A_total: float
    V_f_total: float
    heat_density: float
    CV: float = 0.0
    f_low: dict = field(default_factory=dict)
    improvement_rate: float | None = None
    valid: bool = True

    def to_json(self) -> dict:
        d = asdict(self)
        d["f_low"] = {str(k): v for k, v in self.f_low.items()}
        return d

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)

    def csv_row(self) -> dict:
        d = {k: v for k, v in self.to_json().items() if k != "f_low"}
        for k, v in self.f_low.items():
            d[f"f_low_{k:g}"] = v
        return d

    def save_csv(self, path) -> None:
        row = self.csv_row()
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=list(row), lineterminator="\n")
            wr.writeheader()
            wr.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def _terminal_temperatures(state: State):
    disc = state.disc
    temps = {}
    for f, T in ((1, state.T1), (2, state.T2)):
        op = disc.ops[f]
        Tf = np.zeros(disc.nC + 1)
        Tf[op.cells] = T
        of = op.outlet_faces
        cell = np.where(op.cL[of] != disc.nC, op.cL[of], op.cH[of])
        temps[f] = (disc.bc.t_in[f], float(np.mean(Tf[cell])))
    return temps


def dimensionless_suite(state: State, props: EffectivePropertySet, baseline: dict | None = None,
                        etas=DEFAULT_ETAS) -> MetricsReport:
    disc = state.disc
    grid, bc, fl = disc.grid, disc.bc, disc.cfg.fluid
    ob = compute_objective(state)
    d_h, v_f, a_total = hydraulic_diameter(state.gh, grid, props)
    u_in = 0.5 * (bc.u_in[1] + bc.u_in[2])
    lo, hi = grid.core_box
    flow_axis = grid.inlets[1][0].axis
    l_hx = float((hi[flow_axis] - lo[flow_axis]) * grid.spacing[flow_axis])
    re = reynolds(fl.rho, u_in, d_h, fl.mu)
    f = fanning_friction(d_h, ob.dp_ave, fl.rho, u_in, l_hx)
    temps = _terminal_temperatures(state)
    hot = 1 if bc.t_in[1] >= bc.t_in[2] else 2
    cold = 3 - hot
    (th_in, th_out), (tc_in, tc_out) = temps[hot], temps[cold]
    valid = True
    try:
        dtl = lmtd(th_in - tc_out, th_out - tc_in)
        u_coeff = overall_coefficient(ob.q_ave, a_total, dtl)
    except MetricsError:
        dtl, u_coeff, valid = math.nan, math.nan, False
    pr = fl.prandtl
    nu = nusselt(u_coeff, d_h, fl.k)
    j = colburn_j(nu, re, pr)
    if baseline is None:
        baseline = {"j0": j, "f0": f}
    p = pec(j, baseline["j0"], f, baseline["f0"]) if valid else math.nan
    core_vol = grid.cell_volume * disc.ncore
    uni = velocity_uniformity(state, 1, etas)
    return MetricsReport(ob.q_ave, ob.dp_ave, re, d_h, f, dtl, u_coeff, nu, pr, j, p, u_in, l_hx,
                         a_total, v_f, ob.q_ave / core_vol, uni.cv, uni.f_low, None, valid)


def baseline_metrics(grid, props: EffectivePropertySet, bc: BoundaryConditions | None = None,
                     cfg: SolverConfig | None = None, gamma_hat: float = 0.0) -> tuple[MetricsReport, State]:
    """Metrics of the uniform design (thinnest wall by default), used as j0/f0."""
    disc = Discretization(grid, bc or BoundaryConditions(), cfg)
    st = disc.solve(np.full(disc.ncore, gamma_hat), props)
    return dimensionless_suite(st, props), st
