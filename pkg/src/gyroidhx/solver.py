"""Steady two-fluid porous flow and three-temperature heat transfer.

Each fluid has its own Brinkman-Forchheimer flow on a staggered (MAC) grid:
face-normal Darcy velocities and cell pressures. Momentum on a face reads

    dp/dn + alpha U + beta |U| U + (1/eps) conv(U/eps) - (mu/eps) lap(U) = 0

with first-order upwind convection and harmonic-mean face porosity. The
energy system couples the fluid temperatures T1, T2 (conservative upwind
advection plus diffusion) with the wall temperature Tw through the
volumetric exchange h*(gh, |U|) A_RVE / L^3 (Tw - Ti), active in the core.

All residuals are written with complex-safe operations so that Jacobians
come from complex-step differentiation (see ``jacobian``).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import StructuredGrid
from .jacobian import ColoredJacobian, complex_step_gradient, sparsity_pattern
from .materials import ALUMINIUM, T_COLD_IN, T_HOT_IN, U_IN, WATER, Fluid, Solid
from .properties import EffectivePropertySet

NONE, INTERIOR, WALL, INLET, OUTLET = 0, 1, 2, 3, 4
FLUIDS = (1, 2)


class SolverError(RuntimeError):
    def __init__(self, msg, history=()):
        super().__init__(msg)
        self.history = list(history)


@dataclass
class SolverConfig:
    scheme: str = "upwind"
    tol: float = 1e-10              # relative nonlinear residual
    max_iter: int = 60
    damping: float = 1.0            # cap on the Newton step fraction
    linear_tol: float = 1e-9        # relative residual accepted from direct solves
    delta: float = 1e-10            # |U| smoothing
    fluid: Fluid = WATER
    solid: Solid = ALUMINIUM

    def __post_init__(self):
        if self.scheme != "upwind":
            raise ValueError(f"unsupported convection scheme {self.scheme!r}")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if not (self.tol > 0 and self.linear_tol > 0 and self.delta > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")

    def to_json(self) -> dict:
        return {"scheme": self.scheme, "tol": self.tol, "max_iter": self.max_iter,
                "damping": self.damping, "linear_tol": self.linear_tol, "delta": self.delta,
                "fluid": self.fluid.to_json(), "solid": self.solid.to_json()}


@dataclass
class BoundaryConditions:
    u_in: dict = field(default_factory=lambda: {1: U_IN, 2: U_IN})
    t_in: dict = field(default_factory=lambda: {1: T_HOT_IN, 2: T_COLD_IN})
    p_out: dict = field(default_factory=lambda: {1: 0.0, 2: 0.0})

    def validate(self, grid: StructuredGrid) -> None:
        for f in FLUIDS:
            if not grid.inlets.get(f) or not grid.outlets.get(f):
                raise ValueError(f"fluid {f} needs at least one inlet and one outlet face")
            if not self.u_in[f] > 0:
                raise ValueError("inflow velocity must be positive")

    def to_json(self) -> dict:
        return {k: {str(f): float(v) for f, v in getattr(self, k).items()} for k in ("u_in", "t_in", "p_out")}


def _where_pos(x):
    """max(x, 0) evaluated on the real part (complex-step safe)."""
    return np.where(np.real(x) > 0, x, 0.0)


def _abs(x):
    return x * np.sign(np.real(x))


def _harm(a, b):
    den = a + b
    safe = np.where(np.real(den) == 0, 1.0, den)
    return np.where(np.real(den) == 0, 0.0, 2.0 * a * b / safe)


class FluidOperator:
    """Index bookkeeping for one fluid's flow and temperature unknowns."""

    def __init__(self, grid: StructuredGrid, fluid: int):
        self.grid = grid
        self.fluid = fluid
        shape = grid.shape
        self.nC = grid.ncells
        dummy = self.nC
        active = grid.fluid_mask(fluid)
        self.active = active
        self.cells = np.flatnonzero(active.ravel())
        inlet = {(f.axis, tuple(f.index)) for f in grid.inlets.get(fluid, [])}
        outlet = {(f.axis, tuple(f.index)) for f in grid.outlets.get(fluid, [])}
        self.h = grid.spacing

        # global face enumeration
        self.fshape = []
        self.off = [0]
        for a in range(3):
            fs = list(shape)
            fs[a] += 1
            self.fshape.append(tuple(fs))
            self.off.append(self.off[-1] + int(np.prod(fs)))
        nF = self.off[-1]
        self.nF = nF
        self.zero = nF                  # slot holding 0 in face vectors
        kind = np.zeros(nF, dtype=np.int8)
        axis = np.zeros(nF, dtype=int)
        cL = np.full(nF, dummy)
        cH = np.full(nF, dummy)
        side = np.zeros(nF, dtype=int)  # -1 low boundary, +1 high boundary
        anchor = np.zeros((nF, 3))
        for a in range(3):
            for idx in np.ndindex(self.fshape[a]):
                g = self.fid(a, idx)
                axis[g] = a
                anchor[g] = np.array(idx) + 0.5
                anchor[g, a] -= 0.5
                lo = list(idx)
                lo[a] -= 1
                L = np.ravel_multi_index(lo, shape) if idx[a] > 0 and active[tuple(lo)] else dummy
                H = np.ravel_multi_index(idx, shape) if idx[a] < shape[a] and active[idx] else dummy
                cL[g], cH[g] = L, H
                if L != dummy and H != dummy:
                    kind[g] = INTERIOR
                elif L == dummy and H == dummy:
                    kind[g] = NONE
                else:
                    side[g] = -1 if H != dummy else 1
                    key = (a, tuple(idx))
                    on_boundary = idx[a] in (0, shape[a])
                    if on_boundary and key in inlet:
                        kind[g] = INLET
                    elif on_boundary and key in outlet:
                        kind[g] = OUTLET
                    else:
                        kind[g] = WALL
        self.kind, self.axis, self.cL, self.cH, self.side = kind, axis, cL, cH, side
        self.face_anchor = anchor
        # property averaging partners (active cells only)
        self.pa = np.where(cL != dummy, cL, cH)
        self.pb = np.where(cH != dummy, cH, cL)

        # per-cell face ids
        self.lo_face = np.zeros((self.nC + 1, 3), dtype=int)
        self.hi_face = np.zeros((self.nC + 1, 3), dtype=int)
        self.lo_face[dummy] = self.zero
        self.hi_face[dummy] = self.zero
        for c, idx in enumerate(np.ndindex(shape)):
            for a in range(3):
                hi = list(idx)
                hi[a] += 1
                self.lo_face[c, a] = self.fid(a, idx)
                self.hi_face[c, a] = self.fid(a, hi)
        self.cell_anchor = grid.centers().reshape(-1, 3) / self.h

        self.unknown = np.flatnonzero((kind == INTERIOR) | (kind == OUTLET))
        self.inlet_faces = np.flatnonzero(kind == INLET)
        self.outlet_faces = np.flatnonzero(kind == OUTLET)
        self.nu = len(self.unknown)
        self.np_ = len(self.cells)
        self._build_momentum()
        self._build_thermal()

    def fid(self, a, idx) -> int:
        return self.off[a] + int(np.ravel_multi_index(tuple(idx), self.fshape[a]))

    def _face_in_grid(self, a, idx) -> bool:
        return all(0 <= idx[b] < self.fshape[a][b] for b in range(3))

    def _build_momentum(self):
        g = self.grid
        dummy = self.nC
        degenerate = g.degenerate_axes()
        S = 6
        nu = self.nu
        self.m_dist = np.zeros(nu)
        fl_i = np.full((nu, S, 2), self.zero)
        fl_w = np.zeros((nu, S, 2))
        cv_nb = np.full((nu, S), self.zero)
        cv_len = np.ones((nu, S))
        df_nb = np.full((nu, S), self.zero)
        df_c = np.zeros((nu, S))
        for r, f in enumerate(self.unknown):
            a = self.axis[f]
            idx = np.array(np.unravel_index(f - self.off[a], self.fshape[a]))
            L, H = self.cL[f], self.cH[f]
            self.m_dist[r] = self.h[a] if self.kind[f] == INTERIOR else 0.5 * self.h[a]
            s = 0
            # along the face normal
            for sgn, cell in ((1, H), (-1, L)):
                if cell != dummy:
                    nb_idx = idx.copy()
                    nb_idx[a] += sgn
                    nb = self.fid(a, nb_idx)
                    fl_i[r, s] = (f, nb)
                    fl_w[r, s] = (0.5 * sgn, 0.5 * sgn)
                    cv_nb[r, s] = nb
                    cv_len[r, s] = self.h[a]
                    df_nb[r, s] = nb
                    df_c[r, s] = 1.0 / self.h[a] ** 2
                s += 1
            # transverse directions
            adj = [c for c in (L, H) if c != dummy]
            for b in range(3):
                if b == a:
                    continue
                for sgn in (1, -1):
                    if degenerate[b]:
                        s += 1
                        continue
                    faces = [self.hi_face[c, b] if sgn > 0 else self.lo_face[c, b] for c in adj]
                    w = sgn / len(faces)
                    fl_i[r, s, :len(faces)] = faces
                    fl_w[r, s, :len(faces)] = w
                    cv_len[r, s] = self.h[b]
                    nb_idx = idx.copy()
                    nb_idx[b] += sgn
                    if self._face_in_grid(a, nb_idx):
                        nb = self.fid(a, nb_idx)
                        cv_nb[r, s] = nb
                        k = self.kind[nb]
                        if k in (INTERIOR, OUTLET, INLET):
                            df_nb[r, s], df_c[r, s] = nb, 1.0 / self.h[b] ** 2
                        elif k == WALL:
                            df_nb[r, s], df_c[r, s] = self.zero, 1.0 / self.h[b] ** 2
                        else:
                            df_nb[r, s], df_c[r, s] = self.zero, 2.0 / self.h[b] ** 2
                    else:
                        open_bc = any(self.kind[fc] in (INLET, OUTLET) for fc in faces)
                        if not open_bc:
                            df_nb[r, s], df_c[r, s] = self.zero, 2.0 / self.h[b] ** 2
                    s += 1
        self.fl_i, self.fl_w, self.cv_nb, self.cv_len, self.df_nb, self.df_c = fl_i, fl_w, cv_nb, cv_len, df_nb, df_c
        self.cont_rows = self.cells

    def _build_thermal(self):
        # faces carrying advection or diffusion for this fluid
        use = (self.kind != NONE)
        self.t_faces = np.flatnonzero(use)
        self.t_int = np.flatnonzero(self.kind == INTERIOR)

    # ------------------------------------------------------------------
    def face_values(self, U, u_in):
        """Face velocity vector (all faces + zero slot) from the unknowns."""
        v = np.zeros(self.nF + 1, dtype=np.result_type(U, float))
        v[self.inlet_faces] = -self.side[self.inlet_faces] * u_in
        v[self.unknown] = U
        return v

    def cell_umag(self, v, delta):
        """Smoothed |U| at every cell (+ dummy slot), from averaged face values."""
        uc = 0.5 * (v[self.lo_face] + v[self.hi_face])
        return np.sqrt(np.sum(uc * uc, axis=1) + delta ** 2)

    def cell_velocity(self, v):
        return 0.5 * (v[self.lo_face[:-1]] + v[self.hi_face[:-1]])


class Discretization:
    """Residuals of the coupled problem for one grid / boundary-condition set."""

    def __init__(self, grid: StructuredGrid, bc: BoundaryConditions, cfg: SolverConfig | None = None):
        bc.validate(grid)
        self.grid, self.bc = grid, bc
        self.cfg = cfg or SolverConfig()
        self.ops = {f: FluidOperator(grid, f) for f in FLUIDS}
        self.core = np.flatnonzero(grid.core_mask.ravel())
        self.ncore = len(self.core)
        self.nC = grid.ncells
        self.V = grid.cell_volume
        o1, o2 = self.ops[1], self.ops[2]
        self.sizes = [o1.nu + o1.np_, o2.nu + o2.np_, o1.np_, o2.np_, self.ncore]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.n = int(self.offsets[-1])
        self._jac_cache = {}

    # ---------------- state packing -------------------------------------
    def block(self, s, k):
        return s[self.offsets[k]:self.offsets[k + 1]]

    def split_flow(self, x, f):
        op = self.ops[f]
        return x[:op.nu], x[op.nu:]

    # ---------------- cell properties -----------------------------------
    def cell_properties(self, gh, props: EffectivePropertySet):
        """Core-cell gh -> per-cell arrays (with dummy slot)."""
        fl = self.cfg.fluid
        dt = np.result_type(gh, float)
        n = self.nC + 1
        eps = np.ones(n, dtype=dt)
        alpha = np.zeros(n, dtype=dt)
        beta = np.zeros(n, dtype=dt)
        kf = np.full(n, fl.k, dtype=dt)
        v = props.evaluate(gh, np.full(self.ncore, props.u_lo))
        eps[self.core] = v.eps
        alpha[self.core] = v.alpha
        beta[self.core] = v.beta
        kf[self.core] = v.kf
        return {"eps": eps, "alpha": alpha, "beta": beta, "kf": kf, "ks": v.ks, "area": v.area}

    # ---------------- flow ---------------------------------------------
    def flow_residual(self, f, x, gh, props, cp=None):
        op = self.ops[f]
        fl = self.cfg.fluid
        cp = cp or self.cell_properties(gh, props)
        U, p = self.split_flow(x, f)
        v = op.face_values(U, self.bc.u_in[f])
        pf = np.full(self.nC + 1, self.bc.p_out[f], dtype=np.result_type(p, float))
        pf[op.cells] = p
        eps, alpha, beta = cp["eps"], cp["alpha"], cp["beta"]
        eps_face = _harm(eps[op.pa], eps[op.pb])
        eps_face = np.concatenate([eps_face, np.ones(1, dtype=eps_face.dtype)])
        umag = op.cell_umag(v, self.cfg.delta)
        u = op.unknown
        ef = eps_face[u]
        af = 0.5 * (alpha[op.pa[u]] + alpha[op.pb[u]])
        bf = 0.5 * (beta[op.pa[u]] + beta[op.pb[u]])
        uf = 0.5 * (umag[op.pa[u]] + umag[op.pb[u]])
        Uf = v[u]
        res = (pf[op.cH[u]] - pf[op.cL[u]]) / op.m_dist + af * Uf + bf * uf * Uf
        phi = v / eps_face
        F = fl.rho * np.sum(v[op.fl_i] * op.fl_w, axis=2)
        res = res + np.sum(_where_pos(-F) * (phi[u][:, None] - phi[op.cv_nb]) / op.cv_len, axis=1) / ef
        res = res - fl.mu / ef * np.sum(op.df_c * (v[op.df_nb] - Uf[:, None]), axis=1)
        h = self.grid.spacing
        div = sum((v[op.hi_face[op.cells, a]] - v[op.lo_face[op.cells, a]]) / h[a] for a in range(3))
        return np.concatenate([res, div])

    def flow_anchors(self, f):
        op = self.ops[f]
        return np.vstack([op.face_anchor[op.unknown], op.cell_anchor[op.cells]])

    # ---------------- thermal ------------------------------------------
    def thermal_residual(self, x1, x2, T1, T2, Tw, gh, props, cp=None):
        cfg = self.cfg
        fl = cfg.fluid
        cp = cp or self.cell_properties(gh, props)
        h = self.grid.spacing
        areas = np.array([self.grid.face_area(a) for a in range(3)])
        dt = np.result_type(x1, x2, T1, T2, Tw, gh, float)
        out = []
        exch = []
        Ts = {1: T1, 2: T2}
        xs = {1: x1, 2: x2}
        Tw_full = np.zeros(self.nC + 1, dtype=dt)
        Tw_full[self.core] = Tw
        for f in FLUIDS:
            op = self.ops[f]
            U, _ = self.split_flow(xs[f], f)
            v = op.face_values(U, self.bc.u_in[f])
            tin = self.bc.t_in[f]
            Tf = np.zeros(self.nC + 2, dtype=dt)
            Tf[op.cells] = Ts[f]
            Tf[self.nC + 1] = tin
            R = np.zeros(self.nC + 1, dtype=dt)
            fc = op.t_faces
            L, H = op.cL[fc], op.cH[fc]
            isin = op.kind[fc] == INLET
            lo_src = np.where(L != self.nC, L, np.where(isin, self.nC + 1, H))
            hi_src = np.where(H != self.nC, H, np.where(isin, self.nC + 1, L))
            vf = v[fc]
            Fa = fl.rho * fl.cp * vf * areas[op.axis[fc]]
            Tup = np.where(np.real(vf) > 0, Tf[lo_src], Tf[hi_src])
            flux = Fa * Tup
            np.add.at(R, L, flux)
            np.add.at(R, H, -flux)
            # diffusion across interior faces
            fi = op.t_int
            L, H = op.cL[fi], op.cH[fi]
            kfa = _harm(cp["kf"][L], cp["kf"][H])
            ax = op.axis[fi]
            q = -kfa * areas[ax] * (Tf[H] - Tf[L]) / h[ax]
            np.add.at(R, L, q)
            np.add.at(R, H, -q)
            # exchange with the wall in the core
            umag = op.cell_umag(v, cfg.delta)[self.core]
            pv = props.evaluate(gh, umag)
            H_ex = pv.h * pv.area / props.l_cell ** 3
            Qi = H_ex * (Tw - Tf[self.core])
            R[self.core] -= Qi * self.V
            exch.append(Qi)
            out.append(R[op.cells] / self.V)
        # wall conduction inside the core
        Rw = np.zeros(self.nC + 1, dtype=dt)
        ks = np.ones(self.nC + 1, dtype=dt)
        ks[self.core] = cp["ks"]
        incore = np.zeros(self.nC + 1, bool)
        incore[self.core] = True
        op = self.ops[1]
        fi = op.t_int
        L, H = op.cL[fi], op.cH[fi]
        both = incore[L] & incore[H]
        L, H, ax = L[both], H[both], op.axis[fi][both]
        q = -_harm(ks[L], ks[H]) * areas[ax] * (Tw_full[H] - Tw_full[L]) / h[ax]
        np.add.at(Rw, L, q)
        np.add.at(Rw, H, -q)
        Rw[self.core] += (exch[0] + exch[1]) * self.V
        out.append(Rw[self.core] / self.V)
        return np.concatenate(out)

    def thermal_anchors(self):
        o1, o2 = self.ops[1], self.ops[2]
        ca = o1.cell_anchor
        return np.vstack([ca[o1.cells], ca[o2.cells], ca[self.core]])

    # ---------------- full residual -------------------------------------
    def residual(self, s, gh, props):
        x1, x2, T1, T2, Tw = (self.block(s, k) for k in range(5))
        cp = self.cell_properties(gh, props)
        return np.concatenate([
            self.flow_residual(1, x1, gh, props, cp),
            self.flow_residual(2, x2, gh, props, cp),
            self.thermal_residual(x1, x2, T1, T2, Tw, gh, props, cp),
        ])

    def state_anchors(self):
        return np.vstack([self.flow_anchors(1), self.flow_anchors(2), self.thermal_anchors()])

    def state_blocks(self):
        return np.repeat(np.arange(5), self.sizes)

    # ---------------- Jacobians ---------------------------------------
    def _jac(self, key):
        if key in self._jac_cache:
            return self._jac_cache[key]
        if key == "full":
            a = self.state_anchors()
            blk = self.state_blocks()
            C = np.array([[1, 0, 0, 0, 0],
                          [0, 1, 0, 0, 0],
                          [1, 0, 1, 0, 1],
                          [0, 1, 0, 1, 1],
                          [1, 1, 1, 1, 1]], bool)
            pat = sparsity_pattern(a, a, 1.01, blk, blk, C)
        elif key == "thermal":
            a = self.thermal_anchors()
            pat = sparsity_pattern(a, a, 1.01)
        elif key == "design":
            a = self.state_anchors()
            pat = sparsity_pattern(a, self.grid.core_cell_centers() / self.grid.spacing, 1.51)
        else:
            a = self.flow_anchors(key)
            pat = sparsity_pattern(a, a, 1.01)
        J = ColoredJacobian(pat)
        self._jac_cache[key] = J
        return J

    def flow_jacobian(self, f, x, gh, props):
        cp = self.cell_properties(gh, props)
        return self._jac(f)(lambda z: self.flow_residual(f, z, gh, props, cp), x)

    def state_jacobian(self, s, gh, props):
        return self._jac("full")(lambda z: self.residual(z, gh, props), s)

    def design_jacobian(self, s, gh, props):
        return self._jac("design")(lambda g: self.residual(s, g, props), gh)

    # ---------------- solves ------------------------------------------
    def solve_flow(self, gh, props, f, x0=None):
        cfg = self.cfg
        op = self.ops[f]
        x = np.zeros(op.nu + op.np_) if x0 is None else np.array(x0, dtype=float)
        cp = self.cell_properties(gh, props)

        def R(z):
            return self.flow_residual(f, z, gh, props, cp)

        r = R(x)
        r0 = max(np.linalg.norm(self.flow_residual(f, np.zeros_like(x), gh, props, cp)), 1e-300)
        hist = [float(np.linalg.norm(r) / r0)]
        jac = self._jac(f)
        for _ in range(cfg.max_iter):
            if hist[-1] <= cfg.tol:
                return x, hist
            J = jac(R, x)
            try:
                dx = spla.spsolve(J.tocsc(), -r)
            except RuntimeError as exc:
                raise SolverError(f"singular flow Jacobian for fluid {f}: {exc}", hist) from None
            if not np.all(np.isfinite(dx)):
                raise SolverError(f"singular flow Jacobian for fluid {f}", hist)
            lam = cfg.damping
            nr = np.linalg.norm(r)
            while True:
                xn = x + lam * dx
                rn = R(xn)
                if np.linalg.norm(rn) < (1 - 1e-4 * lam) * nr or lam < 1e-3:
                    break
                lam *= 0.5
            x, r = xn, rn
            hist.append(float(np.linalg.norm(r) / r0))
        if hist[-1] <= cfg.tol:
            return x, hist
        raise SolverError(f"flow of fluid {f} did not converge (relative residual {hist[-1]:.2e})", hist)

    def solve_thermal(self, x1, x2, gh, props):
        """Linear solve for (T1, T2, Tw) given converged flows."""
        n1, n2 = self.ops[1].np_, self.ops[2].np_
        cp = self.cell_properties(gh, props)

        def R(t):
            return self.thermal_residual(x1, x2, t[:n1], t[n1:n1 + n2], t[n1 + n2:], gh, props, cp)

        t0 = np.zeros(n1 + n2 + self.ncore)
        J = self._jac("thermal")(R, t0).tocsc()
        b = -R(t0)
        flagged = False
        wall = slice(n1 + n2, None)
        diag_w = np.abs(J.diagonal()[wall])
        exch = np.abs(J[n1 + n2:, :n1 + n2]).sum() if self.ncore else 0.0
        if self.ncore and exch == 0.0:
            # adiabatic wall decoupled from both fluids: pin it weakly
            shift = 1e-12 * max(float(diag_w.max()), 1.0)
            tref = 0.5 * (self.bc.t_in[1] + self.bc.t_in[2])
            J = J + sp.diags(np.r_[np.zeros(n1 + n2), np.full(self.ncore, shift)]).tocsc()
            b = b.copy()
            b[wall] += shift * tref
            flagged = True
        t = spla.spsolve(J, b)
        res = np.linalg.norm(J @ t - b) / max(np.linalg.norm(b), 1e-300)
        if not np.all(np.isfinite(t)) or res > self.cfg.linear_tol:
            raise SolverError(f"thermal solve failed (relative residual {res:.2e})", [res])
        return t[:n1], t[n1:n1 + n2], t[n1 + n2:], flagged

    def solve(self, gh, props, guess: "State | None" = None) -> "State":
        gh = np.asarray(gh, dtype=float)
        if gh.shape != (self.ncore,):
            raise ValueError(f"design has shape {gh.shape}, expected ({self.ncore},)")
        x = {}
        hist = {}
        for f in FLUIDS:
            x0 = None if guess is None else guess.flow[f]
            x[f], hist[f] = self.solve_flow(gh, props, f, x0)
        T1, T2, Tw, flagged = self.solve_thermal(x[1], x[2], gh, props)
        s = np.concatenate([x[1], x[2], T1, T2, Tw])
        return State(self, s, gh.copy(), hist, flagged)

    # ---------------- objective -----------------------------------------
    def objective_parts(self, s):
        """(Q1, Q2, dp1, dp2): enthalpy gain of each stream and inlet-outlet pressure drop."""
        fl = self.cfg.fluid
        x1, x2, T1, T2, _ = (self.block(s, k) for k in range(5))
        out = []
        for f, x, T in ((1, x1, T1), (2, x2, T2)):
            op = self.ops[f]
            U, p = self.split_flow(x, f)
            v = op.face_values(U, self.bc.u_in[f])
            Tf = np.zeros(self.nC + 1, dtype=np.result_type(T, U, float))
            Tf[op.cells] = T
            pf = np.zeros(self.nC + 1, dtype=np.result_type(p, float))
            pf[op.cells] = p
            of = op.outlet_faces
            cell = np.where(op.cL[of] != self.nC, op.cL[of], op.cH[of])
            area = np.array([self.grid.face_area(op.axis[g]) for g in of])
            outflow = v[of] * op.side[of] * area
            Q = fl.rho * fl.cp * np.sum(outflow * (Tf[cell] - self.bc.t_in[f]))
            dps = []
            for g in op.inlet_faces:
                a = op.axis[g]
                c0 = op.cL[g] if op.cL[g] != self.nC else op.cH[g]
                idx = list(np.unravel_index(c0, self.grid.shape))
                idx[a] -= op.side[g]            # one cell further inside
                if 0 <= idx[a] < self.grid.shape[a] and op.active[tuple(idx)]:
                    c1 = np.ravel_multi_index(idx, self.grid.shape)
                    dps.append(1.5 * pf[c0] - 0.5 * pf[c1])
                else:
                    dps.append(pf[c0])
            dp = sum(dps) / len(dps) - self.bc.p_out[f]
            out.append((Q, dp))
        (Q1, dp1), (Q2, dp2) = out
        return Q1, Q2, dp1, dp2

    def objective_support(self):
        idx = []
        for k, f in enumerate(FLUIDS):
            op = self.ops[f]
            base = self.offsets[k]
            pos = {c: i for i, c in enumerate(op.unknown)}
            idx += [base + pos[g] for g in op.outlet_faces]
            cpos = {c: i for i, c in enumerate(op.cells)}
            for g in op.inlet_faces:
                c0 = op.cL[g] if op.cL[g] != self.nC else op.cH[g]
                idx.append(base + op.nu + cpos[c0])
                a = op.axis[g]
                j = list(np.unravel_index(c0, self.grid.shape))
                j[a] -= op.side[g]
                if 0 <= j[a] < self.grid.shape[a] and op.active[tuple(j)]:
                    idx.append(base + op.nu + cpos[int(np.ravel_multi_index(j, self.grid.shape))])
            tb = self.offsets[2 + k]
            for g in op.outlet_faces:
                c = op.cL[g] if op.cL[g] != self.nC else op.cH[g]
                idx.append(tb + cpos[c])
        return np.array(sorted(set(int(i) for i in idx)))

    def objective_value(self, s, w, q_ref=1.0, dp_ref=1.0):
        Q1, Q2, dp1, dp2 = self.objective_parts(s)
        q_ave = 0.5 * (_abs(Q1) + _abs(Q2))
        dp_ave = 0.5 * (dp1 + dp2)
        return -q_ave / q_ref + w * dp_ave / dp_ref


@dataclass
class State:
    disc: Discretization
    s: np.ndarray
    gh: np.ndarray
    history: dict
    wall_regularized: bool = False

    @property
    def flow(self):
        return {f: self.disc.block(self.s, f - 1) for f in FLUIDS}

    @property
    def T1(self):
        return self.disc.block(self.s, 2)

    @property
    def T2(self):
        return self.disc.block(self.s, 3)

    @property
    def Tw(self):
        return self.disc.block(self.s, 4)

    def face_velocity(self, f):
        op = self.disc.ops[f]
        U, _ = self.disc.split_flow(self.flow[f], f)
        return op.face_values(U, self.disc.bc.u_in[f])

    def cell_velocity(self, f):
        """Cell-centred Darcy velocity (ncells, 3), zero outside the fluid."""
        op = self.disc.ops[f]
        u = op.cell_velocity(self.face_velocity(f))
        u[~op.active.ravel()] = 0.0
        return u

    def pressure(self, f):
        op = self.disc.ops[f]
        p = np.zeros(self.disc.nC)
        p[op.cells] = self.disc.split_flow(self.flow[f], f)[1]
        return p

    def temperature(self, which: str):
        d = self.disc
        out = np.full(d.nC, np.nan)
        if which == "T1":
            out[d.ops[1].cells] = self.T1
        elif which == "T2":
            out[d.ops[2].cells] = self.T2
        elif which == "Tw":
            out[d.core] = self.Tw
        else:
            raise KeyError(which)
        return out

    def fields(self) -> dict:
        """The seven output fields on the full grid (C-order)."""
        return {"U1": self.cell_velocity(1), "p1": self.pressure(1),
                "U2": self.cell_velocity(2), "p2": self.pressure(2),
                "T1": self.temperature("T1"), "T2": self.temperature("T2"), "Tw": self.temperature("Tw")}


@dataclass
class ObjectiveValues:
    q1: float
    q2: float
    dp1: float
    dp2: float
    q_ave: float
    dp_ave: float
    J: float


def compute_objective(state: State, w: float = 0.0, q_ref: float = 1.0, dp_ref: float = 1.0) -> ObjectiveValues:
    Q1, Q2, dp1, dp2 = state.disc.objective_parts(state.s)
    q_ave = 0.5 * (abs(Q1) + abs(Q2))
    dp_ave = 0.5 * (dp1 + dp2)
    return ObjectiveValues(float(Q1), float(Q2), float(dp1), float(dp2), float(q_ave), float(dp_ave),
                           float(-q_ave / q_ref + w * dp_ave / dp_ref))


def objective_gradient(disc: Discretization, s, w, q_ref=1.0, dp_ref=1.0):
    return complex_step_gradient(lambda z: disc.objective_value(z, w, q_ref, dp_ref), s, disc.objective_support())


def residual_operator(state_vec, gh, props, disc: Discretization):
    s = np.asarray(state_vec)
    if s.shape != (disc.n,):
        raise ValueError(f"state vector has shape {s.shape}, expected ({disc.n},)")
    return disc.residual(s, np.asarray(gh), props)


def solve(grid: StructuredGrid, gh, props: EffectivePropertySet, bc: BoundaryConditions | None = None,
          cfg: SolverConfig | None = None) -> State:
    disc = Discretization(grid, bc or BoundaryConditions(), cfg)
    return disc.solve(gh, props)
