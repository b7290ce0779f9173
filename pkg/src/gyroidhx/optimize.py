"""Discrete-adjoint sensitivities and the density-method optimisation loop."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .filtering import DensityFilter
from .grid import StructuredGrid
from .mma import MmaState, box_kkt, mma_update, subproblem_kkt
from .properties import EffectivePropertySet
from .solver import (BoundaryConditions, Discretization, SolverConfig, SolverError, State,
                     compute_objective, objective_gradient)


class AdjointError(RuntimeError):
    pass


@dataclass
class OptimizationProblem:
    grid: StructuredGrid
    props: EffectivePropertySet
    bc: BoundaryConditions = field(default_factory=BoundaryConditions)
    cfg: SolverConfig = field(default_factory=SolverConfig)
    w: float = 0.0
    budget: int = 50
    filter_radius: float | None = None      # default 1.5 h
    gamma0: float = 0.5
    move: float = 0.2
    change_tol: float = 1e-3
    normalize: bool = True                  # J = -Q/Q_ref + w dp/dp_ref with refs from the start design

    def __post_init__(self):
        if not self.w >= 0:
            raise ValueError("weighting factor must be non-negative")
        if self.budget < 0:
            raise ValueError("iteration budget must be >= 0")
        if not 0 <= self.gamma0 <= 1:
            raise ValueError("initial design must lie in [0, 1]")

    @property
    def radius(self) -> float:
        return 1.5 * self.grid.h if self.filter_radius is None else self.filter_radius


def primal_converged(state: State, factor: float = 10.0) -> bool:
    tol = state.disc.cfg.tol
    return all(h[-1] <= factor * tol for h in state.history.values())


def sensitivities(disc: Discretization, state: State, props: EffectivePropertySet, w: float,
                  q_ref: float = 1.0, dp_ref: float = 1.0, filt: DensityFilter | None = None):
    """dJ/dgamma (through the filter transpose) and dJ/dgamma_hat."""
    if not primal_converged(state):
        raise AdjointError("adjoint requested at a non-converged primal state")
    s, gh = state.s, state.gh
    Js = disc.state_jacobian(s, gh, props).tocsc()
    dj_ds = objective_gradient(disc, s, w, q_ref, dp_ref)
    lam = spla.spsolve(Js.T.tocsc(), -dj_ds)
    res = np.linalg.norm(Js.T @ lam + dj_ds) / max(np.linalg.norm(dj_ds), 1e-300)
    if not np.all(np.isfinite(lam)) or res > 1e-8:
        raise AdjointError(f"adjoint solve failed (relative residual {res:.2e})")
    dj_dgh = disc.design_jacobian(s, gh, props).T @ lam
    dj_dg = filt.chain_rule(dj_dgh) if filt is not None else dj_dgh
    return dj_dg, dj_dgh


@dataclass
class OptimizationTrace:
    w: float
    rows: list = field(default_factory=list)      # dicts: iter, J, Q_ave, dp_ave, max_dgamma, kkt
    gamma: np.ndarray | None = None
    gamma_hat: np.ndarray | None = None
    initial: dict = field(default_factory=dict)
    final: dict = field(default_factory=dict)
    q_ref: float = 1.0
    dp_ref: float = 1.0
    status: str = "ok"
    message: str = ""

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["iter", "J", "Q_ave", "dp_ave", "max_dgamma", "kkt"])
            for r in self.rows:
                wr.writerow([r["iter"]] + [repr(float(r[k])) for k in ("J", "Q_ave", "dp_ave", "max_dgamma", "kkt")])


def _evaluate(disc, gh, props, w, q_ref, dp_ref, guess=None):
    st = disc.solve(gh, props, guess)
    ob = compute_objective(st, w, q_ref, dp_ref)
    return st, ob


def optimize(problem: OptimizationProblem) -> OptimizationTrace:
    pb = problem
    disc = Discretization(pb.grid, pb.bc, pb.cfg)
    filt = DensityFilter(pb.grid, pb.radius)
    gamma = np.full(disc.ncore, float(pb.gamma0))
    trace = OptimizationTrace(pb.w)
    mma = MmaState(disc.ncore, move=pb.move)
    state = None
    try:
        gh = filt.apply(gamma)
        state, ob = _evaluate(disc, gh, pb.props, pb.w, 1.0, 1.0)
        if pb.normalize:
            trace.q_ref = ob.q_ave if ob.q_ave > 0 else 1.0
            trace.dp_ref = ob.dp_ave if ob.dp_ave > 0 else 1.0
        ob = compute_objective(state, pb.w, trace.q_ref, trace.dp_ref)
        trace.initial = {"J": ob.J, "Q_ave": ob.q_ave, "dp_ave": ob.dp_ave}
        for it in range(pb.budget):
            dj, _ = sensitivities(disc, state, pb.props, pb.w, trace.q_ref, trace.dp_ref, filt)
            new = mma_update(gamma, dj, mma)
            new = np.clip(new, 0.0, 1.0)
            change = float(np.max(np.abs(new - gamma)))
            trace.rows.append({"iter": it, "J": ob.J, "Q_ave": ob.q_ave, "dp_ave": ob.dp_ave,
                               "max_dgamma": change, "kkt": box_kkt(gamma, dj),
                               "sub_kkt": subproblem_kkt(mma)})
            gamma = new
            gh = filt.apply(gamma)
            state, ob = _evaluate(disc, gh, pb.props, pb.w, trace.q_ref, trace.dp_ref, state)
            if change < pb.change_tol:
                break
    except SolverError as exc:
        trace.status, trace.message = "diverged", str(exc)
    trace.gamma = gamma
    trace.gamma_hat = filt.apply(gamma)
    if trace.status == "ok":
        trace.final = {"J": ob.J, "Q_ave": ob.q_ave, "dp_ave": ob.dp_ave}
    return trace


def _run_one(args):
    problem, w = args
    from dataclasses import replace
    try:
        return optimize(replace(problem, w=w))
    except Exception as exc:  # a failed run must not abort the sweep
        return OptimizationTrace(w, status="failed", message=f"{type(exc).__name__}: {exc}")


def sweep(problem: OptimizationProblem, w_list, workers: int | None = 1) -> list[OptimizationTrace]:
    w_list = [float(w) for w in w_list]
    if not w_list:
        raise ValueError("w_list must not be empty")
    if any(w < 0 for w in w_list):
        raise ValueError("weighting factors must be non-negative")
    jobs = [(problem, w) for w in w_list]
    if workers == 1 or len(jobs) == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_one, jobs))


def write_pareto_csv(traces: list[OptimizationTrace], path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["w", "Q_ave", "dp_ave", "J", "iterations", "status"])
        for t in traces:
            f = t.final or {"Q_ave": math.nan, "dp_ave": math.nan, "J": math.nan}
            wr.writerow([repr(t.w), repr(float(f["Q_ave"])), repr(float(f["dp_ave"])), repr(float(f["J"])),
                         len(t.rows), t.status])
