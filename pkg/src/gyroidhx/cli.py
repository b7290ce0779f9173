"""Command-line workbench.

Exit codes: 0 ok, 1 re-run outputs differ from the manifest, 2 input error,
3 solver non-convergence, 4 geometry infeasible, 5 mesh invalid.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dehomog import DesignField, PinchOffError, dehomogenize, thickness_correlation
from .geometry import GeometryError, MeshError, export_stl, save_spec_json
from .grid import StructuredGrid, counterflow_layout
from .io import core_to_full, read_vtk_field, write_vtk_field
from .manifest import MANIFEST_NAME, RunManifest, utc_now
from .materials import C_MAX, C_MIN, L_CELL
from .metrics import DEFAULT_ETAS, dimensionless_suite, improvement_rate
from .optimize import OptimizationProblem, optimize, sweep, write_pareto_csv
from .properties import (EffectivePropertySet, PropertyError, RveSampleTable, TableError, build_property_set,
                         generate_synthetic_rve_table)
from .solver import BoundaryConditions, Discretization, SolverConfig, SolverError

logger = logging.getLogger("gyroidhx")

EXIT_OK, EXIT_MISMATCH, EXIT_INPUT, EXIT_SOLVER, EXIT_GEOMETRY, EXIT_MESH = 0, 1, 2, 3, 4, 5
THREADS_ENV = "GYROIDHX_THREADS"

DEFAULT_CONFIG = {
    "properties_json": None,            # null: build a synthetic set from synthetic_seed
    "synthetic_seed": 0,
    "conduction_resolution": 32,
    "l_cell_m": L_CELL,
    "c_min_m": C_MIN,
    "c_max_m": C_MAX,
    "core_cells": [8, 8],
    "refine": 1,
    "duct_width_cells": 2,
    "duct_length_cells": 1,
    "u_in_m_per_s": [0.03, 0.03],
    "t_in_K": [333.15, 293.15],
    "p_out_Pa": [0.0, 0.0],
    "solver_tol": 1e-10,
    "solver_max_iter": 60,
    "solver_damping": 1.0,
    "design_gamma_hat": 0.5,            # uniform design for `solve` when design_vtk is null
    "design_vtk": None,
    "baseline_gamma_hat": 0.0,
    "reference_gamma_hat": 0.5,
    "w": 0.0,
    "w_list": [0.0, 0.25, 0.5, 1.0],
    "budget": 50,
    "filter_radius_m": None,            # null: 1.5 grid spacings
    "gamma0": 0.5,
    "move_limit": 0.2,
    "change_tol": 1e-3,
    "workers": None,                    # null: GYROIDHX_THREADS or 1
    "etas": list(DEFAULT_ETAS),
}


class InputError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def load_config(path=None, overrides: dict | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    user = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {path}: {exc}") from None
        if not isinstance(user, dict):
            raise InputError("config must be a JSON object")
    user.update(overrides or {})
    unknown = sorted(set(user) - set(cfg))
    if unknown:
        raise InputError(f"unknown config keys: {', '.join(unknown)}")
    cfg.update(user)
    return cfg


def _pair(v, name):
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise InputError(f"{name} must be a two-element list (fluid 1, fluid 2)")
    return {1: float(v[0]), 2: float(v[1])}


def build_grid(cfg: dict) -> StructuredGrid:
    try:
        return counterflow_layout(tuple(cfg["core_cells"]), cfg["l_cell_m"], int(cfg["refine"]),
                                  int(cfg["duct_width_cells"]), int(cfg["duct_length_cells"]))
    except (ValueError, TypeError) as exc:
        raise InputError(f"invalid grid settings: {exc}") from None


def build_bc(cfg: dict) -> BoundaryConditions:
    return BoundaryConditions(_pair(cfg["u_in_m_per_s"], "u_in_m_per_s"), _pair(cfg["t_in_K"], "t_in_K"),
                              _pair(cfg["p_out_Pa"], "p_out_Pa"))


def build_solver_config(cfg: dict) -> SolverConfig:
    try:
        return SolverConfig(tol=float(cfg["solver_tol"]), max_iter=int(cfg["solver_max_iter"]),
                            damping=float(cfg["solver_damping"]))
    except ValueError as exc:
        raise InputError(str(exc)) from None


def load_properties(cfg: dict, manifest: RunManifest | None = None) -> EffectivePropertySet:
    path = cfg["properties_json"]
    if path is None:
        table = generate_synthetic_rve_table(int(cfg["synthetic_seed"]))
        return build_property_set(table, cfg["c_min_m"], cfg["c_max_m"], int(cfg["conduction_resolution"]))
    if not Path(path).is_file():
        raise InputError(f"property file {path} does not exist")
    if manifest is not None:
        manifest.record_input(path)
    try:
        return EffectivePropertySet.load(path)
    except (KeyError, ValueError, TypeError) as exc:
        raise InputError(f"invalid property file {path}: {exc}") from None


def load_design(cfg: dict, grid: StructuredGrid, manifest: RunManifest | None = None) -> np.ndarray:
    """Filtered design on the core cells."""
    ncore = int(grid.core_mask.sum())
    path = cfg["design_vtk"]
    if path is None:
        g = float(cfg["design_gamma_hat"])
        if not 0 <= g <= 1:
            raise InputError("design_gamma_hat must lie in [0, 1]")
        return np.full(ncore, g)
    if manifest is not None:
        manifest.record_input(path)
    try:
        meta, _, vals = read_vtk_field(path)
    except (OSError, ValueError, KeyError, IndexError) as exc:
        raise InputError(f"cannot read design {path}: {exc}") from None
    if tuple(meta["dims"]) != grid.shape:
        raise InputError(f"design grid {meta['dims']} does not match {grid.shape}")
    core = vals[grid.core_mask.ravel()]
    if not np.all(np.isfinite(core)) or np.any(core < 0) or np.any(core > 1):
        raise InputError("design must cover the core with values in [0, 1]")
    return core


def _workers(cfg: dict) -> int:
    if cfg["workers"] is not None:
        return max(int(cfg["workers"]), 1)
    return max(int(os.environ.get(THREADS_ENV, "1")), 1)


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------

def write_state(run_dir: Path, state, grid: StructuredGrid) -> None:
    for name, values in state.fields().items():
        write_vtk_field(run_dir / f"{name}.vtk", grid, values, name)
    write_vtk_field(run_dir / "gamma_hat.vtk", grid, core_to_full(grid, state.gh), "gamma_hat")


def write_residuals(path: Path, history: dict) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["fluid", "iter", "relative_residual"])
        for f, h in history.items():
            for i, r in enumerate(h):
                wr.writerow([f, i, repr(float(r))])


def _metrics(state, props, cfg):
    disc = state.disc
    base = disc.solve(np.full(disc.ncore, float(cfg["baseline_gamma_hat"])), props)
    rb = dimensionless_suite(base, props, etas=cfg["etas"])
    rep = dimensionless_suite(state, props, {"j0": rb.j, "f0": rb.f}, etas=cfg["etas"])
    ref = disc.solve(np.full(disc.ncore, float(cfg["reference_gamma_hat"])), props)
    rr = dimensionless_suite(ref, props, etas=cfg["etas"])
    rates = {}
    for e, v in rep.f_low.items():
        ref_v = rr.f_low[e]
        rates[e] = improvement_rate(v, ref_v) if ref_v > 0 else None
    rep.improvement_rate = {str(k): v for k, v in rates.items()}
    return rep


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_fit_properties(args, cfg, run_dir: Path, manifest: RunManifest) -> int:
    if args.synthetic is not None:
        table = generate_synthetic_rve_table(int(args.synthetic))
        manifest.seed = int(args.synthetic)
        table.to_csv(run_dir / "rve_table.csv")
    else:
        if args.csv is None:
            raise InputError("give an RVE table CSV or --synthetic SEED")
        manifest.record_input(args.csv)
        try:
            table = RveSampleTable.from_csv(args.csv)
        except OSError as exc:
            raise InputError(str(exc)) from None
    props = build_property_set(table, cfg["c_min_m"], cfg["c_max_m"], int(cfg["conduction_resolution"]))
    props.save(run_dir / "properties.json")
    check = props.check()
    report = {"check": check, **props.report}
    (run_dir / "fit_report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    if not check["ok"]:
        failed = [k for k, v in check.items() if k != "ok" and not v]
        print(f"error: property checks failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_INPUT
    print(f"fitted {len(report.get('c_values', []))} wall thicknesses -> {run_dir / 'properties.json'}")
    return EXIT_OK


def cmd_solve(args, cfg, run_dir, manifest) -> int:
    grid, bc, scfg = build_grid(cfg), build_bc(cfg), build_solver_config(cfg)
    props = load_properties(cfg, manifest)
    gh = load_design(cfg, grid, manifest)
    disc = Discretization(grid, bc, scfg)
    try:
        state = disc.solve(gh, props)
    except SolverError as exc:
        write_residuals(run_dir / "residuals.csv", {"flow": exc.history})
        raise
    write_state(run_dir, state, grid)
    write_residuals(run_dir / "residuals.csv", state.history)
    rep = _metrics(state, props, cfg)
    rep.save_json(run_dir / "metrics.json")
    rep.save_csv(run_dir / "metrics.csv")
    print(f"Q_ave = {rep.Q:.6g} W, dp_ave = {rep.dP:.6g} Pa")
    return EXIT_OK


def _problem(cfg, grid, bc, scfg, props) -> OptimizationProblem:
    try:
        return OptimizationProblem(grid, props, bc, scfg, w=float(cfg["w"]), budget=int(cfg["budget"]),
                                   filter_radius=cfg["filter_radius_m"], gamma0=float(cfg["gamma0"]),
                                   move=float(cfg["move_limit"]), change_tol=float(cfg["change_tol"]))
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _write_trace_outputs(run_dir: Path, trace, grid, suffix=""):
    trace.to_csv(run_dir / f"trace{suffix}.csv")
    if trace.gamma is not None:
        write_vtk_field(run_dir / f"gamma{suffix}.vtk", grid, core_to_full(grid, trace.gamma), "gamma")
        write_vtk_field(run_dir / f"gamma_hat{suffix}.vtk", grid, core_to_full(grid, trace.gamma_hat), "gamma_hat")


def cmd_optimize(args, cfg, run_dir, manifest) -> int:
    grid, bc, scfg = build_grid(cfg), build_bc(cfg), build_solver_config(cfg)
    props = load_properties(cfg, manifest)
    trace = optimize(_problem(cfg, grid, bc, scfg, props))
    _write_trace_outputs(run_dir, trace, grid)
    if trace.status != "ok":
        raise SolverError(trace.message)
    disc = Discretization(grid, bc, scfg)
    state = disc.solve(trace.gamma_hat, props)
    for name, values in state.fields().items():
        write_vtk_field(run_dir / f"{name}.vtk", grid, values, name)
    write_residuals(run_dir / "residuals.csv", state.history)
    rep = _metrics(state, props, cfg)
    rep.save_json(run_dir / "metrics.json")
    rep.save_csv(run_dir / "metrics.csv")
    print(f"J {trace.initial['J']:.6g} -> {trace.final['J']:.6g} in {len(trace.rows)} iterations")
    return EXIT_OK


def cmd_sweep(args, cfg, run_dir, manifest) -> int:
    grid, bc, scfg = build_grid(cfg), build_bc(cfg), build_solver_config(cfg)
    props = load_properties(cfg, manifest)
    try:
        traces = sweep(_problem(cfg, grid, bc, scfg, props), cfg["w_list"], _workers(cfg))
    except ValueError as exc:
        raise InputError(str(exc)) from None
    for t in traces:
        _write_trace_outputs(run_dir, t, grid, f"_w{t.w:g}")
    write_pareto_csv(traces, run_dir / "pareto.csv")
    failed = [t.w for t in traces if t.status != "ok"]
    for t in traces:
        f = t.final or {}
        print(f"w={t.w:g}: status={t.status} Q_ave={f.get('Q_ave', float('nan')):.6g} "
              f"dp_ave={f.get('dp_ave', float('nan')):.6g}")
    if failed:
        raise SolverError(f"runs for w={failed} did not converge")
    return EXIT_OK


def _read_design(path, cfg) -> DesignField:
    p = Path(path)
    try:
        if p.suffix.lower() == ".json":
            d = json.loads(p.read_text())
            return DesignField(np.array(d["gamma_hat"], dtype=float), d["origin_m"], d["spacing_m"])
        meta, _, vals = read_vtk_field(p)
    except (OSError, ValueError, KeyError, IndexError, TypeError) as exc:
        raise InputError(f"cannot read design {path}: {exc}") from None
    return DesignField.from_full(vals.reshape(meta["dims"]), meta["spacing"], meta.get("origin", (0, 0, 0)))


def cmd_dehomogenize(args, cfg, run_dir, manifest) -> int:
    if args.resolution < 8:
        raise InputError("resolution must be >= 8 voxels per unit cell")
    manifest.record_input(args.design)
    try:
        design = _read_design(args.design, cfg)
    except GeometryError as exc:
        raise InputError(str(exc)) from None
    if np.any(design.gamma_hat < 0) or np.any(design.gamma_hat > 1):
        raise InputError("design values must lie in [0, 1]")
    res = dehomogenize(design, args.resolution, cfg["l_cell_m"], cfg["c_min_m"], cfg["c_max_m"],
                       partitions=not args.no_partitions)
    export_stl(res.mesh, run_dir / args.stl_name, validate=True)
    save_spec_json(res.spec, run_dir / "gyroid_spec.json")
    rho = thickness_correlation(res.wall, design)
    report = {"triangles": res.mesh.n_faces, "watertight": bool(res.mesh.watertight),
              "wall_area_m2": res.wall.area(), "wall_volume_m3": res.wall.volume(),
              "thickness_rank_correlation": None if np.isnan(rho) else rho,
              "partition_slabs": len(res.partitions), "resolution": args.resolution}
    (run_dir / "dehomogenize_report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    print(f"{res.mesh.n_faces} triangles, watertight, thickness rank correlation {rho:.4f}")
    return EXIT_OK


def cmd_metrics(args, cfg, run_dir, manifest) -> int:
    grid, bc, scfg = build_grid(cfg), build_bc(cfg), build_solver_config(cfg)
    props = load_properties(cfg, manifest)
    gh = load_design(cfg, grid, manifest)
    state = Discretization(grid, bc, scfg).solve(gh, props)
    rep = _metrics(state, props, cfg)
    rep.save_json(run_dir / "metrics.json")
    rep.save_csv(run_dir / "metrics.csv")
    print(json.dumps(rep.to_json(), indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {"fit-properties": cmd_fit_properties, "solve": cmd_solve, "optimize": cmd_optimize,
            "sweep": cmd_sweep, "dehomogenize": cmd_dehomogenize, "metrics": cmd_metrics}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gyroidhx", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"gyroidhx {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config (unit-suffixed keys)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=JSON",
                       help="override one config key, e.g. --set w=0.5")
        p.add_argument("--out", required=True, help="run directory")

    p = sub.add_parser("fit-properties", help="fit an effective property set")
    p.add_argument("csv", nargs="?", help="RVE sample table CSV")
    p.add_argument("--synthetic", type=int, metavar="SEED", help="use the seeded synthetic generator")
    common(p)
    for name, hlp in (("solve", "solve one design"), ("optimize", "run the optimisation loop"),
                      ("sweep", "optimise for every w in w_list"), ("metrics", "performance metrics of a design")):
        common(sub.add_parser(name, help=hlp))
    p = sub.add_parser("dehomogenize", help="graded gyroid STL from a design field")
    p.add_argument("design", help="gamma_hat VTK (NaN outside the core) or JSON")
    p.add_argument("--resolution", type=int, default=16, help="voxels per unit cell (>= 8)")
    p.add_argument("--stl-name", default="design.stl")
    p.add_argument("--no-partitions", action="store_true")
    common(p)
    p = sub.add_parser("rerun", help="re-run a manifest and compare output digests")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    return ap


def _overrides(items) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise InputError(f"--set expects KEY=JSON, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def _error(code: int, msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def execute(command: str, args, cfg: dict, run_dir: Path) -> int:
    """Run one command into ``run_dir`` and write its manifest."""
    run_dir.mkdir(parents=True, exist_ok=True)
    argv = {k: v for k, v in vars(args).items() if k not in ("config", "set", "out", "verbose", "command")}
    manifest = RunManifest(command, {"args": argv, "config": cfg}, seed=cfg.get("synthetic_seed"),
                           created_utc=utc_now())
    try:
        code = COMMANDS[command](args, cfg, run_dir, manifest)
    except (InputError, TableError, PropertyError) as exc:
        code = _error(EXIT_INPUT, str(exc))
    except SolverError as exc:
        code = _error(EXIT_SOLVER, f"{exc} (residual history: {run_dir / 'residuals.csv'})")
    except PinchOffError as exc:
        code = _error(EXIT_GEOMETRY, f"{exc}; offending cells: {exc.cells}")
    except MeshError as exc:
        code = _error(EXIT_MESH, str(exc))
    except GeometryError as exc:
        code = _error(EXIT_GEOMETRY, str(exc))
    manifest.exit_code = code
    manifest.status = "ok" if code == EXIT_OK else "failed"
    manifest.finished_utc = utc_now()
    manifest.record_outputs(run_dir)
    manifest.save(run_dir)
    return code


def rerun(manifest_path, out) -> int:
    try:
        old = RunManifest.load(manifest_path)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        return _error(EXIT_INPUT, f"cannot read manifest: {exc}")
    changed = old.verify_inputs()
    if changed:
        return _error(EXIT_INPUT, f"input files changed since the original run: {changed}")
    args = argparse.Namespace(**old.config["args"])
    code = execute(old.command, args, old.config["config"], Path(out))
    new = RunManifest.load(Path(out) / MANIFEST_NAME)
    diff = sorted(k for k in set(old.outputs) | set(new.outputs) if old.outputs.get(k) != new.outputs.get(k))
    if diff:
        return _error(EXIT_MISMATCH, f"outputs differ from the manifest: {diff}")
    if code != old.exit_code:
        return _error(EXIT_MISMATCH, f"exit code {code} differs from recorded {old.exit_code}")
    print(f"re-run reproduced {len(new.outputs)} outputs bit-identically")
    return EXIT_OK


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "rerun":
        return rerun(args.manifest, args.out)
    try:
        cfg = load_config(args.config, _overrides(args.set))
    except InputError as exc:
        return _error(EXIT_INPUT, str(exc))
    return execute(args.command, args, cfg, Path(args.out))


if __name__ == "__main__":
    sys.exit(main())
