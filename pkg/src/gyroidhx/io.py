"""Legacy ASCII VTK structured-points fields and flat CSV tables."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .grid import StructuredGrid


class FieldFormatError(ValueError):
    pass


def _fmt(x: float) -> str:
    return repr(float(x))


def write_vtk_field(path, grid: StructuredGrid, values, name: str, title: str = "gyroidhx field") -> None:
    """One cell-data scalar (n,) or vector (n, 3) field, values in C order of the grid."""
    v = np.asarray(values, dtype=float)
    n = grid.ncells
    if v.shape not in ((n,), (n, 3)):
        raise FieldFormatError(f"field shape {v.shape} does not match {n} cells")
    vec = v.ndim == 2
    # VTK runs x fastest
    arr = v.reshape(grid.shape + ((3,) if vec else ()))
    arr = np.transpose(arr, (2, 1, 0, 3) if vec else (2, 1, 0)).reshape(n, -1)
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET STRUCTURED_POINTS",
             f"DIMENSIONS {grid.nx + 1} {grid.ny + 1} {grid.nz + 1}", "ORIGIN 0 0 0",
             f"SPACING {_fmt(grid.h)} {_fmt(grid.h)} {_fmt(grid.hz)}", f"CELL_DATA {n}"]
    if vec:
        lines.append(f"VECTORS {name} double")
    else:
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
    lines += [" ".join(_fmt(x) for x in row) for row in arr]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk_field(path):
    """Return ``(meta, name, values)`` with values in C order of the grid."""
    tokens = Path(path).read_text().splitlines()
    if not tokens or not tokens[0].startswith("# vtk DataFile"):
        raise FieldFormatError("not a legacy VTK file")
    if tokens[2].strip() != "ASCII" or tokens[3].split()[1] != "STRUCTURED_POINTS":
        raise FieldFormatError("only ASCII structured points are supported")
    meta = {}
    i = 4
    while i < len(tokens):
        parts = tokens[i].split()
        key = parts[0] if parts else ""
        if key == "DIMENSIONS":
            meta["dims"] = tuple(int(p) - 1 for p in parts[1:4])
        elif key == "ORIGIN":
            meta["origin"] = tuple(float(p) for p in parts[1:4])
        elif key == "SPACING":
            meta["spacing"] = tuple(float(p) for p in parts[1:4])
        elif key == "CELL_DATA":
            meta["n"] = int(parts[1])
        elif key in ("SCALARS", "VECTORS"):
            name = parts[1]
            ncomp = 3 if key == "VECTORS" else 1
            i += 1 if key == "VECTORS" else 2
            break
        i += 1
    else:
        raise FieldFormatError("no field data found")
    vals = np.array(" ".join(tokens[i:]).split(), dtype=float)
    nx, ny, nz = meta["dims"]
    if len(vals) != meta["n"] * ncomp:
        raise FieldFormatError("value count does not match CELL_DATA")
    arr = vals.reshape(nz, ny, nx, ncomp) if ncomp == 3 else vals.reshape(nz, ny, nx)
    arr = np.transpose(arr, (2, 1, 0, 3) if ncomp == 3 else (2, 1, 0))
    return meta, name, arr.reshape(meta["n"], -1) if ncomp == 3 else arr.reshape(-1)


def write_field_csv(path, grid: StructuredGrid, values) -> None:
    v = np.asarray(values, dtype=float).reshape(grid.ncells, -1)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["i", "j", "k"] + (["value"] if v.shape[1] == 1 else [f"v{c}" for c in range(v.shape[1])]))
        for c, idx in enumerate(np.ndindex(grid.shape)):
            wr.writerow(list(idx) + [_fmt(x) for x in v[c]])


def read_field_csv(path, grid: StructuredGrid) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    out = np.full((grid.ncells, len(rows[0]) - 3), np.nan)
    for r in rows[1:]:
        c = np.ravel_multi_index(tuple(int(x) for x in r[:3]), grid.shape)
        out[c] = [float(x) for x in r[3:]]
    return out[:, 0] if out.shape[1] == 1 else out


def core_to_full(grid: StructuredGrid, core_values, fill: float = np.nan) -> np.ndarray:
    full = np.full(grid.ncells, fill)
    full[np.flatnonzero(grid.core_mask.ravel())] = core_values
    return full
