"""Effective conductivity of one phase of a unit cell on a voxel grid."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .geometry import CellField, GyroidSpec

FLUID_ONE_REGION = "fluid1"
SOLID_REGION = "solid"


class ConductionError(RuntimeError):
    def __init__(self, msg, residuals=()):
        super().__init__(msg)
        self.residuals = list(residuals)


@dataclass
class ConductionResult:
    k_eff: float
    connected: bool
    volume_fraction: float
    residuals: list[float] = field(default_factory=list)


def voxel_phase(spec: GyroidSpec, phase: str, resolution: int, subsamples: int = 4) -> np.ndarray:
    """Fraction of each voxel occupied by ``phase`` (``subsamples``^3 midpoints)."""
    if isinstance(spec.c, CellField):
        raise ValueError("conduction homogenisation needs a constant c")
    if phase not in (FLUID_ONE_REGION, SOLID_REGION):
        raise ValueError(f"unknown phase {phase!r}")
    m = resolution * subsamples
    t = (np.arange(m) + 0.5) * (spec.l_cell / m)
    frac = np.zeros((resolution,) * 3)
    for i in range(resolution):
        sl = t[i * subsamples:(i + 1) * subsamples]
        pts = np.stack(np.meshgrid(sl, t, t, indexing="ij"), axis=-1)
        g1, g2 = spec.level_sets(pts)
        inside = g1 < 0 if phase == FLUID_ONE_REGION else (g1 >= 0) & (g2 >= 0)
        frac[i] = inside.reshape(subsamples, resolution, subsamples, resolution, subsamples).mean(axis=(0, 2, 4))
    return frac


def homogenize_mask(fraction: np.ndarray, k: float, length: float, axis: int = 0,
                    rtol: float = 1e-10, maxiter: int = 20_000) -> ConductionResult:
    """Steady conduction through a voxelised phase of a cubic cell.

    ``fraction`` is the phase fraction per voxel (a boolean mask works too);
    each voxel conducts with ``k * fraction`` and faces use the harmonic mean
    of the two voxels. Faces normal to ``axis`` are held at T = 1 (low) and
    T = 0 (high), the other faces are periodic, empty voxels are void.
    """
    frac = np.moveaxis(np.asarray(fraction, dtype=float), axis, 0)
    n = frac.shape[0]
    if frac.shape != (n, n, n):
        raise ValueError("fraction field must be a cube")
    mask = frac > 0
    kv = k * frac
    d = length / n
    phi = float(frac.mean())
    idx = -np.ones(mask.shape, dtype=np.int64)
    idx[mask] = np.arange(int(mask.sum()))
    nun = int(mask.sum())
    if nun == 0:
        return ConductionResult(0.0, False, phi)

    rows, cols, cond = [], [], []
    for a in range(3):
        nb = np.roll(idx, -1, axis=a)
        knb = np.roll(kv, -1, axis=a)
        both = (idx >= 0) & (nb >= 0)
        if a == 0:
            both[-1] = False           # no wrap along the gradient direction
        rows.append(idx[both])
        cols.append(nb[both])
        k1, k2 = kv[both], knb[both]
        cond.append(2 * k1 * k2 / (k1 + k2) * d)     # harmonic mean * d^2 / d
    r, c, gf = np.concatenate(rows), np.concatenate(cols), np.concatenate(cond)
    hot = idx[0][mask[0]]
    cold = idx[-1][mask[-1]]
    kcell = kv[mask]

    adj = sp.coo_matrix((np.ones(len(r)), (r, c)), shape=(nun, nun))
    ncomp, lab = connected_components(adj, directed=False)
    touches_hot = np.zeros(ncomp, bool)
    touches_cold = np.zeros(ncomp, bool)
    touches_hot[lab[hot]] = True
    touches_cold[lab[cold]] = True
    if not np.any(touches_hot & touches_cold):
        return ConductionResult(0.0, False, phi)
    # drop floating components (no Dirichlet contact makes the system singular)
    keep = (touches_hot | touches_cold)[lab]
    remap = -np.ones(nun, dtype=np.int64)
    remap[keep] = np.arange(int(keep.sum()))
    m = int(keep.sum())
    ek = keep[r] & keep[c]
    r, c, gf = remap[r[ek]], remap[c[ek]], gf[ek]
    ghot = 2 * kcell[hot[keep[hot]]] * d
    gcold = 2 * kcell[cold[keep[cold]]] * d
    hot = remap[hot[keep[hot]]]
    cold = remap[cold[keep[cold]]]

    diag = np.zeros(m)
    np.add.at(diag, r, gf)
    np.add.at(diag, c, gf)
    np.add.at(diag, hot, ghot)
    np.add.at(diag, cold, gcold)
    A = sp.coo_matrix(
        (np.concatenate([diag, -gf, -gf]),
         (np.concatenate([np.arange(m), r, c]), np.concatenate([np.arange(m), c, r]))),
        shape=(m, m)).tocsr()
    b = np.zeros(m)
    np.add.at(b, hot, ghot)

    M = sp.diags(1.0 / diag)
    history: list[float] = []
    bnorm = np.linalg.norm(b)

    def cb(xk):
        history.append(float(np.linalg.norm(b - A @ xk) / bnorm))

    T, info = spla.cg(A, b, x0=np.full(m, 0.5), rtol=rtol, atol=0.0, maxiter=maxiter, M=M, callback=cb)
    final = float(np.linalg.norm(b - A @ T) / bnorm)
    if info != 0 or final > 10 * rtol:
        raise ConductionError(f"CG did not converge (info={info}, residual={final:.2e})", history)
    flux = float(np.sum(ghot * (1.0 - T[hot])))
    # Fourier: flux / A_cell = k* dT / L with A_cell = L^2, dT = 1
    return ConductionResult(flux / length, True, phi, history)


def conduction_homogenize(spec: GyroidSpec, phase: str = SOLID_REGION, resolution: int = 32,
                          k: float = 237.0, axis: int = 0) -> ConductionResult:
    if resolution < 32:
        raise ValueError("resolution must be >= 32 voxels per cell")
    frac = voxel_phase(spec, phase, resolution)
    return homogenize_mask(frac, k, spec.l_cell, axis)
