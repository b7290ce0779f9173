"""Method of Moving Asymptotes for box-constrained problems.

Without general constraints the MMA subproblem is separable, and each
variable minimises p/(U - x) + q/(x - L) on [a, b] in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MmaState:
    n: int
    xmin: float | np.ndarray = 0.0
    xmax: float | np.ndarray = 1.0
    move: float = 0.2
    asyinit: float = 0.5
    asyincr: float = 1.2
    asydecr: float = 0.7
    raa0: float = 1e-5
    asymin: float = 1e-4          # closest asymptote distance, fraction of the range

    def __post_init__(self):
        if not 0 < self.move <= 1:
            raise ValueError("move limit must lie in (0, 1]")
        self.xmin = np.broadcast_to(np.asarray(self.xmin, float), (self.n,)).copy()
        self.xmax = np.broadcast_to(np.asarray(self.xmax, float), (self.n,)).copy()
        self.low = None
        self.upp = None
        self.xold1 = None
        self.xold2 = None
        self.iter = 0
        self.last = None            # (p, q, low, upp, alpha, beta, x_new) of the last subproblem


def _asymptotes(x, st: MmaState):
    rng = st.xmax - st.xmin
    if st.iter < 2 or st.low is None:
        low = x - st.asyinit * rng
        upp = x + st.asyinit * rng
    else:
        zz = (x - st.xold1) * (st.xold1 - st.xold2)
        fac = np.where(zz > 0, st.asyincr, np.where(zz < 0, st.asydecr, 1.0))
        low = x - fac * (st.xold1 - st.low)
        upp = x + fac * (st.upp - st.xold1)
        low = np.clip(low, x - 10 * rng, x - st.asymin * rng)
        upp = np.clip(upp, x + st.asymin * rng, x + 10 * rng)
    return low, upp


def mma_update(x, grad, st: MmaState) -> np.ndarray:
    """One MMA step from ``x`` with objective gradient ``grad``."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(grad, dtype=float)
    if x.shape != (st.n,) or g.shape != (st.n,):
        raise ValueError("design and gradient must have the state's size")
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient has non-finite entries")
    low, upp = _asymptotes(x, st)
    rng = st.xmax - st.xmin
    alpha = np.maximum.reduce([st.xmin, low + 0.1 * (x - low), x - st.move * rng])
    beta = np.minimum.reduce([st.xmax, upp - 0.1 * (upp - x), x + st.move * rng])
    gmax = float(np.max(np.abs(g)))
    if gmax == 0.0:
        xn = x.copy()
        p = q = np.zeros_like(x)
    else:
        # the regularisation scales with the gradient so that rescaling the
        # objective does not change the iterates
        reg = st.raa0 * gmax / rng
        p = (upp - x) ** 2 * (np.maximum(g, 0) + 0.001 * np.abs(g) + reg)
        q = (x - low) ** 2 * (np.maximum(-g, 0) + 0.001 * np.abs(g) + reg)
        sp_, sq = np.sqrt(p), np.sqrt(q)
        xn = np.clip((sp_ * low + sq * upp) / (sp_ + sq), alpha, beta)
    st.xold2 = st.xold1
    st.xold1 = x.copy()
    st.low, st.upp = low, upp
    st.iter += 1
    st.last = (p, q, low, upp, alpha, beta, xn)
    return xn


def subproblem_kkt(st: MmaState) -> float:
    """Largest relative violation of the last subproblem's KKT conditions."""
    if st.last is None:
        return 0.0
    p, q, low, upp, a, b, x = st.last
    t1 = p / (upp - x) ** 2
    t2 = q / (x - low) ** 2
    d = t1 - t2
    scale = np.maximum(t1 + t2, 1e-300)
    r = np.abs(d) / scale
    tol = 1e-12 * (b - a + 1.0)
    at_a = x <= a + tol
    at_b = x >= b - tol
    r = np.where(at_a, np.maximum(-d, 0) / scale, r)
    r = np.where(at_b, np.maximum(d, 0) / scale, r)
    r = np.where((t1 + t2) == 0, 0.0, r)
    return float(np.max(r)) if len(r) else 0.0


def box_kkt(x, g, xmin=0.0, xmax=1.0, tol: float = 1e-9) -> float:
    """First-order optimality residual of min f on a box."""
    x = np.asarray(x, float)
    g = np.asarray(g, float)
    r = np.where(x <= xmin + tol, np.minimum(g, 0), np.where(x >= xmax - tol, np.maximum(g, 0), g))
    return float(np.max(np.abs(r))) if len(r) else 0.0
