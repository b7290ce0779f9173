"""Effective-property tables, fits and their evaluation with derivatives.

The porous model is closed by functions of the filtered design value
gamma_hat (and of the Darcy speed |U| for h*). Scalar properties are
quadratics, alpha and beta are polynomials fitted to per-thickness
Darcy-Forchheimer coefficients, and h* is a bivariate polynomial.
"""
from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.optimize import nnls

from .conduction import FLUID_ONE_REGION, SOLID_REGION, conduction_homogenize
from .geometry import GyroidSpec, measure_cell
from .materials import ALUMINIUM, C_MAX, C_MIN, DESIGN_C_VALUES, L_CELL, VDOT_RANGE, WATER, Fluid, Solid

SCALAR_NAMES = ("eps", "area", "kf", "ks", "alpha", "beta")
TABLE_COLUMNS = ("c_m", "Vdot_m3s", "dp_Pa", "Q_W", "Tw_K", "Ti_K", "A_m2", "Vf_m3")
T_BOUNDS = (293.15, 333.15)


class FitError(ValueError):
    pass


class TableError(ValueError):
    pass


class PropertyError(ValueError):
    pass


# ---------------------------------------------------------------------------
# RVE sample table
# ---------------------------------------------------------------------------

@dataclass
class RveSampleTable:
    """Rows of RVE results; columns are float arrays named as in the CSV."""

    data: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        missing = [c for c in TABLE_COLUMNS if c not in self.data]
        if missing:
            raise TableError(f"missing columns: {missing}")
        self.data = {c: np.asarray(self.data[c], dtype=float) for c in TABLE_COLUMNS}
        n = {len(v) for v in self.data.values()}
        if len(n) != 1:
            raise TableError("columns have different lengths")
        self.meta.setdefault("l_cell", L_CELL)
        self.meta.setdefault("provenance", "MEASURED")

    def __len__(self) -> int:
        return len(self.data["c_m"])

    def __getitem__(self, key: str) -> np.ndarray:
        return self.data[key]

    @property
    def l_cell(self) -> float:
        return float(self.meta["l_cell"])

    def row(self, i: int) -> dict:
        return {c: float(self.data[c][i]) for c in TABLE_COLUMNS}

    def validate(self) -> None:
        d = self.data
        for c in TABLE_COLUMNS:
            if not np.all(np.isfinite(d[c])):
                raise TableError(f"column {c} has non-finite entries")
        flowing = d["Vdot_m3s"] > 0
        if np.any(d["dp_Pa"][flowing] <= 0):
            raise TableError("dp must be positive for positive flow rate")
        lo, hi = T_BOUNDS
        for c in ("Tw_K", "Ti_K"):
            if np.any(d[c] < lo - 1e-9) or np.any(d[c] > hi + 1e-9):
                raise TableError(f"{c} outside inlet bounds [{lo}, {hi}] K")
        if np.any(d["Vf_m3"] > self.l_cell ** 3 * (1 + 1e-12)):
            raise TableError("fluid volume exceeds the cell volume")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("# meta: " + json.dumps(self.meta, sort_keys=True) + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TABLE_COLUMNS)
            for i in range(len(self)):
                w.writerow([repr(float(self.data[c][i])) for c in TABLE_COLUMNS])

    @classmethod
    def from_csv(cls, path) -> "RveSampleTable":
        text = Path(path).read_text()
        return cls.from_text(text)

    @classmethod
    def from_text(cls, text: str) -> "RveSampleTable":
        meta = {}
        rows: list[list[float]] = []
        header = None
        for lineno, line in enumerate(io.StringIO(text), start=1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                if s.startswith("# meta:"):
                    try:
                        meta = json.loads(s[len("# meta:"):])
                    except json.JSONDecodeError as exc:
                        raise TableError(f"line {lineno}: bad meta JSON ({exc})") from None
                continue
            cells = next(csv.reader([s]))
            if header is None:
                header = [c.strip() for c in cells]
                missing = [c for c in TABLE_COLUMNS if c not in header]
                if missing:
                    raise TableError(f"line {lineno}: header is missing columns {missing}")
                continue
            if len(cells) != len(header):
                raise TableError(f"line {lineno}: expected {len(header)} fields, got {len(cells)}")
            try:
                vals = [float(v) for v in cells]
            except ValueError:
                raise TableError(f"line {lineno}: non-numeric value in row") from None
            rows.append(vals)
        if header is None:
            raise TableError("no header line found")
        arr = np.array(rows, dtype=float).reshape(-1, len(header))
        data = {c: arr[:, header.index(c)] for c in TABLE_COLUMNS}
        return cls(data, meta)


def compute_h_star(row: dict) -> float:
    """Effective heat transfer coefficient Q / (A (T_w - T_i)) of one RVE row."""
    dT = row["Tw_K"] - row["Ti_K"]
    if abs(dT) <= 1e-9:
        raise FitError("wall-fluid temperature difference vanishes; h* is singular")
    if not row["A_m2"] > 0:
        raise FitError("interfacial area must be positive")
    return row["Q_W"] / (row["A_m2"] * dT)


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

@dataclass
class SyntheticConfig:
    """Closed-form stand-in for microscale RVE runs.

    Geometry (eps, A) comes from measure_cell. With D_h = 4 eps L^3 / A the
    generator uses a capillary-bundle permeability K = eps D_h^2 / 48,
    alpha = mu / K, beta = cf rho / sqrt(K), and a Nusselt law
    Nu = nu0 + a Re^0.6 Pr^(1/3) with Re = rho (U/eps) D_h / mu.
    """

    c_values: tuple = DESIGN_C_VALUES
    vdot_range: tuple = VDOT_RANGE
    n_flow: int = 20
    l_cell: float = L_CELL
    fluid: Fluid = WATER
    cf: float = 0.1
    nu0: float = 3.0
    a_nu: float = 0.5
    t_wall: float = 313.15
    samples: int = 64 ** 3
    area_resolution: int = 64


@lru_cache(maxsize=64)
def _cell_geometry(c: float, l_cell: float, samples: int, area_resolution: int):
    m = measure_cell(GyroidSpec(l_cell, c), samples=samples, area_resolution=area_resolution)
    return m.eps1, m.area1


def synthetic_coefficients(eps, area, l_cell: float, fluid: Fluid = WATER, cf: float = 0.1):
    """(alpha, beta, D_h) of the synthetic generator for given eps and A."""
    d_h = 4.0 * eps * l_cell ** 3 / area
    K = eps * d_h ** 2 / 48.0
    return fluid.mu / K, cf * fluid.rho / np.sqrt(K), d_h


def synthetic_h_star(eps, area, u, l_cell: float, fluid: Fluid = WATER, nu0: float = 3.0, a_nu: float = 0.5):
    d_h = 4.0 * eps * l_cell ** 3 / area
    re = fluid.rho * (u / eps) * d_h / fluid.mu
    return fluid.k / d_h * (nu0 + a_nu * re ** 0.6 * fluid.prandtl ** (1.0 / 3.0))


def generate_synthetic_rve_table(seed: int = 0, config: SyntheticConfig | None = None) -> RveSampleTable:
    cfg = config or SyntheticConfig()
    rng = np.random.default_rng(seed)
    L = cfg.l_cell
    vdot = np.geomspace(cfg.vdot_range[0], cfg.vdot_range[1], cfg.n_flow)
    cols = {c: [] for c in TABLE_COLUMNS}
    for c in cfg.c_values:
        eps, area = _cell_geometry(float(c), L, cfg.samples, cfg.area_resolution)
        alpha, beta, _ = synthetic_coefficients(eps, area, L, cfg.fluid, cfg.cf)
        u = vdot / L ** 2
        dp = L * (alpha * u + beta * u ** 2)
        h = synthetic_h_star(eps, area, u, L, cfg.fluid, cfg.nu0, cfg.a_nu)
        t_i = cfg.t_wall + 0.5 + 0.5 * rng.random(len(u))
        q = h * area * (cfg.t_wall - t_i)
        cols["c_m"].append(np.full(len(u), c))
        cols["Vdot_m3s"].append(vdot)
        cols["dp_Pa"].append(dp)
        cols["Q_W"].append(q)
        cols["Tw_K"].append(np.full(len(u), cfg.t_wall))
        cols["Ti_K"].append(t_i)
        cols["A_m2"].append(np.full(len(u), area))
        cols["Vf_m3"].append(np.full(len(u), eps * L ** 3))
    data = {k: np.concatenate(v) for k, v in cols.items()}
    meta = {"l_cell": L, "provenance": "SYNTHETIC", "seed": int(seed),
            "fluid": cfg.fluid.to_json(), "solid": ALUMINIUM.to_json()}
    return RveSampleTable(data, meta)


# ---------------------------------------------------------------------------
# fits
# ---------------------------------------------------------------------------

@dataclass
class DarcyForchheimerFit:
    alpha: float
    beta: float
    residual: float
    clamped: bool


def fit_darcy_forchheimer(u, dp_per_length, relative: bool = True) -> DarcyForchheimerFit:
    """Non-negative least squares for dp/L = alpha U + beta U^2.

    With ``relative`` the residuals are divided by the measured value, which
    is the maximum-likelihood weighting for multiplicative noise and keeps
    the low-velocity samples from being swamped by the high ones.
    """
    u = np.asarray(u, dtype=float)
    y = np.asarray(dp_per_length, dtype=float)
    if np.any(u <= 0):
        raise FitError("superficial velocities must be positive")
    if len(np.unique(u)) < 3:
        raise FitError("need at least 3 distinct velocities (rank-deficient data)")
    A = np.column_stack([u, u ** 2])
    w = 1.0 / y if relative and np.all(y > 0) else np.ones_like(y)
    Aw = A * w[:, None]
    scale = np.linalg.norm(Aw, axis=0)
    As = Aw / scale
    free = np.linalg.lstsq(As, y * w, rcond=None)[0]
    clamped = bool(np.any(free < 0))
    if clamped:
        warnings.warn("unconstrained Darcy-Forchheimer fit has a negative coefficient; clamped to 0",
                      stacklevel=2)
        coef = nnls(As, y * w)[0]
    else:
        coef = free
    coef = coef / scale
    res = float(np.linalg.norm(A @ coef - y))
    return DarcyForchheimerFit(float(coef[0]), float(coef[1]), res, clamped)


@dataclass
class PolyFit:
    coef: np.ndarray            # ascending powers
    max_rel_dev: float

    def __call__(self, x):
        return P.polyval(x, self.coef)


def fit_scalar_property(x, values, degree: int = 2) -> PolyFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(values, dtype=float)
    if len(np.unique(x)) < degree + 1:
        raise FitError(f"need {degree + 1} distinct abscissae for degree {degree}")
    V = P.polyvander(x, degree)
    coef, _, rank, _ = np.linalg.lstsq(V, y, rcond=None)
    if rank < degree + 1:
        raise FitError("rank-deficient polynomial fit")
    fit = P.polyval(x, coef)
    denom = np.maximum(np.abs(y), 1e-300)
    return PolyFit(coef, float(np.max(np.abs(fit - y) / denom)))


def derivative_sign_changes(coef, n: int = 101) -> int:
    """Number of sign changes of p' sampled at n points of [0, 1]."""
    d = P.polyval(np.linspace(0.0, 1.0, n), P.polyder(coef))
    s = np.sign(d[np.abs(d) > 1e-14 * max(1.0, np.max(np.abs(d)))])
    return int(np.count_nonzero(np.diff(s)))


def _bernstein_to_power(b: np.ndarray) -> np.ndarray:
    n = len(b) - 1
    out = np.zeros(n + 1)
    for k, bk in enumerate(b):
        # C(n,k) x^k (1-x)^(n-k) expanded in powers of x
        base = np.zeros(n + 1)
        for j in range(n - k + 1):
            base[k + j] = _comb(n, k) * _comb(n - k, j) * (-1) ** j
        out += bk * base
    return out


def _comb(n: int, k: int) -> float:
    from math import comb
    return float(comb(n, k))


def fit_monotone_polynomial(x, values, degree: int = 3, increasing: bool = True) -> PolyFit:
    """Least-squares polynomial with non-negative value and monotone slope on [0, 1].

    Uses a Bernstein basis whose coefficients are a non-negative start plus
    non-negative increments, which is sufficient for both properties.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(values, dtype=float)
    if len(np.unique(x)) < degree + 1:
        raise FitError(f"need {degree + 1} distinct abscissae for degree {degree}")
    n = degree
    B = np.column_stack([_comb(n, k) * x ** k * (1 - x) ** (n - k) for k in range(n + 1)])
    S = np.tril(np.ones((n + 1, n + 1)))       # b = S @ d, d >= 0
    if not increasing:
        raise FitError("only increasing monotone fits are supported")
    M = B @ S
    scale = np.linalg.norm(M, axis=0)
    d = nnls(M / scale, y)[0] / scale
    coef = _bernstein_to_power(S @ d)
    fit = P.polyval(x, coef)
    return PolyFit(coef, float(np.max(np.abs(fit - y) / np.maximum(np.abs(y), 1e-300))))


def fit_increasing_polynomial(x, values, degree: int = 3) -> PolyFit:
    """Plain least squares if it is positive and increasing on [0, 1], else the monotone fit."""
    fit = fit_scalar_property(x, values, degree)
    g = np.linspace(0.0, 1.0, 101)
    if np.all(P.polyval(g, fit.coef) >= 0) and np.all(P.polyval(g, P.polyder(fit.coef)) > 0):
        return fit
    return fit_monotone_polynomial(x, values, degree)


@dataclass
class HSurface:
    """h*(gh, U) = sum_ij C[i, j] gh^i (U / u_scale)^j."""

    coef: np.ndarray
    u_scale: float
    cv_rmse: float = 0.0
    degrees_tried: dict = field(default_factory=dict)

    def __call__(self, gh, u):
        return P.polyval2d(gh, np.asarray(u) / self.u_scale, self.coef)


def _vander2(gh, un, dg, du):
    return P.polyvander2d(gh, un, [dg, du])


def _lstsq_surface(gh, un, h, dg, du, extra=None):
    V = _vander2(gh, un, dg, du)
    y = h
    if extra is not None:
        V = np.vstack([V, extra[0]])
        y = np.concatenate([h, extra[1]])
    cs = np.linalg.norm(V, axis=0)
    cs[cs == 0] = 1.0
    c = np.linalg.lstsq(V / cs, y, rcond=None)[0] / cs
    return c.reshape(dg + 1, du + 1)


def fit_h_surface_arrays(gh, u, h, degrees=None, folds: int = 5, default=(3, 2),
                         seed: int = 0, u_box=None) -> HSurface:
    """Bivariate polynomial fit of h*; degree pair chosen by k-fold CV."""
    gh = np.asarray(gh, dtype=float)
    u = np.asarray(u, dtype=float)
    h = np.asarray(h, dtype=float)
    ng, nu = len(np.unique(gh)), len(np.unique(u))
    if ng < 4 or nu < 4:
        raise FitError("need at least 4 thickness levels and 4 velocity levels")
    u_scale = float(np.max(np.abs(u)))
    un = u / u_scale
    if degrees is None:
        degrees = [(i, j) for i in range(1, 4) for j in range(1, 5)]
    degrees = [d for d in degrees if d[0] < ng and d[1] < nu]
    if default not in degrees and default[0] < ng and default[1] < nu:
        degrees.append(default)
    perm = np.random.default_rng(seed).permutation(len(h))
    fold_of = np.empty(len(h), dtype=int)
    fold_of[perm] = np.arange(len(h)) % folds
    scores = {}
    for dg, du in degrees:
        err = 0.0
        for k in range(folds):
            tr, te = fold_of != k, fold_of == k
            c = _lstsq_surface(gh[tr], un[tr], h[tr], dg, du)
            err += float(np.sum((P.polyval2d(gh[te], un[te], c) - h[te]) ** 2))
        scores[(dg, du)] = np.sqrt(err / len(h))
    best = min(sorted(scores), key=lambda d: scores[d])
    # keep the documented default unless another degree is clearly better
    if default in scores and scores[default] <= 1.01 * scores[best]:
        best = default
    dg, du = best
    coef = _lstsq_surface(gh, un, h, dg, du)

    lo_u, hi_u = (float(u.min()), float(u.max())) if u_box is None else u_box
    G, U = np.meshgrid(np.linspace(0, 1, 50), np.linspace(lo_u, hi_u, 50) / u_scale, indexing="ij")
    floor = 0.01 * float(np.min(h[h > 0])) if np.any(h > 0) else 1e-6
    weight = 1.0
    for _ in range(12):
        vals = P.polyval2d(G, U, coef)
        bad = vals <= 0
        if not np.any(bad):
            break
        warnings.warn("h* surface negative on validation grid; refitting with positivity penalty",
                      stacklevel=2)
        weight *= 10.0
        extra = (weight * _vander2(G[bad], U[bad], dg, du), weight * np.full(int(bad.sum()), floor))
        coef = _lstsq_surface(gh, un, h, dg, du, extra)
    else:
        vals = P.polyval2d(G, U, coef)
        raise FitError(f"h* surface stays non-positive on validation grid (min {vals.min():.3g})")
    return HSurface(coef, u_scale, float(scores[best]), {f"{a},{b}": float(s) for (a, b), s in scores.items()})


def fit_h_surface(table: RveSampleTable, c_min: float = C_MIN, c_max: float = C_MAX, **kw) -> HSurface:
    L = table.l_cell
    gh = (table["c_m"] - c_min) / (c_max - c_min)
    u = table["Vdot_m3s"] / L ** 2
    h = np.array([compute_h_star(table.row(i)) for i in range(len(table))])
    return fit_h_surface_arrays(gh, u, h, **kw)


# ---------------------------------------------------------------------------
# property set
# ---------------------------------------------------------------------------

@dataclass
class PropertyValues:
    eps: np.ndarray
    area: np.ndarray
    kf: np.ndarray
    ks: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    h: np.ndarray
    d_eps: np.ndarray
    d_area: np.ndarray
    d_kf: np.ndarray
    d_ks: np.ndarray
    d_alpha: np.ndarray
    d_beta: np.ndarray
    dh_dg: np.ndarray
    dh_du: np.ndarray
    clamped: np.ndarray


def _clamp(x, lo, hi):
    """Clamp on the real part (complex-step safe); returns value and inside-flag."""
    xr = np.real(x)
    inside = (xr >= lo) & (xr <= hi)
    out = np.where(xr < lo, lo, np.where(xr > hi, hi, x))
    return out, inside


@dataclass
class EffectivePropertySet:
    """Polynomial closures in gamma_hat (ascending coefficients) plus h*(gh, |U|)."""

    coef: dict[str, np.ndarray]
    h_coef: np.ndarray
    u_scale: float
    u_lo: float
    u_hi: float
    c_min: float = C_MIN
    c_max: float = C_MAX
    l_cell: float = L_CELL
    provenance: str = "SYNTHETIC"
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coef = {k: np.atleast_1d(np.asarray(self.coef[k], dtype=float)) for k in SCALAR_NAMES}
        self.h_coef = np.atleast_2d(np.asarray(self.h_coef, dtype=float))
        if not (self.u_lo < self.u_hi and self.u_scale > 0):
            raise PropertyError("invalid velocity validity box")

    @classmethod
    def constant(cls, eps=0.4, area=3.09 * L_CELL ** 2, kf=0.15, ks=30.0, alpha=1e4, beta=1e5,
                 h=5000.0, u_lo=0.0, u_hi=1.0, **kw) -> "EffectivePropertySet":
        vals = dict(eps=eps, area=area, kf=kf, ks=ks, alpha=alpha, beta=beta)
        return cls({k: [v] for k, v in vals.items()}, [[h]], 1.0, u_lo, u_hi, **kw)

    def evaluate(self, gamma_hat, u_mag) -> PropertyValues:
        gamma_hat, u_mag = np.broadcast_arrays(np.asarray(gamma_hat), np.asarray(u_mag))
        g, g_in = _clamp(gamma_hat, 0.0, 1.0)
        u, u_in = _clamp(u_mag, self.u_lo, self.u_hi)
        vals, ders = {}, {}
        for k in SCALAR_NAMES:
            c = self.coef[k]
            vals[k] = P.polyval(g, c)
            ders[k] = np.where(g_in, P.polyval(g, P.polyder(c)) if len(c) > 1 else 0.0 * g, 0.0)
        un = u / self.u_scale
        h = P.polyval2d(g, un, self.h_coef)
        dh_dg = P.polyval2d(g, un, P.polyder(self.h_coef, axis=0)) if self.h_coef.shape[0] > 1 else 0.0 * h
        dh_du = (P.polyval2d(g, un, P.polyder(self.h_coef, axis=1)) / self.u_scale
                 if self.h_coef.shape[1] > 1 else 0.0 * h)
        dh_dg = np.where(g_in, dh_dg, 0.0)
        dh_du = np.where(u_in, dh_du, 0.0)
        if np.any(np.real(vals["eps"]) <= 0):
            raise PropertyError("porosity evaluates non-positive")
        return PropertyValues(
            vals["eps"], vals["area"], vals["kf"], vals["ks"], vals["alpha"], vals["beta"], h,
            ders["eps"], ders["area"], ders["kf"], ders["ks"], ders["alpha"], ders["beta"],
            dh_dg, dh_du, ~(g_in & u_in))

    def check(self, n: int = 101) -> dict:
        """Invariant checks on an n x n grid of the validity box."""
        g = np.linspace(0.0, 1.0, n)
        u = np.linspace(self.u_lo, self.u_hi, n)
        G, U = np.meshgrid(g, u, indexing="ij")
        v = self.evaluate(G, U)
        dpl_dg = v.d_alpha * U + v.d_beta * U ** 2
        dpl_du = v.alpha + 2 * v.beta * U
        eps = v.eps[:, 0]
        out = {
            "eps_range": bool(np.all(eps > 0) and np.all(eps <= 0.5 + 1e-12)),
            "eps_decreasing": bool(np.all(v.d_eps[:, 0] <= 0)),
            "alpha_positive": bool(np.all(v.alpha > 0)),
            "beta_nonnegative": bool(np.all(v.beta >= 0)),
            "dp_increasing_gamma": bool(np.all(dpl_dg[:, 1:] > 0)) if self.u_hi > 0 else True,
            "dp_increasing_u": bool(np.all(dpl_du > 0)),
            "h_positive": bool(np.all(v.h > 0)),
        }
        out["ok"] = all(out.values())
        return out

    def to_json(self) -> dict:
        return {
            "coef": {k: self.coef[k].tolist() for k in SCALAR_NAMES},
            "h_coef": self.h_coef.tolist(),
            "u_scale": self.u_scale,
            "validity": {"gamma_hat": [0.0, 1.0], "u": [self.u_lo, self.u_hi]},
            "c_min": self.c_min, "c_max": self.c_max, "l_cell": self.l_cell,
            "provenance": self.provenance,
            "report": self.report,
        }

    @classmethod
    def from_json(cls, d: dict) -> "EffectivePropertySet":
        return cls(d["coef"], d["h_coef"], d["u_scale"], d["validity"]["u"][0], d["validity"]["u"][1],
                   d["c_min"], d["c_max"], d["l_cell"], d.get("provenance", "MEASURED"), d.get("report", {}))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "EffectivePropertySet":
        return cls.from_json(json.loads(Path(path).read_text()))


def eval_properties(props: EffectivePropertySet, gamma_hat, u_mag) -> PropertyValues:
    return props.evaluate(gamma_hat, u_mag)


@lru_cache(maxsize=128)
def _conductivity(c: float, l_cell: float, phase: str, k: float, resolution: int) -> float:
    return conduction_homogenize(GyroidSpec(l_cell, c), phase, resolution, k).k_eff


def build_property_set(table: RveSampleTable, c_min: float = C_MIN, c_max: float = C_MAX,
                       conduction_resolution: int = 32, fluid: Fluid = WATER, solid: Solid = ALUMINIUM,
                       h_degrees=None) -> EffectivePropertySet:
    """Fit the full property set from an RVE table plus voxel conduction runs."""
    table.validate()
    L = table.l_cell
    cs = np.unique(table["c_m"])
    gh = (cs - c_min) / (c_max - c_min)
    eps, area, alpha, beta, kf, ks, df_res = [], [], [], [], [], [], []
    for c in cs:
        sel = table["c_m"] == c
        eps.append(float(np.mean(table["Vf_m3"][sel])) / L ** 3)
        area.append(float(np.mean(table["A_m2"][sel])))
        flow = table["Vdot_m3s"][sel] > 0
        fit = fit_darcy_forchheimer(table["Vdot_m3s"][sel][flow] / L ** 2, table["dp_Pa"][sel][flow] / L)
        alpha.append(fit.alpha)
        beta.append(fit.beta)
        df_res.append(fit.residual)
        kf.append(_conductivity(float(c), L, FLUID_ONE_REGION, fluid.k, conduction_resolution))
        ks.append(_conductivity(float(c), L, SOLID_REGION, solid.k, conduction_resolution))
    fits = {
        "eps": fit_scalar_property(gh, eps, 2),
        "area": fit_scalar_property(gh, area, 2),
        "kf": fit_scalar_property(gh, kf, 2),
        "ks": fit_scalar_property(gh, ks, 2),
        "alpha": fit_increasing_polynomial(gh, alpha, 3),
        "beta": fit_increasing_polynomial(gh, beta, 3),
    }
    u = table["Vdot_m3s"] / L ** 2
    hs = fit_h_surface(table, c_min, c_max, degrees=h_degrees)
    report = {
        "c_values": cs.tolist(),
        "per_c": {"eps": eps, "area": area, "kf": kf, "ks": ks, "alpha": alpha, "beta": beta,
                  "df_residual": df_res},
        "max_rel_dev": {k: f.max_rel_dev for k, f in fits.items()},
        "h_cv_rmse": hs.cv_rmse,
        "h_degrees": [hs.coef.shape[0] - 1, hs.coef.shape[1] - 1],
        "h_cv_scores": hs.degrees_tried,
    }
    props = EffectivePropertySet({k: f.coef for k, f in fits.items()}, hs.coef, hs.u_scale,
                                 float(u.min()), float(u.max()), c_min, c_max, L,
                                 table.meta.get("provenance", "MEASURED"), report)
    report["checks"] = props.check()
    return props
