"""Constant material properties (water / aluminium at 313.15 K)."""
from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class Fluid:
    rho: float = 992.2        # kg/m^3
    mu: float = 6.53e-4       # Pa s
    cp: float = 4178.0        # J/(kg K)
    k: float = 0.631          # W/(m K)

    @property
    def prandtl(self) -> float:
        return self.mu * self.cp / self.k

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Solid:
    k: float = 237.0          # W/(m K)
    cp: float = 900.0
    rho: float = 2700.0

    def to_json(self) -> dict:
        return asdict(self)


WATER = Fluid()
ALUMINIUM = Solid()

L_CELL = 4.6e-3
C_MIN = 1.426e-3
C_MAX = 3.75e-3
DESIGN_C_VALUES = tuple(v * 1e-3 for v in (1.426, 1.75, 2.0, 2.25, 2.5, 2.75, 3.0, 3.25, 3.5, 3.75))
VDOT_RANGE = (1.0e-8, 2.5e-6)     # m^3/s per RVE
T_HOT_IN = 333.15
T_COLD_IN = 293.15
U_IN = 0.03
