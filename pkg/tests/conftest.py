import time

import numpy as np
import pytest

from gyroidhx.grid import counterflow_layout
from gyroidhx.optimize import OptimizationProblem, sweep
from gyroidhx.properties import EffectivePropertySet, build_property_set, generate_synthetic_rve_table

SWEEP_W = (0.0, 0.25, 0.5, 1.0)


@pytest.fixture(scope="session")
def synthetic_table():
    return generate_synthetic_rve_table(0)


@pytest.fixture(scope="session")
def props(synthetic_table):
    """Property set fitted to the seeded synthetic RVE table (desk default)."""
    return build_property_set(synthetic_table)


@pytest.fixture(scope="session")
def props_path(props, tmp_path_factory):
    p = tmp_path_factory.mktemp("props") / "properties.json"
    props.save(p)
    return p


@pytest.fixture
def const_props():
    return EffectivePropertySet.constant()


@pytest.fixture(scope="session")
def desk_grid():
    return counterflow_layout()


@pytest.fixture(scope="session")
def desk_sweep_timed(desk_grid, props):
    """Default desk problem optimised for each w of the sweep (50 iterations), with wall time."""
    t0 = time.perf_counter()
    traces = sweep(OptimizationProblem(desk_grid, props), SWEEP_W, workers=len(SWEEP_W))
    return traces, time.perf_counter() - t0


@pytest.fixture(scope="session")
def desk_sweep(desk_sweep_timed):
    return desk_sweep_timed[0]


ACCEPTANCE = {}
N_CRITERIA = 12


@pytest.fixture
def verdict():
    """Record one acceptance criterion as PASS/FAIL, then assert it."""

    def record(n, ok, detail):
        ACCEPTANCE[n] = (bool(ok), detail)
        print(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        ok, detail = ACCEPTANCE.get(n, (False, "not evaluated"))
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n:2d}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
