import math

import pytest

from sqtunnel.ammonia import AmmoniaConfig, ammonia_units, run_ammonia_pipeline
from sqtunnel.eigensolver import ground_wavenumber, square_bound_state
from sqtunnel.potentials import SquareDoubleWell
from sqtunnel.stochastic_dynamics import OsmoticField
from sqtunnel.units import UnitSystem

_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_CRITERIA] = {}


@pytest.fixture(scope="session")
def criteria(pytestconfig):
    """Record of acceptance checks: criterion -> list of (name, passed, detail)."""
    return pytestconfig.stash[_CRITERIA]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_CRITERIA, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        checks = results[number]
        ok = all(passed for _, passed, _ in checks)
        detail = "; ".join(f"{name}{'' if passed else ' [FAIL]'}: {text}" for name, passed, text in checks)
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def dimensionless():
    return UnitSystem.dimensionless()


@pytest.fixture(scope="session")
def square_well():
    return SquareDoubleWell(6.0, 2.0, 2.0)


@pytest.fixture(scope="session")
def square_state(square_well):
    return square_bound_state(square_well, ground_wavenumber(square_well), "even")


@pytest.fixture(scope="session")
def square_field(square_state):
    return OsmoticField.from_state(square_state)


@pytest.fixture(scope="session")
def nh3_units():
    return ammonia_units()


@pytest.fixture(scope="session")
def ammonia_report():
    return run_ammonia_pipeline(AmmoniaConfig())


def rel(a, b):
    return abs(a / b - 1.0) if b != 0 else math.inf
