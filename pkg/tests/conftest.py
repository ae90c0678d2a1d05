import time

import pytest

from shakenlattice.lattice import LatticeConfig
from shakenlattice.optimizer import OptimizerConfig, optimize_family, optimize_interferometer

ACCEPTANCE = {}


@pytest.fixture(scope="session")
def lattice():
    return LatticeConfig()


@pytest.fixture(scope="session")
def family(lattice):
    """Default-config interferometers n = 1..5 from one sequential optimization."""
    start = time.perf_counter()
    fam = optimize_family(range(1, 6), OptimizerConfig(), lattice)
    fam["elapsed"] = time.perf_counter() - start
    return fam


@pytest.fixture(scope="session")
def biased_protocol(lattice):
    protocol, records = optimize_interferometer(5, OptimizerConfig(bias_acceleration=-0.71), lattice)
    return protocol, records


@pytest.fixture(scope="session")
def acceptance_report():
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, text = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {text}")
