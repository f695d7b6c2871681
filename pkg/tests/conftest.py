import numpy as np
import pytest

from fracmag.grid import build_grid, standard_domain


@pytest.fixture(scope="session")
def line96():
    return build_grid(standard_domain(1), 96)


@pytest.fixture(scope="session")
def line128():
    return build_grid(standard_domain(1), 128)


@pytest.fixture(scope="session")
def disc24():
    return build_grid(standard_domain(2), 24)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = {}


@pytest.fixture
def record_criterion():
    """Print and keep one pass/fail line per acceptance criterion."""

    def record(number, passed, detail):
        line = f"[criterion {number}] {'PASS' if passed else 'FAIL'}: {detail}"
        print(line)
        _CRITERIA[number] = line
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
