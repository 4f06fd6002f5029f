import numpy as np
import pytest

from kacsphere.densities import make_density


@pytest.fixture(scope="session")
def gaussian():
    return make_density("gaussian")


@pytest.fixture(scope="session")
def mixture():
    return make_density("mixture")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
