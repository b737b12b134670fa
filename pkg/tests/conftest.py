import numpy as np
import pytest

from frfsurrogate.dataset import FrfTable
from frfsurrogate.oracle import OracleConfig, build_structure, dataset_at_frequency

# Lines collected by the acceptance suite and printed after the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_config():
    return OracleConfig(nx=2, ny=2, nz=2, n_modes=4, seed=7)


@pytest.fixture(scope="session")
def small_model(small_config):
    return build_structure(small_config)


@pytest.fixture(scope="session")
def small_table(small_model):
    return dataset_at_frequency(small_model, 100.0)


@pytest.fixture(scope="session")
def medium_model():
    # 4x3x2 = 24 nodes, 5184 rows per frequency
    return build_structure(OracleConfig(nx=4, ny=3, nz=2, seed=3))


@pytest.fixture(scope="session")
def medium_table(medium_model):
    return dataset_at_frequency(medium_model, 100.0)


def synthetic_table(X, y, frequency=100.0):
    """FrfTable around arbitrary features; node indices are the row numbers."""
    X = np.asarray(X, dtype=float)
    n = len(X)
    idx = np.arange(n)
    return FrfTable(
        frequency=frequency,
        n_nodes=max(n, 1),
        i=idx,
        j=idx,
        features=X,
        target=np.asarray(y, dtype=float),
    )
