import numpy as np
import pytest

from zipkit.chain import make_calibration, synthetic_chain, synthetic_inputs

_ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_chain():
    model = synthetic_chain(4, hidden=16, ffn_width=48, n_heads=4, seed=3)
    x = synthetic_inputs(16, 256, seed=4)
    return model, make_calibration(model, x)


@pytest.fixture
def acceptance_log():
    return _ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
