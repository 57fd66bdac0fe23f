import numpy as np
import pytest

from naswd import synth
from naswd.hsi_io import default_wavelengths


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_spec():
    return synth.SyntheticSpec(n_per_class=(8, 8, 8), seed=3)


@pytest.fixture(scope="session")
def small_table(small_spec):
    return synth.synth_table(small_spec)


@pytest.fixture
def wl224():
    return default_wavelengths()


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(LINES):
            terminalreporter.write_line(line)
