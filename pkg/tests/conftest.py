import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from uwbeam.beamformer import ArrayGeometry
from uwbeam.dsp import PulseSpec

settings.register_profile(
    "default", deadline=None, max_examples=30, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

FS = 1e7 / 256
SPACE = dict(fc=12500.0, M=24, delta=0.05, Ns=6)
MACE = dict(fc=13000.0, M=12, delta=0.12, Ns=8)


def symbol_period(Ns):
    return Ns / FS


@pytest.fixture
def space_pulse():
    return PulseSpec(symbol_period(6), 6)


@pytest.fixture
def space_geom():
    return ArrayGeometry(SPACE["M"], SPACE["delta"])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_bpsk(rng, n):
    return 1.0 - 2.0 * rng.integers(0, 2, n)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
