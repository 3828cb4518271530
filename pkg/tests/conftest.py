import numpy as np
import pytest

from ligo.linalg import make_rng
from ligo.model import ModelConfig


@pytest.fixture
def rng():
    return make_rng(12345)


@pytest.fixture
def tiny64():
    return ModelConfig(num_layers=1, hidden=8, heads=2, vocab=11, seq_len=4, dtype="float64")


def max_abs(a, b):
    return float(np.max(np.abs(np.asarray(a, float) - np.asarray(b, float))))


# one line per acceptance criterion, repeated at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
