import numpy as np
import pytest

from pulseswitch.models import get_model
from pulseswitch.separatrix import switch_pair


@pytest.fixture(scope="session")
def toggle():
    return get_model("toggle")


@pytest.fixture(scope="session")
def toggle_pair(toggle):
    return switch_pair(toggle)


@pytest.fixture(scope="session")
def decay():
    return get_model("decay")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
