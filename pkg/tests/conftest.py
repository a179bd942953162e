import os

import pytest
import torch
from hypothesis import HealthCheck, settings

torch.set_default_dtype(torch.float64)

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def gen():
    return torch.Generator().manual_seed(1234)


_REPORT: list[str] = []


@pytest.fixture(scope="session")
def report():
    """Collects acceptance verdict lines; printed in the terminal summary."""

    def add(status, name, detail=""):
        _REPORT.append(f"{status:<4} {name}: {detail}")

    return add


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in _REPORT:
            terminalreporter.write_line(line)
