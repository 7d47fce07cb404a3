import numpy as np
import pytest

from piwm import envsim
from piwm.dataset import generate_dataset
from piwm.weaksup import SupervisionConfig


@pytest.fixture(scope="session")
def cartpole():
    return envsim.get_spec("cartpole")


@pytest.fixture(scope="session")
def tiny_data(cartpole):
    """12 short CartPole trajectories at delta = 0.05."""
    return generate_dataset(cartpole, n=12, m=8, cfg=SupervisionConfig(delta=0.05, samples_per_step=10, seed=3),
                            seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def acceptance():
    """Record one verdict per acceptance criterion for the terminal summary."""

    def record(number: int, passed: bool, detail: str):
        _ACCEPTANCE[number] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
