import numpy as np
import pytest

from qflnoma.scenario import ChannelState, ScenarioConfig, generate_scenario


def make_state(legit, interf=None, noise_w=1e-14, seed=0) -> ChannelState:
    """ChannelState from raw gains, bypassing geometry."""
    legit = np.asarray(legit, float)
    n, c = legit.shape
    interf = np.zeros((n, n, c)) if interf is None else np.asarray(interf, float)
    ones = np.ones_like(legit, dtype=complex)
    return ChannelState(0, legit, interf, ones, np.ones_like(interf, dtype=complex), legit, interf, noise_w, seed)


@pytest.fixture
def small_world():
    return generate_scenario(ScenarioConfig(n_devices=3, n_channels=2, seed=1))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
