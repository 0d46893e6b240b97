import os
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def circle_run():
    """Seed-0 circle experiment with d = 2, shared by every test that needs it."""
    from extproj.experiments import ExperimentConfig, run_experiment

    t0 = time.perf_counter()
    report, net = run_experiment(ExperimentConfig(experiment="circle_d", d=2, seed=0))
    return report, net, time.perf_counter() - t0


@pytest.fixture(scope="session")
def orbit_runs():
    """Seed-0 orbit recovery for d = 2 and 4, with wall times."""
    from extproj.experiments import ExperimentConfig, run_orbit_recovery

    out = {}
    for d in (2, 4):
        t0 = time.perf_counter()
        rep, _ = run_orbit_recovery(d, ExperimentConfig(seed=0))
        out[d] = (rep, time.perf_counter() - t0)
    return out
