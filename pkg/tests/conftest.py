import time
from importlib import resources

import pytest
import yaml

from sastt.engine import run_simulation
from sastt.scenario import parse_scenario

# criterion number -> (passed, summary); filled by test_acceptance.py
ACCEPTANCE = {}


def shipped_doc(name):
    return yaml.safe_load((resources.files("sastt") / "scenarios" / f"{name}.yaml").read_text())


def shipped(name):
    return parse_scenario(shipped_doc(name))


def timed_run(sc, cfg=None):
    t0 = time.perf_counter()
    trace = run_simulation(sc, cfg)
    return trace, time.perf_counter() - t0


def single_agent_doc(**agent):
    a = dict(id="a", social_index=0.5, start_point=[0.0, 0.0], target_point=[4.0, 3.0],
             start_radius=1.0, target_radius=1.0, completion_time=5.0, rho_min=0.3, rho_max=0.5,
             goal_gain=0.3, controller_gains=[5.0])
    a.update(agent)
    return dict(dimension=2, horizon=5.0, agents=[a])


@pytest.fixture(scope="session")
def crossing_run():
    return timed_run(shipped("crossing_2d"))


@pytest.fixture(scope="session")
def uav_run():
    return timed_run(shipped("uav_3d"))


@pytest.fixture(scope="session")
def swap_traces():
    return run_simulation(shipped("hardware_swap")), run_simulation(shipped("hardware_swap_reversed"))


@pytest.fixture(scope="session")
def single_trace():
    return run_simulation(parse_scenario(single_agent_doc()))


@pytest.fixture
def record_criterion():
    def record(number, passed, summary):
        ACCEPTANCE[number] = (bool(passed), summary)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {summary}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, summary = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {summary}")
