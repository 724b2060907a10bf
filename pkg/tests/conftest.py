import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import oracles  # noqa: E402
from planhrl import envs, pddl  # noqa: E402
from planhrl.parl import make_parl  # noqa: E402


def task_for(name: str):
    return pddl.load_task(*oracles.SHIPPED_PROBLEMS[name])


def parl_for(layout: str, seed: int = 0):
    spec = envs.load_env(layout)
    return make_parl(spec, pddl.load_task(spec.domain_file, spec.problem_file), seed)


@pytest.fixture(scope="session")
def doorkey_task():
    return task_for("doorkey")


@pytest.fixture(scope="session")
def nine_task():
    return task_for("nine-rooms")


@pytest.fixture(scope="session")
def rooms_task():
    return task_for("rooms-16-12")


@pytest.fixture(scope="session")
def doorkey_parl():
    return parl_for("doorkey8")


@pytest.fixture(scope="session")
def rooms4_parl():
    return parl_for("rooms4-20")


@pytest.fixture(scope="session")
def one_cell_parl():
    return parl_for("one-cell")


@pytest.fixture(scope="session")
def teleport_parl():
    return parl_for("doorkey8-teleport")


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is not None and module.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in module.RESULTS:
            terminalreporter.write_line(line)
