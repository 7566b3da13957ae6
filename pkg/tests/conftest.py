import pytest

from csvx.envs import make_env
from csvx.solver import TrainConfig
from csvx.store import ArtifactStore

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def gw1():
    return make_env("gridworld1")


@pytest.fixture(scope="session")
def gw1_store(gw1):
    return ArtifactStore(gw1, TrainConfig(), seed=0)


@pytest.fixture(scope="session")
def gw1_exact_store(gw1):
    return ArtifactStore(gw1, TrainConfig(backend="abstract"))


@pytest.fixture(scope="session")
def taxi():
    return make_env("taxi")


@pytest.fixture(scope="session")
def taxi_store(taxi):
    return ArtifactStore(taxi, TrainConfig(), seed=0)


@pytest.fixture(scope="session")
def frozen():
    return make_env("frozenlake")


@pytest.fixture(scope="session")
def frozen_store(frozen):
    return ArtifactStore(frozen, TrainConfig(), seed=0)


@pytest.fixture
def record_criterion():
    def record(number: int, passed: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
