import pytest
from hypothesis import settings

from riskloop.dsl import load_model
from riskloop.scenario import bundled_path, bundled_scenario

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def cell_model():
    return load_model(bundled_path("sorting_cell.rkml"))


@pytest.fixture(scope="session")
def cell():
    return bundled_scenario("cell")


@pytest.fixture(scope="session")
def violating():
    return bundled_scenario("violating")


@pytest.fixture(scope="session")
def fenced():
    return bundled_scenario("fenced")


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS, line
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(line(RESULTS[n]))
