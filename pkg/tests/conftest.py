import os
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=400)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# outcomes of every test in this session, read by the acceptance criteria
SESSION = {"start": None, "outcomes": {}, "lines": []}


def pytest_sessionstart(session):
    SESSION["start"] = time.perf_counter()


def pytest_collection_modifyitems(session, config, items):
    # acceptance criteria run last so they can inspect the rest of the session
    items.sort(key=lambda item: "test_acceptance" in item.nodeid)


def pytest_runtest_logreport(report):
    if report.when == "call" or report.outcome != "passed":
        outcome = "xfailed" if hasattr(report, "wasxfail") else report.outcome
        prev = SESSION["outcomes"].get(report.nodeid)
        if prev is None or prev == "passed":
            SESSION["outcomes"][report.nodeid] = outcome


def pytest_terminal_summary(terminalreporter):
    if SESSION["lines"]:
        terminalreporter.section("acceptance criteria")
        for line in SESSION["lines"]:
            terminalreporter.write_line(line)


@pytest.fixture
def session_state():
    return SESSION


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
