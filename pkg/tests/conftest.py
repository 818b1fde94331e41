import dataclasses
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gridweave import config as cfgmod

settings.register_profile("ci", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


@pytest.fixture(scope="session")
def train_exp():
    return cfgmod.load("train")


@pytest.fixture(scope="session")
def test_exp():
    return cfgmod.load("test")


@pytest.fixture(scope="session")
def eval_exp():
    return cfgmod.load("eval")


@pytest.fixture(scope="session")
def trained_a2c(train_exp):
    """One full-length A2C run on the six-house config, shared across modules."""
    import time

    from gridweave.agents import train

    tc = dataclasses.replace(train_exp.train, algo="a2c")
    t0 = time.perf_counter()
    result = train(train_exp.env, tc, seed=0)
    return result, time.perf_counter() - t0


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion, printed at session end."""
    import time

    name = request.node.get_closest_marker("criterion").args[0]
    t0 = time.perf_counter()
    notes: list[str] = []
    yield notes
    rep = getattr(request.node, "rep_call", None)
    ok = rep is not None and rep.passed
    detail = "; ".join(notes)
    line = f"{'PASS' if ok else 'FAIL'}  {name}  ({time.perf_counter() - t0:.1f}s)"
    ACCEPTANCE_LINES.append(line + (f"  {detail}" if detail else ""))
    print(ACCEPTANCE_LINES[-1])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
