import numpy as np
import pytest

from tsivrpg.envs import build_frozenlake8x8, build_tiny
from tsivrpg.policy import TabularFeatures


@pytest.fixture(scope="session")
def frozenlake():
    return build_frozenlake8x8()


@pytest.fixture
def switch():
    return build_tiny("two_state_switch")


@pytest.fixture
def chain():
    return build_tiny("three_state_chain")


def tabular(model):
    return TabularFeatures(model.num_states, model.num_actions)


def random_policy(rng, S, A):
    p = rng.random((S, A)) + 0.05
    return p / p.sum(axis=1, keepdims=True)


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), floor))


# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
