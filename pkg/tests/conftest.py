import numpy as np
import pytest

from crl import CmdpModel, build_queue_cmdp, slater_slack, solve_cmdp_exact
from crl.flow import crl_sets

ACCEPTANCE_LINES = []


def random_cmdp(rng, n_states=3, n_actions=2, n_constraints=1, gamma=0.8, threshold_quantile=0.3):
    """Dense random CMDP; thresholds sit below the best achievable constraint value."""
    P = rng.random((n_actions, n_states, n_states)) + 0.05
    P /= P.sum(axis=2, keepdims=True)
    r = rng.uniform(-1, 1, (n_states, n_actions))
    g = rng.uniform(-1, 1, (n_constraints, n_states, n_actions))
    q = rng.random(n_states) + 0.1
    q /= q.sum()
    h = np.array([threshold_quantile * gi.min() + (1 - threshold_quantile) * gi.mean() for gi in g])
    return CmdpModel(P, r, g, h, gamma, q)


def random_policy(rng, n_states, n_actions):
    pi = rng.dirichlet(np.ones(n_actions), size=n_states)
    return pi


@pytest.fixture(scope="session")
def queue_model():
    return build_queue_cmdp()


@pytest.fixture(scope="session")
def queue_lp(queue_model):
    return solve_cmdp_exact(queue_model)


@pytest.fixture(scope="session")
def queue_psi(queue_model):
    return slater_slack(queue_model).slack


@pytest.fixture(scope="session")
def queue_sets(queue_model, queue_psi):
    return crl_sets(queue_model, queue_psi)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
