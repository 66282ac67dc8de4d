"""Shared fixtures: the default device, solved references, and a random-MDP
factory used by the solver property tests."""

import numpy as np
import pytest

from qdpm import mdp as mdp_mod
from qdpm.device import compile_device, std3_device
from qdpm.env import RewardWeights, build_explicit_mdp
from qdpm.mdp import ExplicitMdp
from qdpm.workload import BernoulliArrivals


@pytest.fixture(scope="session")
def std3():
    return std3_device()


@pytest.fixture(scope="session")
def std3_compiled(std3):
    return compile_device(std3)


@pytest.fixture(scope="session")
def weights():
    return RewardWeights()


@pytest.fixture(scope="session")
def std3_mdp(std3, weights):
    """Explicit MDP for the default device under Bernoulli(0.3)."""
    return build_explicit_mdp(std3, BernoulliArrivals(0.3), weights)


@pytest.fixture(scope="session")
def std3_solve(std3_mdp):
    result = mdp_mod.value_iteration(std3_mdp, 0.95, tol=1e-10)
    assert result.converged
    return result


@pytest.fixture(scope="session")
def std3_qstar(std3_mdp):
    result = mdp_mod.q_value_iteration(std3_mdp, 0.95, tol=1e-10)
    assert result.converged
    return result


def make_random_mdp(rng, n_states=10, n_actions=3):
    """Dense random MDP with every action admissible everywhere."""
    raw = rng.random((n_states, n_actions, n_states)) + 1e-3
    transition = raw / raw.sum(axis=2, keepdims=True)
    reward = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    available = tuple(tuple(range(n_actions)) for _ in range(n_states))
    return ExplicitMdp(transition=transition, expected_reward=reward, available=available)


@pytest.fixture
def random_mdp_factory():
    return make_random_mdp


def single_state_mdp(reward=1.0):
    """One state, one action, self-loop."""
    return ExplicitMdp(
        transition=np.ones((1, 1, 1)),
        expected_reward=np.array([[reward]]),
        available=((0,),),
    )


def two_state_chain():
    """State 0 moves to state 1 (reward 0); state 1 stays (reward 1)."""
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = 1.0
    P[1, 0, 1] = 1.0
    R = np.array([[0.0], [1.0]])
    return ExplicitMdp(transition=P, expected_reward=R, available=((0,), (0,)))


@pytest.fixture
def one_state():
    return single_state_mdp()


@pytest.fixture
def chain():
    return two_state_chain()
