"""Solver unit and property tests: closed-form fixtures, contraction,
monotone error decay, and consistency between the J and Q fixed points."""

import numpy as np
import pytest

from qdpm import mdp as mdp_mod
from qdpm.errors import ConfigError, SolverConvergenceError
from qdpm.mdp import (
    ExplicitMdp,
    average_reward,
    bellman_backup,
    greedy_policy,
    policy_evaluation,
    q_value_iteration,
    value_iteration,
    write_state_csv,
)

from conftest import make_random_mdp, single_state_mdp, two_state_chain

BETAS = (0.5, 0.9, 0.99)


def myopic_two_action():
    """One state, two actions with rewards 1.0 and 2.0."""
    return ExplicitMdp(
        transition=np.ones((1, 2, 1)),
        expected_reward=np.array([[1.0, 2.0]]),
        available=((0, 1),),
    )


class TestBellmanBackup:
    def test_single_backup_of_zero(self, one_state):
        assert bellman_backup(one_state, np.zeros(1), 0.9) == pytest.approx([1.0])

    def test_beta_zero_is_myopic(self):
        rng = np.random.default_rng(3)
        mdp = make_random_mdp(rng)
        j = rng.normal(size=mdp.n_states)
        expected = mdp.expected_reward.max(axis=1)
        assert bellman_backup(mdp, j, 0.0) == pytest.approx(expected)

    def test_two_state_chain_hand_computation(self, chain):
        out = bellman_backup(chain, np.array([1.0, 2.0]), 0.5)
        assert out == pytest.approx([1.0, 2.0])

    def test_rejects_bad_discount(self, one_state):
        for beta in (1.0, 1.5, -0.1):
            with pytest.raises(ConfigError):
                bellman_backup(one_state, np.zeros(1), beta)

    def test_rejects_mismatched_value_shape(self, chain):
        with pytest.raises(ConfigError):
            bellman_backup(chain, np.zeros(3), 0.5)


class TestValueIteration:
    def test_single_state_geometric_series(self, one_state):
        res = value_iteration(one_state, 0.9, tol=1e-10)
        assert res.converged
        assert res.values == pytest.approx([10.0], abs=1e-8)

    def test_two_state_chain_fixed_point(self, chain):
        res = value_iteration(chain, 0.5, tol=1e-12)
        assert res.values == pytest.approx([1.0, 2.0], abs=1e-10)
        assert list(res.policy) == [0, 0]

    def test_myopic_picks_larger_reward(self):
        res = value_iteration(myopic_two_action(), 0.0)
        assert res.values == pytest.approx([2.0])
        assert res.policy[0] == 1

    def test_nonconvergence_keeps_partial_result(self, one_state):
        res = value_iteration(one_state, 0.9, tol=1e-12, max_iter=3)
        assert not res.converged
        assert res.iterations == 3
        assert res.residual > 1e-12
        assert np.all(np.isfinite(res.values))

    def test_rejects_nonpositive_tol(self, one_state):
        with pytest.raises(ConfigError):
            value_iteration(one_state, 0.9, tol=0.0)

    @pytest.mark.parametrize("beta", BETAS)
    def test_contraction(self, beta):
        rng = np.random.default_rng(7)
        for _ in range(50):
            mdp = make_random_mdp(rng)
            j = rng.normal(size=mdp.n_states) * 5
            k = rng.normal(size=mdp.n_states) * 5
            lhs = np.max(np.abs(bellman_backup(mdp, j, beta) - bellman_backup(mdp, k, beta)))
            rhs = beta * np.max(np.abs(j - k))
            assert lhs <= rhs + 1e-12

    @pytest.mark.parametrize("beta", BETAS)
    def test_monotone_error_decay(self, beta):
        rng = np.random.default_rng(11)
        for _ in range(5):
            mdp = make_random_mdp(rng)
            j_star = value_iteration(mdp, beta, tol=1e-12).values
            j = np.zeros(mdp.n_states)
            err0 = np.max(np.abs(j - j_star))
            for k in range(1, 30):
                j = bellman_backup(mdp, j, beta)
                err = np.max(np.abs(j - j_star))
                assert err <= beta**k * err0 + 1e-9


class TestQValueIteration:
    def test_single_state_equals_j(self, one_state):
        res = q_value_iteration(one_state, 0.9, tol=1e-10)
        assert res.values[0, 0] == pytest.approx(10.0, abs=1e-8)

    def test_myopic_two_action(self):
        res = q_value_iteration(myopic_two_action(), 0.0)
        assert res.values[0] == pytest.approx([1.0, 2.0])

    def test_two_state_chain(self, chain):
        res = q_value_iteration(chain, 0.5, tol=1e-12)
        assert res.values[:, 0] == pytest.approx([1.0, 2.0], abs=1e-10)

    def test_inadmissible_entries_are_minus_inf(self):
        mdp = ExplicitMdp(
            transition=np.ones((1, 2, 1)),
            expected_reward=np.array([[1.0, 5.0]]),
            available=((0,),),
        )
        res = q_value_iteration(mdp, 0.5)
        assert res.values[0, 1] == -np.inf

    @pytest.mark.parametrize("beta", BETAS)
    def test_max_q_matches_j_star(self, beta):
        rng = np.random.default_rng(13)
        tol = 1e-10
        for _ in range(10):
            mdp = make_random_mdp(rng)
            j = value_iteration(mdp, beta, tol=tol).values
            q = q_value_iteration(mdp, beta, tol=tol).values
            assert np.max(np.abs(q.max(axis=1) - j)) <= 2 * tol / (1 - beta)


class TestPolicyEvaluation:
    def test_two_state_chain(self, chain):
        j = policy_evaluation(chain, np.array([0, 0]), 0.5)
        assert j == pytest.approx([1.0, 2.0], abs=1e-10)

    def test_beta_zero_is_immediate_reward(self):
        rng = np.random.default_rng(17)
        mdp = make_random_mdp(rng)
        pi = np.zeros(mdp.n_states, dtype=int)
        j = policy_evaluation(mdp, pi, 0.0)
        assert j == pytest.approx(mdp.expected_reward[:, 0])

    @pytest.mark.parametrize("beta", BETAS)
    def test_greedy_policy_reproduces_j_star(self, beta):
        rng = np.random.default_rng(19)
        tol = 1e-10
        for _ in range(10):
            mdp = make_random_mdp(rng)
            res = value_iteration(mdp, beta, tol=tol)
            j_pi = policy_evaluation(mdp, res.policy, beta)
            assert np.max(np.abs(j_pi - res.values)) <= 2 * tol / (1 - beta)

    def test_rejects_inadmissible_policy(self, chain):
        with pytest.raises(ConfigError):
            policy_evaluation(chain, np.array([0, 5]), 0.5)


class TestAverageReward:
    def test_single_state(self, one_state):
        assert average_reward(one_state, np.array([0])) == pytest.approx(1.0)

    def test_absorbing_chain_concentrates_mass(self, chain):
        assert average_reward(chain, np.array([0, 0])) == pytest.approx(1.0, abs=1e-8)

    def test_periodic_alternation(self):
        # Deterministic two-cycle with rewards 0 and 2: occupancy (0.5, 0.5).
        P = np.zeros((2, 1, 2))
        P[0, 0, 1] = 1.0
        P[1, 0, 0] = 1.0
        mdp = ExplicitMdp(P, np.array([[0.0], [2.0]]), ((0,), (0,)))
        assert average_reward(mdp, np.array([0, 0])) == pytest.approx(1.0, abs=1e-8)

    def test_nonconvergence_raises_with_partial_result(self, chain):
        with pytest.raises(SolverConvergenceError) as exc_info:
            average_reward(chain, np.array([0, 0]), tol=1e-12, max_iter=1)
        assert isinstance(exc_info.value.result, float)


class TestExplicitMdpValidation:
    def test_rejects_bad_row_sum(self):
        P = np.ones((1, 1, 1)) * 0.5
        with pytest.raises(ConfigError, match="sums to"):
            ExplicitMdp(P, np.zeros((1, 1)), ((0,),))

    def test_rejects_empty_action_set(self):
        with pytest.raises(ConfigError, match="empty action set"):
            ExplicitMdp(np.ones((1, 1, 1)), np.zeros((1, 1)), ((),))

    def test_rejects_out_of_range_action(self):
        with pytest.raises(ConfigError, match="out of range"):
            ExplicitMdp(np.ones((1, 1, 1)), np.zeros((1, 1)), ((0, 1),))

    def test_rejects_nonfinite_reward(self):
        with pytest.raises(ConfigError, match="not finite"):
            ExplicitMdp(np.ones((1, 1, 1)), np.array([[np.inf]]), ((0,),))

    def test_rejects_probability_above_one(self):
        P = np.zeros((2, 1, 2))
        P[0, 0, 0] = 1.5
        P[0, 0, 1] = -0.5
        P[1, 0, 1] = 1.0
        with pytest.raises(ConfigError):
            ExplicitMdp(P, np.zeros((2, 1)), ((0,), (0,)))


def test_greedy_policy_breaks_ties_toward_lowest_index():
    mdp = ExplicitMdp(
        transition=np.ones((1, 2, 1)),
        expected_reward=np.array([[2.0, 2.0]]),
        available=((0, 1),),
    )
    assert greedy_policy(mdp, np.zeros(1), 0.5)[0] == 0


def test_write_state_csv_format(tmp_path, chain):
    res = value_iteration(chain, 0.5, tol=1e-12)
    path = tmp_path / "policy.csv"
    write_state_csv(path, res.policy, res.values)
    raw = path.read_bytes().decode()
    lines = raw.splitlines()
    assert lines[0] == "state_index,action_index,value"
    assert len(lines) == 3
    assert "\r" not in raw
    state, action, value = lines[2].split(",")
    assert (state, action) == ("1", "0")
    assert float(value) == pytest.approx(2.0, abs=1e-10)
