"""Q-table mechanics: the one-step update, chi-greedy selection and its RNG
contract, schedules, and the stability properties of repeated updates."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdpm.agent import (
    ExploreDecay,
    LearnerConfig,
    QTable,
    TransitionSample,
    VisitDecayRate,
    greedy_action,
    greedy_policy_from_qtable,
    greedy_value,
    init_qtable,
    q_update,
    schedule_value,
    select_action,
    write_qtable_csv,
)
from qdpm.device import compile_device
from qdpm.errors import ConfigError


def rng(seed=0):
    return np.random.default_rng(seed)


def small_table(values=None, n_states=2, available=((0, 1), (0, 1))):
    qt = init_qtable(n_states, available, 0.0)
    if values is not None:
        for s, row in enumerate(values):
            for a, v in zip(available[s], row):
                qt.values[s, a] = v
    return qt


class TestInitQtable:
    def test_zero_init_and_tie_break(self):
        qt = small_table()
        assert np.all(qt.values[np.isfinite(qt.values)] == 0.0)
        assert np.all(qt.visits == 0)
        assert greedy_action(qt, 0) == 0

    def test_inadmissible_entries_are_nan(self):
        qt = init_qtable(2, ((0,), (0, 1)), 0.0)
        assert np.isnan(qt.values[0, 1])
        assert not qt.is_admissible(0, 1)

    def test_std3_table_fits_the_memory_claim(self, std3):
        cd = compile_device(std3)
        avail = [cd.action_index_sets[s // cd.n_queue] for s in range(cd.n_states)]
        qt = init_qtable(cd.n_states, avail, 0.0)
        assert qt.n_states == 45
        assert qt.admissible_count() <= 90

    def test_rejects_empty_admissible_set(self):
        with pytest.raises(ConfigError):
            init_qtable(1, ((),), 0.0)

    def test_rejects_zero_states(self):
        with pytest.raises(ConfigError):
            init_qtable(0, (), 0.0)


class TestSelectAction:
    def test_pure_exploitation(self):
        qt = small_table([[1.0, 3.0], [0.0, 0.0]])
        assert select_action(qt, 0, 0.0, rng()) == 1

    def test_tie_break_lowest_index(self):
        qt = small_table([[2.0, 2.0], [0.0, 0.0]])
        assert select_action(qt, 0, 0.0, rng()) == 0

    def test_chi_one_is_uniform(self):
        qt = small_table([[1.0, 3.0], [0.0, 0.0]])
        g = rng(123)
        picks = sum(select_action(qt, 0, 1.0, g) for _ in range(10000))
        assert abs(picks - 5000) <= 3 * 50

    def test_exploit_consumes_exactly_one_uniform(self):
        qt = small_table([[1.0, 3.0], [0.0, 0.0]])
        g1, g2 = rng(7), rng(7)
        select_action(qt, 0, 0.0, g1)
        g2.random()
        assert g1.random() == g2.random()

    def test_explore_consumes_exactly_two_uniforms(self):
        qt = small_table()
        g1, g2 = rng(7), rng(7)
        select_action(qt, 0, 1.0, g1)
        g2.random(2)
        assert g1.random() == g2.random()

    def test_shift_invariance(self):
        qt = small_table([[1.0, 3.0], [2.5, -1.0]])
        before = [select_action(qt, s, 0.0, rng()) for s in range(2)]
        qt.values[0] += 17.0
        qt.values[1] -= 4.0
        after = [select_action(qt, s, 0.0, rng()) for s in range(2)]
        assert before == after

    def test_rejects_bad_chi(self):
        with pytest.raises(ConfigError):
            select_action(small_table(), 0, 1.5, rng())


class TestQUpdate:
    def test_worked_example(self):
        qt = small_table([[2.0, 0.0], [0.0, 4.0]])
        t = TransitionSample(s=0, a=0, c=1.0, s_next=1, available_next=(0, 1))
        new = q_update(qt, t, gamma=0.5, lam=0.9)
        assert new == pytest.approx(3.3, abs=1e-12)
        assert qt.values[0, 0] == pytest.approx(3.3, abs=1e-12)

    def test_full_overwrite_myopic(self):
        qt = small_table([[2.0, 0.0], [5.0, 4.0]])
        t = TransitionSample(s=0, a=0, c=-1.5, s_next=1, available_next=(0, 1))
        assert q_update(qt, t, gamma=1.0, lam=0.0) == pytest.approx(-1.5)

    def test_geometric_decay_to_zero(self):
        qt = small_table([[8.0, 0.0], [0.0, 0.0]])
        t = TransitionSample(s=0, a=0, c=0.0, s_next=1, available_next=(0, 1))
        for k in range(1, 20):
            q_update(qt, t, gamma=0.25, lam=0.0)
            assert qt.values[0, 0] == pytest.approx(8.0 * 0.75**k)

    def test_locality_and_visit_increment(self):
        qt = small_table([[1.0, 2.0], [3.0, 4.0]])
        before = qt.values.copy()
        t = TransitionSample(s=1, a=0, c=0.5, s_next=0, available_next=(0, 1))
        q_update(qt, t, gamma=0.5, lam=0.5)
        changed = before != qt.values
        assert changed.sum() == 1 and changed[1, 0]
        assert qt.visits[1, 0] == 1 and qt.visits.sum() == 1

    def test_rejects_inadmissible_pair(self):
        qt = init_qtable(2, ((0,), (0, 1)), 0.0)
        t = TransitionSample(s=0, a=1, c=0.0, s_next=1, available_next=(0, 1))
        with pytest.raises(ConfigError):
            q_update(qt, t, gamma=0.5, lam=0.5)

    def test_gamma_zero_rejected_unless_allowed(self):
        qt = small_table()
        t = TransitionSample(s=0, a=0, c=1.0, s_next=1, available_next=(0, 1))
        with pytest.raises(ConfigError):
            q_update(qt, t, gamma=0.0, lam=0.5)

    def test_gamma_zero_freeze(self):
        qt = small_table([[1.0, 2.0], [3.0, 4.0]])
        before = qt.values.copy()
        for s in range(2):
            for a in range(2):
                t = TransitionSample(s=s, a=a, c=99.0, s_next=1, available_next=(0, 1))
                q_update(qt, t, gamma=0.0, lam=0.5, allow_zero=True)
        assert np.array_equal(before[np.isfinite(before)], qt.values[np.isfinite(qt.values)])

    @given(
        data=st.data(),
        lam=st.floats(0.0, 0.95),
        q_init_frac=st.floats(0.0, 1.0),
    )
    @settings(max_examples=50, deadline=None)
    def test_bounded_iterates(self, data, lam, q_init_frac):
        c_min, c_max = -2.0, 3.0
        lo, hi = c_min / (1 - lam), c_max / (1 - lam)
        q_init = lo + q_init_frac * (hi - lo)
        qt = init_qtable(2, ((0, 1), (0, 1)), q_init)
        for _ in range(30):
            t = TransitionSample(
                s=data.draw(st.integers(0, 1)),
                a=data.draw(st.integers(0, 1)),
                c=data.draw(st.floats(c_min, c_max)),
                s_next=data.draw(st.integers(0, 1)),
                available_next=(0, 1),
            )
            q_update(qt, t, gamma=data.draw(st.floats(0.01, 1.0)), lam=lam)
            finite = qt.values[np.isfinite(qt.values)]
            assert np.all(finite >= lo - 1e-9) and np.all(finite <= hi + 1e-9)


class TestGreedyReadouts:
    def test_greedy_value(self):
        qt = small_table([[1.0, 3.0], [0.0, 0.0]])
        assert greedy_value(qt, 0) == 3.0

    def test_single_action_state(self):
        qt = init_qtable(1, ((0,),), -2.5)
        assert greedy_value(qt, 0) == -2.5

    def test_all_zero_policy_is_all_zeros(self):
        qt = small_table()
        assert list(greedy_policy_from_qtable(qt)) == [0, 0]

    def test_qstar_loaded_table_recovers_oracle_policy(self, std3, std3_qstar, std3_solve):
        cd = compile_device(std3)
        avail = [cd.action_index_sets[s // cd.n_queue] for s in range(cd.n_states)]
        qt = init_qtable(cd.n_states, avail, 0.0)
        for s in range(cd.n_states):
            for a in qt.available[s]:
                qt.values[s, a] = std3_qstar.values[s, a]
        assert np.array_equal(greedy_policy_from_qtable(qt), std3_solve.policy)
        for s in range(cd.n_states):
            assert greedy_value(qt, s) == pytest.approx(std3_solve.values[s], abs=1e-7)


class TestSchedules:
    def test_constants(self):
        cfg = LearnerConfig(learning_rate=0.1, explore=0.05)
        assert schedule_value(cfg, 0, 0) == (0.1, 0.05)
        assert schedule_value(cfg, 10**6, 500) == (0.1, 0.05)

    def test_no_decay_when_d_is_one(self):
        cfg = LearnerConfig(explore=ExploreDecay(chi0=0.5, decay=1.0, chi_min=0.01))
        assert schedule_value(cfg, 12345, 0)[1] == 0.5

    def test_visit_decay_substitution(self):
        cfg = LearnerConfig(learning_rate=VisitDecayRate(1.0, 1.0))
        assert schedule_value(cfg, 0, 9)[0] == pytest.approx(0.1)

    def test_explore_decay_floor(self):
        cfg = LearnerConfig(explore=ExploreDecay(chi0=0.2, decay=0.5, chi_min=0.01))
        assert schedule_value(cfg, 100, 0)[1] == 0.01

    def test_validation(self):
        with pytest.raises(ConfigError):
            VisitDecayRate(0.0, 1.0)
        with pytest.raises(ConfigError):
            ExploreDecay(decay=0.0)
        with pytest.raises(ConfigError):
            LearnerConfig(discount=1.0)
        with pytest.raises(ConfigError):
            LearnerConfig(learning_rate=0.0)
        with pytest.raises(ConfigError):
            LearnerConfig(explore=-0.1)
        with pytest.raises(ConfigError):
            LearnerConfig(q_init=float("inf"))


def test_snapshot_is_independent_copy():
    qt = small_table([[1.0, 2.0], [3.0, 4.0]])
    snap = qt.snapshot()
    qt.values[0, 0] = 99.0
    assert snap.values[0, 0] == 1.0


def test_write_qtable_csv(tmp_path):
    qt = init_qtable(2, ((0,), (0, 1)), 1.5)
    qt.visits[1, 1] = 7
    path = tmp_path / "qtable.csv"
    write_qtable_csv(path, qt)
    lines = path.read_text().splitlines()
    assert lines[0] == "state_index,action_index,q_value,visits"
    assert len(lines) == 4  # three admissible pairs
    assert lines[3] == "1,1,1.5,7"
