"""The model-free power manager: tabular Q storage, chi-greedy action
selection, and the one-step Q update

    Q(s,a) <- (1-gamma) Q(s,a) + gamma (c + lambda * max_b Q(s',b))

with configurable learning-rate and exploration schedules.

Action-selection RNG contract (normative for reproducibility): one uniform
variate decides explore-vs-exploit; exactly one more is consumed only when
exploring, and the random action is floor(u * n_admissible).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class VisitDecayRate:
    """Per-pair learning rate gamma(s,a) = c0 / (c1 + visits(s,a))."""

    c0: float = 1.0
    c1: float = 1.0

    def __post_init__(self):
        if self.c0 <= 0 or self.c1 <= 0:
            raise ConfigError("visit-decay coefficients must be positive")


@dataclass(frozen=True)
class ExploreDecay:
    """Exponentially decaying exploration chi_t = max(chi_min, chi0 * d^t)."""

    chi0: float = 0.2
    decay: float = 0.99997
    chi_min: float = 0.01

    def __post_init__(self):
        for p, what in ((self.chi0, "chi0"), (self.chi_min, "chi_min")):
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{what} must lie in [0, 1]")
        if not 0.0 < self.decay <= 1.0:
            raise ConfigError("decay must lie in (0, 1]")


@dataclass(frozen=True)
class LearnerConfig:
    """Q-learner hyperparameters.

    `discount` is the single discount factor shared by the learner and the
    model-based solvers. Constant learning rate and exploration are the
    defaults (suited to tracking); visit-decayed gamma and decaying chi are
    the usual choices for stationary convergence studies.
    """

    discount: float = 0.95
    learning_rate: Union[float, VisitDecayRate] = 0.1
    explore: Union[float, ExploreDecay] = 0.05
    q_init: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.discount < 1.0:
            raise ConfigError("discount must lie in [0, 1)")
        if isinstance(self.learning_rate, int) and not isinstance(self.learning_rate, bool):
            object.__setattr__(self, "learning_rate", float(self.learning_rate))
        if isinstance(self.explore, int) and not isinstance(self.explore, bool):
            object.__setattr__(self, "explore", float(self.explore))
        if isinstance(self.learning_rate, float):
            if not 0.0 < self.learning_rate <= 1.0:
                raise ConfigError("constant learning rate must lie in (0, 1]")
        elif not isinstance(self.learning_rate, VisitDecayRate):
            raise ConfigError("learning_rate must be a float or VisitDecayRate")
        if isinstance(self.explore, float):
            if not 0.0 <= self.explore <= 1.0:
                raise ConfigError("constant explore must lie in [0, 1]")
        elif not isinstance(self.explore, ExploreDecay):
            raise ConfigError("explore must be a float or ExploreDecay")
        if not np.isfinite(self.q_init):
            raise ConfigError("q_init must be finite")


@dataclass(frozen=True)
class TransitionSample:
    """The (s, a, c, s') quadruple consumed by one Q update."""

    s: int
    a: int
    c: float
    s_next: int
    available_next: tuple[int, ...]

    def __post_init__(self):
        if not self.available_next:
            raise ConfigError("available_next must be non-empty")


class QTable:
    """|S| x |A_max| action-value table with admissibility sets and per-pair
    visit counters. Owned by a single simulation loop; `snapshot` copies it
    for read-only metric evaluation elsewhere."""

    __slots__ = ("values", "visits", "available")

    def __init__(self, values: np.ndarray, visits: np.ndarray, available: tuple[tuple[int, ...], ...]):
        self.values = values
        self.visits = visits
        self.available = available

    @property
    def n_states(self) -> int:
        return self.values.shape[0]

    @property
    def max_actions(self) -> int:
        return self.values.shape[1]

    def admissible_count(self) -> int:
        return sum(len(a) for a in self.available)

    def is_admissible(self, s: int, a: int) -> bool:
        return a in self.available[s]

    def snapshot(self) -> "QTable":
        return QTable(self.values.copy(), self.visits.copy(), self.available)


def init_qtable(
    n_states: int, available: Sequence[Sequence[int]], q_init: float = 0.0
) -> QTable:
    """Fresh table: all admissible entries = q_init, visit counts zero.

    Inadmissible entries are NaN and are never read by any selector here.
    """
    if n_states < 1:
        raise ConfigError("n_states must be >= 1")
    if len(available) != n_states:
        raise ConfigError("available must list one admissible set per state")
    sets = []
    for s, acts in enumerate(available):
        acts = tuple(sorted(int(a) for a in acts))
        if not acts:
            raise ConfigError(f"state {s} has an empty admissible set")
        if acts[0] < 0:
            raise ConfigError(f"state {s}: negative action index")
        sets.append(acts)
    max_actions = max(a[-1] for a in sets) + 1
    values = np.full((n_states, max_actions), np.nan)
    visits = np.zeros((n_states, max_actions), dtype=np.int64)
    for s, acts in enumerate(sets):
        values[s, list(acts)] = q_init
    return QTable(values, visits, tuple(sets))


def greedy_action(q: QTable, s: int) -> int:
    """Argmax over admissible Q(s, .), lowest index on ties."""
    row = q.values[s]
    acts = q.available[s]
    best = acts[0]
    best_v = row[best]
    for a in acts[1:]:
        v = row[a]
        if v > best_v:
            best, best_v = a, v
    return best


def greedy_value(q: QTable, s: int) -> float:
    """Max over admissible Q(s, .)."""
    row = q.values[s]
    return float(max(row[a] for a in q.available[s]))


def select_action(q: QTable, s: int, chi: float, rng) -> int:
    """chi-greedy selection.

    With probability chi, a uniform draw over the admissible actions of s;
    otherwise the greedy action with lowest-index tie-breaking.
    """
    if not 0.0 <= chi <= 1.0:
        raise ConfigError("chi must lie in [0, 1]")
    if rng.random() < chi:
        acts = q.available[s]
        return acts[int(rng.random() * len(acts))]
    return greedy_action(q, s)


def q_update(
    q: QTable, t: TransitionSample, gamma: float, lam: float, allow_zero: bool = False
) -> float:
    """Apply one Q-learning update; mutates exactly the (s, a) entry and its
    visit counter, and returns the new value.

    gamma must lie in (0, 1]; `allow_zero` admits gamma = 0 for freeze
    checks in tests only.
    """
    if not (0.0 < gamma <= 1.0 or (allow_zero and gamma == 0.0)):
        raise ConfigError("learning rate must lie in (0, 1]")
    if not 0.0 <= lam < 1.0:
        raise ConfigError("discount must lie in [0, 1)")
    if not q.is_admissible(t.s, t.a):
        raise ConfigError(f"pair (s={t.s}, a={t.a}) is inadmissible")
    row_next = q.values[t.s_next]
    target_max = max(row_next[b] for b in t.available_next)
    new = (1.0 - gamma) * q.values[t.s, t.a] + gamma * (t.c + lam * target_max)
    q.values[t.s, t.a] = new
    q.visits[t.s, t.a] += 1
    return float(new)


def greedy_policy_from_qtable(q: QTable) -> np.ndarray:
    """Per-state greedy action (admissible everywhere by construction)."""
    return np.array([greedy_action(q, s) for s in range(q.n_states)], dtype=int)


def schedule_value(config: LearnerConfig, t: int, visits: int) -> tuple[float, float]:
    """Learning rate and exploration probability in effect at slot t for a
    pair with the given visit count."""
    if t < 0:
        raise ConfigError("slot must be >= 0")
    lr = config.learning_rate
    gamma = lr if isinstance(lr, float) else lr.c0 / (lr.c1 + visits)
    ex = config.explore
    chi = ex if isinstance(ex, float) else max(ex.chi_min, ex.chi0 * ex.decay**t)
    return gamma, chi


def write_qtable_csv(path, q: QTable) -> None:
    """Snapshot export: `state_index,action_index,q_value,visits`, one row
    per admissible pair, UTF-8, LF."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["state_index", "action_index", "q_value", "visits"])
        for s in range(q.n_states):
            for a in q.available[s]:
                writer.writerow([s, a, repr(float(q.values[s, a])), int(q.visits[s, a])])
