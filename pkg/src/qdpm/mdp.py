"""Exact model-based machinery for finite discounted MDPs.

Dense enumerated MDPs, value iteration, Q-factor iteration, policy
evaluation, and long-run average reward under a fixed policy. Everything
here is a pure function of its inputs; results are plain numpy arrays
wrapped in small result records.

Conventions used throughout:
  * value iteration starts from the zero function,
  * every argmax breaks ties toward the lowest action index,
  * convergence means sup-norm change between sweeps <= tol.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError, SolverConvergenceError

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 100_000

# Row-stochasticity is enforced to this absolute tolerance.
ROW_SUM_ATOL = 1e-9


@dataclass(frozen=True)
class ExplicitMdp:
    """Enumerated MDP with dense transition and expected-reward tables.

    transition[s, a, s'] is P(s'|s, a); rows for admissible (s, a) sum to 1.
    expected_reward[s, a] is the expected immediate payoff c(s, a) in
    energy-reduction units per slot. Entries for inadmissible actions are
    never read.
    """

    transition: np.ndarray
    expected_reward: np.ndarray
    available: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        R = np.asarray(self.expected_reward, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ConfigError(f"transition must be (S, A, S), got {P.shape}")
        S, A, _ = P.shape
        if R.shape != (S, A):
            raise ConfigError(f"expected_reward must be {(S, A)}, got {R.shape}")
        if len(self.available) != S:
            raise ConfigError("available must list one action set per state")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "expected_reward", R)
        if np.any(P < -1e-12) or np.any(P > 1 + 1e-12):
            raise ConfigError("transition probabilities must lie in [0, 1]")
        for s, acts in enumerate(self.available):
            if not acts:
                raise ConfigError(f"state {s} has an empty action set")
            for a in acts:
                if not 0 <= a < A:
                    raise ConfigError(f"state {s}: action index {a} out of range")
                row_sum = P[s, a].sum()
                if abs(row_sum - 1.0) > ROW_SUM_ATOL:
                    raise ConfigError(
                        f"transition row (s={s}, a={a}) sums to {row_sum!r}, not 1"
                    )
                if not np.isfinite(R[s, a]):
                    raise ConfigError(f"expected_reward[{s}, {a}] is not finite")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @cached_property
    def mask(self) -> np.ndarray:
        """Boolean (S, A) admissibility mask."""
        m = np.zeros((self.n_states, self.n_actions), dtype=bool)
        for s, acts in enumerate(self.available):
            m[s, list(acts)] = True
        m.setflags(write=False)
        return m


@dataclass(frozen=True)
class SolveResult:
    """Outcome of value iteration: values, greedy policy, and a certificate."""

    values: np.ndarray
    policy: np.ndarray
    residual: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class QSolveResult:
    """Outcome of Q-factor iteration; inadmissible entries hold -inf."""

    values: np.ndarray
    residual: float
    iterations: int
    converged: bool


def _check_beta(beta: float) -> None:
    if not 0.0 <= beta < 1.0:
        raise ConfigError(f"discount must lie in [0, 1), got {beta!r}")


def _action_values(mdp: ExplicitMdp, j: np.ndarray, beta: float) -> np.ndarray:
    """c(s,a) + beta * E[J(s')], with inadmissible entries forced to -inf."""
    q = mdp.expected_reward + beta * (mdp.transition @ j)
    return np.where(mdp.mask, q, -np.inf)


def bellman_backup(mdp: ExplicitMdp, j: np.ndarray, beta: float) -> np.ndarray:
    """One sweep of the Bellman optimality operator.

    Returns J' with J'(s) = max_a [c(s,a) + beta * sum_s' P(s'|s,a) J(s')].
    """
    _check_beta(beta)
    j = np.asarray(j, dtype=float)
    if j.shape != (mdp.n_states,):
        raise ConfigError(f"value function must have shape ({mdp.n_states},)")
    return _action_values(mdp, j, beta).max(axis=1)


def greedy_policy(mdp: ExplicitMdp, j: np.ndarray, beta: float) -> np.ndarray:
    """Greedy policy w.r.t. J; ties go to the lowest action index."""
    _check_beta(beta)
    return _action_values(mdp, np.asarray(j, dtype=float), beta).argmax(axis=1)


def value_iteration(
    mdp: ExplicitMdp,
    beta: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> SolveResult:
    """Iterate bellman_backup from the zero function until the sup-norm
    change drops to tol (or the iteration budget runs out).

    Non-convergence is signalled via `converged=False` without discarding
    the partial result.
    """
    _check_beta(beta)
    if tol <= 0:
        raise ConfigError("tol must be positive")
    j = np.zeros(mdp.n_states)
    residual = np.inf
    iters = 0
    while iters < max_iter:
        j_next = bellman_backup(mdp, j, beta)
        residual = float(np.max(np.abs(j_next - j)))
        j = j_next
        iters += 1
        if residual <= tol:
            break
    return SolveResult(
        values=j,
        policy=greedy_policy(mdp, j, beta),
        residual=residual,
        iterations=iters,
        converged=residual <= tol,
    )


def q_value_iteration(
    mdp: ExplicitMdp,
    beta: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> QSolveResult:
    """Fixed-point iteration on Q-factors.

    Returns Q with Q(s,a) = c(s,a) + beta * E[max_b Q(s',b)] to within tol
    in sup norm over admissible entries. Inadmissible entries are -inf.
    """
    _check_beta(beta)
    if tol <= 0:
        raise ConfigError("tol must be positive")
    mask = mdp.mask
    q = np.where(mask, 0.0, -np.inf)
    residual = np.inf
    iters = 0
    while iters < max_iter:
        j = q.max(axis=1)
        q_next = np.where(mask, mdp.expected_reward + beta * (mdp.transition @ j), -np.inf)
        residual = float(np.max(np.abs(q_next[mask] - q[mask])))
        q = q_next
        iters += 1
        if residual <= tol:
            break
    return QSolveResult(values=q, residual=residual, iterations=iters, converged=residual <= tol)


def _check_policy(mdp: ExplicitMdp, policy: np.ndarray) -> np.ndarray:
    pi = np.asarray(policy, dtype=int)
    if pi.shape != (mdp.n_states,):
        raise ConfigError(f"policy must have shape ({mdp.n_states},)")
    for s, a in enumerate(pi):
        if a not in mdp.available[s]:
            raise ConfigError(f"policy action {a} inadmissible in state {s}")
    return pi


def policy_evaluation(
    mdp: ExplicitMdp,
    policy: np.ndarray,
    beta: float,
    tol: float = DEFAULT_TOL,
) -> np.ndarray:
    """Discounted value of a fixed policy.

    Solved directly as the linear system (I - beta * P_pi) J = c_pi, which
    is exact up to floating point and therefore well inside any positive tol.
    """
    _check_beta(beta)
    if tol <= 0:
        raise ConfigError("tol must be positive")
    pi = _check_policy(mdp, policy)
    idx = np.arange(mdp.n_states)
    p_pi = mdp.transition[idx, pi]
    c_pi = mdp.expected_reward[idx, pi]
    return np.linalg.solve(np.eye(mdp.n_states) - beta * p_pi, c_pi)


def average_reward(
    mdp: ExplicitMdp,
    policy: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = DEFAULT_MAX_ITER,
) -> float:
    """Long-run per-slot reward of a fixed policy.

    Power iteration on the occupancy distribution, started from uniform and
    damped through (I + P)/2 so that periodic chains (deterministic
    alternation is possible in this domain) still converge.
    """
    if tol <= 0:
        raise ConfigError("tol must be positive")
    pi = _check_policy(mdp, policy)
    idx = np.arange(mdp.n_states)
    p_pi = mdp.transition[idx, pi]
    c_pi = mdp.expected_reward[idx, pi]
    p_damped = 0.5 * (np.eye(mdp.n_states) + p_pi)
    mu = np.full(mdp.n_states, 1.0 / mdp.n_states)
    for _ in range(max_iter):
        mu_next = mu @ p_damped
        delta = float(np.abs(mu_next - mu).sum())
        mu = mu_next
        if delta <= tol:
            return float(mu @ c_pi)
    raise SolverConvergenceError(
        f"occupancy power iteration did not reach tol={tol} in {max_iter} iterations",
        result=float(mu @ c_pi),
    )


def write_state_csv(path, policy: np.ndarray, values: np.ndarray) -> None:
    """Export per-state (action, value) rows.

    Header `state_index,action_index,value`, one row per state, UTF-8, LF.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["state_index", "action_index", "value"])
        for s, (a, v) in enumerate(zip(policy, values)):
            writer.writerow([s, int(a), repr(float(v))])
