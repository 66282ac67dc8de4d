"""Reference power managers: always-on, fixed idle timeout, and a table
lookup into an optimal policy from the model-based solve.

All baselines are deterministic functions of the observable state (plus,
for the timeout policy, an idle-streak counter maintained by the run loop,
kept outside SystemState so the MDP state space is untouched).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .device import CompiledDevice
from .errors import ConfigError


@dataclass(frozen=True)
class TimeoutConfig:
    """Sleep after `timeout` consecutive idle slots; `timeout=None` means
    never sleep (degenerates to always-on)."""

    timeout: int | None = 0
    wake_on_arrival: bool = True

    def __post_init__(self):
        if self.timeout is not None and self.timeout < 0:
            raise ConfigError("timeout must be >= 0")


def always_on_action(cd: CompiledDevice, device_state: int) -> int:
    """Stay in the serving mode; otherwise head toward one (recovers to the
    serving mode if started elsewhere). In transit the only action is 0."""
    if device_state >= cd.n_modes:
        return 0
    if cd.serves[device_state]:
        return 0
    return cd.wake_action[device_state]


def _sleep_action(cd: CompiledDevice, device_state: int) -> int:
    """First declared switch out of a serving mode into a non-serving mode."""
    for a, act in enumerate(cd.actions[device_state]):
        if a == 0:
            continue
        target = act.label.split(":", 1)[1]
        if not cd.serves[cd.mode_index[target]]:
            return a
    return 0


def timeout_action(
    cd: CompiledDevice, device_state: int, queue: int, idle_streak: int, cfg: TimeoutConfig
) -> int:
    """Classic fixed-timeout policy.

    Serving mode, empty queue, idle for at least `timeout` slots -> sleep;
    non-serving settled mode with pending work -> wake (if enabled);
    otherwise stay / continue.
    """
    if device_state >= cd.n_modes:
        return 0
    if cd.serves[device_state]:
        if queue == 0 and cfg.timeout is not None and idle_streak >= cfg.timeout:
            return _sleep_action(cd, device_state)
        return 0
    if queue > 0 and cfg.wake_on_arrival:
        return cd.wake_action[device_state]
    if cfg.timeout is None:
        # Never-sleep mode matches always-on pointwise, so it also wakes
        # from a non-serving start even before any work arrives.
        return cd.wake_action[device_state]
    return 0


class OraclePolicy:
    """The optimal policy from the model-based solve, as a lookup table over
    the (possibly modulation-augmented) MDP state space."""

    def __init__(self, policy: np.ndarray, cd: CompiledDevice, n_mod: int = 1):
        policy = np.asarray(policy, dtype=int)
        expected = cd.n_states * n_mod
        if policy.shape != (expected,):
            raise ConfigError(
                f"policy covers {policy.shape[0] if policy.ndim == 1 else policy.shape} states, "
                f"environment has {expected}"
            )
        for s, a in enumerate(policy):
            d = (s // n_mod) // cd.n_queue
            if not 0 <= a < cd.n_actions[d]:
                raise ConfigError(f"oracle policy action {a} inadmissible at state {s}")
        self.policy = policy
        self.n_mod = n_mod
        self._n_queue = cd.n_queue

    def action(self, device_state: int, queue: int, z: int = 0) -> int:
        return int(self.policy[(device_state * self._n_queue + queue) * self.n_mod + z])
