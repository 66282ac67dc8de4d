"""The power-managed system: slot dynamics, energy accounting, the reward
function, and the exact bridge that compiles a stationary configuration
into an ExplicitMdp.

Fixed slot ordering (normative, and mirrored exactly by the MDP bridge):

  1. action effect: initiate a switch (one-shot switch_energy charged,
     latency-0 switches settle immediately, latency-L switches enter
     transit with L slots remaining), decrement a transit countdown, or
     stay;
  2. sample arrivals; enqueue, dropping overflow;
  3. serve one request if the post-action occupancy is a serving mode and
     the queue is non-empty;
  4. charge the per-slot power of the post-action occupancy;
  5. compute the reward.

Reward per slot: (reference_power - energy) - w_queue * queue_after
- w_drop * dropped. The first term is positive exactly when the slot beats
leaving the device always on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .device import CompiledDevice, DeviceModel, SystemState, compile_device
from .errors import ConfigError
from .mdp import ExplicitMdp
from .workload import (
    BernoulliArrivals,
    MarkovModulatedArrivals,
    RegimeSchedule,
    Workload,
    workload_advance,
)


@dataclass(frozen=True)
class RewardWeights:
    """reference_power is the always-on yardstick; w_queue and w_drop
    penalise backlog and overflow so always-sleep is not optimal."""

    reference_power: float = 2.0
    w_queue: float = 0.2
    w_drop: float = 5.0

    def __post_init__(self):
        if self.reference_power < 0 or self.w_queue < 0 or self.w_drop < 0:
            raise ConfigError("reward weights must be >= 0")


@dataclass(frozen=True)
class StepOutcome:
    energy: float
    arrivals: int
    served: int
    dropped: int
    queue_after: int
    reward: float


def slot_reward(energy: float, queue_after: int, dropped: int, weights: RewardWeights) -> float:
    return (weights.reference_power - energy) - weights.w_queue * queue_after - weights.w_drop * dropped


def step_compiled(
    cd: CompiledDevice, device_state: int, queue: int, action: int, arrival: int
) -> tuple[int, int, int, int, float]:
    """Index-level slot transition (the hot path).

    Returns (next device state, queue_after, served, dropped, energy).
    """
    acts = cd.actions[device_state]
    if not 0 <= action < len(acts):
        raise ConfigError(f"action {action} inadmissible in device state {device_state}")
    act = acts[action]
    d2 = act.next_device_state
    q = queue + arrival
    dropped = 0
    if q > cd.queue_capacity:
        dropped = q - cd.queue_capacity
        q = cd.queue_capacity
    served = 0
    if cd.serves[d2] and q > 0:
        served = 1
        q -= 1
    energy = cd.power[d2] + act.switch_energy
    return d2, q, served, dropped, energy


def env_step(
    state: SystemState,
    action: int,
    workload: Workload,
    workload_state,
    device: DeviceModel,
    weights: RewardWeights,
    rng,
    slot: int = 0,
) -> tuple[SystemState, StepOutcome, int | None]:
    """One agent-environment interaction slot.

    Deterministic given (state, action, workload_state, rng position);
    returns the successor state, the slot's accounting record, and the
    advanced workload state.
    """
    cd = compile_device(device)
    d = cd.device_state_of(state)
    if state.queue > cd.queue_capacity:
        raise ConfigError("queue exceeds capacity")
    arrival, wstate, _regime = workload_advance(workload, workload_state, slot, rng)
    d2, q2, served, dropped, energy = step_compiled(cd, d, state.queue, action, arrival)
    reward = slot_reward(energy, q2, dropped, weights)
    outcome = StepOutcome(
        energy=energy, arrivals=arrival, served=served, dropped=dropped,
        queue_after=q2, reward=reward,
    )
    return cd.system_state(d2, q2), outcome, wstate


def mdp_state_index(cd: CompiledDevice, n_mod: int, device_state: int, queue: int, z: int = 0) -> int:
    """Index into the (possibly modulation-augmented) explicit MDP."""
    return (device_state * cd.n_queue + queue) * n_mod + z


def workload_mod_states(workload: Workload) -> int:
    """Number of modulating states appended to the MDP state (1 = none)."""
    if isinstance(workload, MarkovModulatedArrivals):
        return workload.n_states
    return 1


def build_explicit_mdp(
    device: DeviceModel, workload: Workload, weights: RewardWeights
) -> ExplicitMdp:
    """Closed-form MDP for a stationary workload under the slot ordering.

    For Markov-modulated workloads the modulating state is appended to the
    MDP state (fully-observable construction), so the state index is
    (device_state * (capacity+1) + queue) * n_mod + z.

    The per-outcome arithmetic below deliberately re-derives the slot
    ordering instead of calling `step_compiled`, so the bridge and the
    simulator stay independent cross-checks of one another.
    """
    if isinstance(workload, RegimeSchedule):
        raise ConfigError("build_explicit_mdp requires a stationary workload")
    cd = compile_device(device)
    if isinstance(workload, BernoulliArrivals):
        p_by_z = (workload.p,)
        switch = ((1.0,),)
    elif isinstance(workload, MarkovModulatedArrivals):
        p_by_z = workload.p_arrive
        switch = workload.switch
    else:
        raise ConfigError(f"unsupported workload type {type(workload).__name__}")

    n_mod = len(p_by_z)
    cap = cd.queue_capacity
    n_states = cd.n_device_states * cd.n_queue * n_mod
    n_actions = cd.max_actions
    P = np.zeros((n_states, n_actions, n_states))
    R = np.zeros((n_states, n_actions))
    available: list[tuple[int, ...]] = []

    for d in range(cd.n_device_states):
        acts = cd.actions[d]
        for q in range(cd.n_queue):
            for z in range(n_mod):
                s = mdp_state_index(cd, n_mod, d, q, z)
                available.append(tuple(range(len(acts))))
                for a, act in enumerate(acts):
                    d2 = act.next_device_state
                    p_arr = p_by_z[z]
                    for arrival, p_outcome in ((0, 1.0 - p_arr), (1, p_arr)):
                        if p_outcome == 0.0:
                            continue
                        q1 = q + arrival
                        dropped = max(0, q1 - cap)
                        q1 = min(q1, cap)
                        served = 1 if (cd.serves[d2] and q1 > 0) else 0
                        q2 = q1 - served
                        energy = cd.power[d2] + act.switch_energy
                        R[s, a] += p_outcome * slot_reward(energy, q2, dropped, weights)
                        for z2, p_switch in enumerate(switch[z]):
                            if p_switch:
                                s2 = mdp_state_index(cd, n_mod, d2, q2, z2)
                                P[s, a, s2] += p_outcome * p_switch
    return ExplicitMdp(transition=P, expected_reward=R, available=tuple(available))
