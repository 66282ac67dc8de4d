"""Power-managed device model: modes, mode transitions, and the observable
system state (mode-or-transit plus bounded queue occupancy).

A `DeviceModel` is declarative; `compile_device` flattens it into dense
lookup tables (device-state enumeration, per-state action lists, power and
service flags) that the simulator, the explicit-MDP bridge, and the
baselines all share.

Device-state enumeration order: settled modes in declaration order, then
for each transition (declaration order) with latency L the transit states
with slots_remaining = 1..L. A full system state packs queue occupancy as
index = device_state * (queue_capacity + 1) + queue.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from .errors import ConfigError


@dataclass(frozen=True)
class PowerModeSpec:
    """A settled power mode; `serves` modes complete one queued request per slot."""

    name: str
    power: float
    serves: bool = False

    def __post_init__(self):
        if self.power < 0:
            raise ConfigError(f"mode {self.name!r}: power must be >= 0")


@dataclass(frozen=True)
class TransitionSpec:
    """A mode switch: `latency` whole slots in transit at `transit_power`
    energy units per slot, plus a one-shot `switch_energy` charged at
    initiation."""

    from_mode: str
    to_mode: str
    latency: int = 0
    transit_power: float = 0.0
    switch_energy: float = 0.0

    def __post_init__(self):
        if self.latency < 0:
            raise ConfigError("transition latency must be >= 0")
        if self.transit_power < 0 or self.switch_energy < 0:
            raise ConfigError("transition energies must be >= 0")


@dataclass(frozen=True)
class DeviceModel:
    modes: tuple[PowerModeSpec, ...]
    transitions: tuple[TransitionSpec, ...]
    initial_mode: str
    queue_capacity: int

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "transitions", tuple(self.transitions))
        names = [m.name for m in self.modes]
        if len(set(names)) != len(names):
            raise ConfigError("mode names must be unique")
        if self.initial_mode not in names:
            raise ConfigError(f"initial_mode {self.initial_mode!r} is not a declared mode")
        if self.queue_capacity < 1:
            raise ConfigError("queue_capacity must be >= 1")
        seen = set()
        for t in self.transitions:
            if t.from_mode not in names or t.to_mode not in names:
                raise ConfigError(f"transition {t.from_mode}->{t.to_mode} references unknown mode")
            if (t.from_mode, t.to_mode) in seen:
                raise ConfigError(f"duplicate transition {t.from_mode}->{t.to_mode}")
            seen.add((t.from_mode, t.to_mode))
        self._check_serving_reachability(names)

    def _check_serving_reachability(self, names):
        serving = {m.name for m in self.modes if m.serves}
        if not serving:
            raise ConfigError("device has no serving mode")
        adjacency = {n: set() for n in names}
        for t in self.transitions:
            adjacency[t.from_mode].add(t.to_mode)
        for start in names:
            frontier, visited = [start], {start}
            while frontier:
                node = frontier.pop()
                if node in serving:
                    break
                for nxt in adjacency[node]:
                    if nxt not in visited:
                        visited.add(nxt)
                        frontier.append(nxt)
            else:
                raise ConfigError(f"no serving mode reachable from {start!r}")


@dataclass(frozen=True)
class SystemState:
    """Observable state: settled mode or in-transit marker, plus queue count.

    Exactly one of `mode` / `transit` is set. `transit` is
    (transition_index, slots_remaining) with slots_remaining >= 1; the
    transition index identifies the target mode and the transit power.
    """

    queue: int
    mode: str | None = None
    transit: tuple[int, int] | None = None

    def __post_init__(self):
        if (self.mode is None) == (self.transit is None):
            raise ConfigError("SystemState must be settled or in transit, not both")
        if self.transit is not None and self.transit[1] < 1:
            raise ConfigError("slots_remaining must be >= 1 while in transit")
        if self.queue < 0:
            raise ConfigError("queue must be >= 0")

    @classmethod
    def settled(cls, mode: str, queue: int) -> "SystemState":
        return cls(queue=queue, mode=mode)

    @classmethod
    def in_transit(cls, transition_index: int, slots_remaining: int, queue: int) -> "SystemState":
        return cls(queue=queue, transit=(transition_index, slots_remaining))

    @property
    def is_settled(self) -> bool:
        return self.mode is not None

    def transit_target(self, device: DeviceModel) -> str:
        if self.transit is None:
            raise ConfigError("not in transit")
        return device.transitions[self.transit[0]].to_mode


@dataclass(frozen=True)
class ActionDef:
    """One admissible action: label, post-action device state, and the
    one-shot energy charged when the action initiates a switch."""

    label: str
    next_device_state: int
    switch_energy: float


class CompiledDevice:
    """Dense tables derived from a DeviceModel; shared by simulator, MDP
    bridge, and baselines. Treat as immutable."""

    def __init__(self, device: DeviceModel):
        self.device = device
        self.queue_capacity = device.queue_capacity
        self.n_queue = device.queue_capacity + 1
        self.mode_index = {m.name: i for i, m in enumerate(device.modes)}
        self.n_modes = len(device.modes)

        # Device-state enumeration: settled modes, then per-transition
        # transit states with remaining = 1..latency.
        self._transit_base = {}
        d = self.n_modes
        for t_idx, t in enumerate(device.transitions):
            if t.latency >= 1:
                self._transit_base[t_idx] = d
                d += t.latency
        self.n_device_states = d
        self.n_states = d * self.n_queue

        self.power = [0.0] * d
        self.serves = [False] * d
        for i, m in enumerate(device.modes):
            self.power[i] = m.power
            self.serves[i] = m.serves
        for t_idx, base in self._transit_base.items():
            t = device.transitions[t_idx]
            for r in range(1, t.latency + 1):
                self.power[base + r - 1] = t.transit_power

        self.actions: list[tuple[ActionDef, ...]] = [()] * d
        for i, m in enumerate(device.modes):
            acts = [ActionDef("stay", i, 0.0)]
            for t_idx, t in enumerate(device.transitions):
                if t.from_mode != m.name:
                    continue
                if t.latency == 0:
                    nxt = self.mode_index[t.to_mode]
                else:
                    nxt = self.transit_index(t_idx, t.latency)
                acts.append(ActionDef(f"switch_to:{t.to_mode}", nxt, t.switch_energy))
            self.actions[i] = tuple(acts)
        for t_idx, base in self._transit_base.items():
            t = device.transitions[t_idx]
            target = self.mode_index[t.to_mode]
            for r in range(1, t.latency + 1):
                nxt = target if r == 1 else self.transit_index(t_idx, r - 1)
                self.actions[base + r - 1] = (ActionDef("continue", nxt, 0.0),)

        self.n_actions = [len(a) for a in self.actions]
        self.max_actions = max(self.n_actions)
        self.action_index_sets = tuple(tuple(range(n)) for n in self.n_actions)
        self.initial_device_state = self.mode_index[device.initial_mode]
        self.wake_action = self._compute_wake_actions()

    def transit_index(self, transition_index: int, slots_remaining: int) -> int:
        t = self.device.transitions[transition_index]
        if not 1 <= slots_remaining <= t.latency:
            raise ConfigError("slots_remaining out of range for transition")
        return self._transit_base[transition_index] + slots_remaining - 1

    def device_state_of(self, state: SystemState) -> int:
        if state.is_settled:
            if state.mode not in self.mode_index:
                raise ConfigError(f"unknown mode {state.mode!r}")
            return self.mode_index[state.mode]
        t_idx, remaining = state.transit
        if not 0 <= t_idx < len(self.device.transitions):
            raise ConfigError("transition index out of range")
        return self.transit_index(t_idx, remaining)

    def system_state(self, device_state: int, queue: int) -> SystemState:
        if not 0 <= queue <= self.queue_capacity:
            raise ConfigError("queue out of range")
        if not 0 <= device_state < self.n_device_states:
            raise ConfigError("device state out of range")
        if device_state < self.n_modes:
            return SystemState.settled(self.device.modes[device_state].name, queue)
        for t_idx, base in self._transit_base.items():
            latency = self.device.transitions[t_idx].latency
            if base <= device_state < base + latency:
                return SystemState.in_transit(t_idx, device_state - base + 1, queue)
        raise ConfigError("device state out of range")  # pragma: no cover

    def state_index(self, state: SystemState) -> int:
        if not 0 <= state.queue <= self.queue_capacity:
            raise ConfigError("queue exceeds capacity")
        return self.device_state_of(state) * self.n_queue + state.queue

    def state_from_index(self, index: int) -> SystemState:
        if not 0 <= index < self.n_states:
            raise ConfigError(f"state index {index} out of range [0, {self.n_states})")
        return self.system_state(index // self.n_queue, index % self.n_queue)

    def _compute_wake_actions(self) -> list[int]:
        """Per device state, the action index that moves toward the nearest
        serving mode (BFS over the mode graph; 0 for serving or transit)."""
        dist = {m.name: (0 if m.serves else None) for m in self.device.modes}
        frontier = [m.name for m in self.device.modes if m.serves]
        incoming = {}
        for t in self.device.transitions:
            incoming.setdefault(t.to_mode, []).append(t.from_mode)
        while frontier:
            nxt_frontier = []
            for node in frontier:
                for prev in incoming.get(node, []):
                    if dist[prev] is None:
                        dist[prev] = dist[node] + 1
                        nxt_frontier.append(prev)
            frontier = nxt_frontier
        wake = [0] * self.n_device_states
        for i, m in enumerate(self.device.modes):
            if m.serves:
                continue
            best_a, best_d = 0, None
            for a, act in enumerate(self.actions[i]):
                if a == 0:
                    continue
                target = act.label.split(":", 1)[1]
                d_t = dist.get(target)
                if d_t is not None and (best_d is None or d_t < best_d):
                    best_a, best_d = a, d_t
            wake[i] = best_a
        return wake


@lru_cache(maxsize=128)
def compile_device(device: DeviceModel) -> CompiledDevice:
    return CompiledDevice(device)


def available_actions(state: SystemState, device: DeviceModel) -> tuple[str, ...]:
    """Ordered admissible action labels for a state.

    `stay`/`continue` first, then switches in declaration order; positions
    in this tuple are the action indices used everywhere else.
    """
    cd = compile_device(device)
    if state.queue > device.queue_capacity:
        raise ConfigError("queue exceeds capacity")
    return tuple(a.label for a in cd.actions[cd.device_state_of(state)])


def state_index(state: SystemState, device: DeviceModel) -> int:
    """Dense index of a valid state; inverse is `state_from_index`."""
    return compile_device(device).state_index(state)


def state_from_index(index: int, device: DeviceModel) -> SystemState:
    return compile_device(device).state_from_index(index)


def n_system_states(device: DeviceModel) -> int:
    return compile_device(device).n_states


def std3_device() -> DeviceModel:
    """Default two-mode device with a non-trivial sleep/wake trade-off.

    ON serves at 2.0 units/slot; OFF idles at 0.1. Sleeping costs a one-shot
    0.5; waking takes 3 slots at 3.0 units/slot, so sleeping only pays off
    for long enough idle periods.
    """
    return DeviceModel(
        modes=(
            PowerModeSpec("ON", power=2.0, serves=True),
            PowerModeSpec("OFF", power=0.1, serves=False),
        ),
        transitions=(
            TransitionSpec("ON", "OFF", latency=0, transit_power=0.0, switch_energy=0.5),
            TransitionSpec("OFF", "ON", latency=3, transit_power=3.0, switch_energy=0.0),
        ),
        initial_mode="ON",
        queue_capacity=8,
    )
