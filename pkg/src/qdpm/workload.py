"""Synthetic request arrival processes.

Three generators: per-slot Bernoulli arrivals, a two-or-more state
Markov-modulated Bernoulli process, and a regime schedule of stationary
segments (the "temporarily stationary" input used for tracking studies).
Arrivals are 0/1 per slot.

RNG consumption per slot is part of the contract so that arrival streams
are reproducible and agent-independent: Bernoulli draws exactly one
uniform; Markov-modulated draws two (arrival first, then the modulating
switch). A schedule consumes whatever its active segment consumes.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ConfigError

_PROB_ATOL = 1e-9


def _check_prob(p: float, what: str) -> None:
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"{what} must lie in [0, 1], got {p!r}")


@dataclass(frozen=True)
class BernoulliArrivals:
    """One arrival per slot with probability p, i.i.d."""

    p: float

    def __post_init__(self):
        _check_prob(self.p, "arrival probability")


@dataclass(frozen=True)
class MarkovModulatedArrivals:
    """Bernoulli arrivals whose rate is driven by a hidden modulating chain.

    Each slot: sample the arrival at the current modulating state's rate,
    then advance the modulating chain by one step of `switch`.
    """

    p_arrive: tuple[float, ...]
    switch: tuple[tuple[float, ...], ...]
    initial_state: int = 0

    def __post_init__(self):
        object.__setattr__(self, "p_arrive", tuple(float(p) for p in self.p_arrive))
        object.__setattr__(self, "switch", tuple(tuple(float(x) for x in row) for row in self.switch))
        k = len(self.p_arrive)
        if k < 1:
            raise ConfigError("p_arrive must be non-empty")
        for p in self.p_arrive:
            _check_prob(p, "modulated arrival probability")
        if len(self.switch) != k:
            raise ConfigError("switch matrix must be square over the modulating states")
        for row in self.switch:
            if len(row) != k:
                raise ConfigError("switch matrix must be square over the modulating states")
            for p in row:
                _check_prob(p, "switch probability")
            if abs(sum(row) - 1.0) > _PROB_ATOL:
                raise ConfigError(f"switch matrix row sums to {sum(row)!r}, not 1")
        if not 0 <= self.initial_state < k:
            raise ConfigError("initial modulating state out of range")

    @property
    def n_states(self) -> int:
        return len(self.p_arrive)


StationaryWorkload = Union[BernoulliArrivals, MarkovModulatedArrivals]


@dataclass(frozen=True)
class RegimeSegment:
    duration: int
    workload: StationaryWorkload

    def __post_init__(self):
        if self.duration < 1:
            raise ConfigError("segment duration must be >= 1")
        if not isinstance(self.workload, (BernoulliArrivals, MarkovModulatedArrivals)):
            raise ConfigError("segments must hold stationary workloads")


@dataclass(frozen=True)
class RegimeSchedule:
    """Piecewise-stationary schedule; beyond its horizon the last segment
    persists (no terminal condition)."""

    segments: tuple[RegimeSegment, ...]

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ConfigError("schedule must have at least one segment")

    @property
    def boundaries(self) -> tuple[int, ...]:
        """Start slot of each segment after the first."""
        starts, acc = [], 0
        for seg in self.segments[:-1]:
            acc += seg.duration
            starts.append(acc)
        return tuple(starts)

    def segment_at(self, slot: int) -> int:
        return bisect_right(self.boundaries, slot)


Workload = Union[BernoulliArrivals, MarkovModulatedArrivals, RegimeSchedule]


def is_stationary(spec: Workload) -> bool:
    return isinstance(spec, (BernoulliArrivals, MarkovModulatedArrivals))


def initial_workload_state(spec: Workload) -> int | None:
    """Generator state carried across slots: the modulating state index for
    Markov-modulated workloads, None otherwise."""
    if isinstance(spec, MarkovModulatedArrivals):
        return spec.initial_state
    if isinstance(spec, RegimeSchedule):
        return initial_workload_state(spec.segments[0].workload)
    return None


def _advance_stationary(spec: StationaryWorkload, state, rng) -> tuple[int, int | None]:
    if isinstance(spec, BernoulliArrivals):
        return int(rng.random() < spec.p), None
    if not isinstance(state, int) or not 0 <= state < spec.n_states:
        raise ConfigError(f"corrupt modulating state {state!r}")
    arrival = int(rng.random() < spec.p_arrive[state])
    u = rng.random()
    acc = 0.0
    nxt = spec.n_states - 1
    for z, p in enumerate(spec.switch[state]):
        acc += p
        if u < acc:
            nxt = z
            break
    return arrival, nxt


def workload_advance(spec: Workload, state, slot: int, rng) -> tuple[int, int | None, int]:
    """Sample one slot: returns (arrivals, next generator state, regime id).

    Must be called once per slot in slot order for schedules, since the
    inner generator state resets at each segment boundary. regime id is 0
    for stationary specs and the active segment index otherwise.
    """
    if slot < 0:
        raise ConfigError("slot must be >= 0")
    if isinstance(spec, RegimeSchedule):
        regime = spec.segment_at(slot)
        inner = spec.segments[regime].workload
        starts = (0,) + spec.boundaries
        if slot == starts[regime]:
            state = initial_workload_state(inner)
        arrival, state = _advance_stationary(inner, state, rng)
        return arrival, state, regime
    arrival, state = _advance_stationary(spec, state, rng)
    return arrival, state, 0


def generate_arrival_series(
    spec: Workload, horizon: int, rng
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pre-sample a whole run's arrivals.

    Returns (arrivals, regime ids, modulating states), each of length
    `horizon`; the modulating state is the one whose rate produced that
    slot's arrival (0 for Bernoulli). Consumes the rng stream exactly as a
    sequence of `workload_advance` calls would.
    """
    if horizon < 0:
        raise ConfigError("horizon must be >= 0")
    arrivals = np.zeros(horizon, dtype=np.int8)
    regimes = np.zeros(horizon, dtype=np.int32)
    zstates = np.zeros(horizon, dtype=np.int32)

    if isinstance(spec, BernoulliArrivals):
        arrivals[:] = rng.random(horizon) < spec.p
        return arrivals, regimes, zstates

    if isinstance(spec, RegimeSchedule) and all(
        isinstance(seg.workload, BernoulliArrivals) for seg in spec.segments
    ):
        u = rng.random(horizon)
        starts = (0,) + spec.boundaries
        for k, seg in enumerate(spec.segments):
            lo = starts[k]
            hi = starts[k + 1] if k + 1 < len(starts) else horizon
            hi = horizon if k == len(spec.segments) - 1 else min(hi, horizon)
            if lo >= horizon:
                break
            arrivals[lo:hi] = u[lo:hi] < seg.workload.p
            regimes[lo:hi] = k
        return arrivals, regimes, zstates

    state = initial_workload_state(spec)
    for t in range(horizon):
        if isinstance(spec, MarkovModulatedArrivals):
            zstates[t] = state
        elif isinstance(spec, RegimeSchedule):
            regime = spec.segment_at(t)
            starts = (0,) + spec.boundaries
            if t == starts[regime]:
                state = initial_workload_state(spec.segments[regime].workload)
            if isinstance(spec.segments[regime].workload, MarkovModulatedArrivals):
                zstates[t] = state if state is not None else 0
        arrivals[t], state, regimes[t] = workload_advance(spec, state, t, rng)
    return arrivals, regimes, zstates
