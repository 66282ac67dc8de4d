"""Experiment orchestration: the single-run loop, the stationary
convergence study, the regime-switching tracking study, metrics, and CSV
emission.

Randomness: two independent substreams are derived from the master seed by
fixed labels (spawn key 0 = workload arrivals, spawn key 1 = exploration),
so every agent sees the identical arrival sequence for a given seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from . import mdp as mdp_mod
from .agent import (
    LearnerConfig,
    QTable,
    TransitionSample,
    greedy_action,
    greedy_policy_from_qtable,
    init_qtable,
    q_update,
    select_action,
)
from .baselines import OraclePolicy, TimeoutConfig, always_on_action, timeout_action
from .device import DeviceModel, compile_device
from .env import RewardWeights, build_explicit_mdp, workload_mod_states
from .errors import ConfigError, SolverConvergenceError
from .workload import (
    RegimeSchedule,
    Workload,
    generate_arrival_series,
    is_stationary,
)

WORKLOAD_STREAM = 0
EXPLORE_STREAM = 1


@dataclass(frozen=True)
class QlearnSpec:
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    # "qstar" warm-starts the table from the solved Q-factors of the
    # initial stationary configuration.
    warm_start: str | None = None


@dataclass(frozen=True)
class AlwaysOnSpec:
    pass


@dataclass(frozen=True)
class TimeoutSpec:
    config: TimeoutConfig = field(default_factory=TimeoutConfig)


@dataclass(frozen=True)
class OracleSpec:
    policy: np.ndarray | None = None


AgentSpec = Union[QlearnSpec, AlwaysOnSpec, TimeoutSpec, OracleSpec]


@dataclass(frozen=True)
class ExperimentConfig:
    device: DeviceModel
    workload: Workload
    weights: RewardWeights
    agent: AgentSpec
    horizon: int
    seed: int
    ma_window: int = 500
    snapshot_interval: int = 1000
    visit_floor: int = 100
    recovery_rho: float = 0.10
    recovery_abs_floor: float = 0.05
    solver_tol: float = 1e-9
    solver_max_iter: int = 100_000

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.ma_window < 1:
            raise ConfigError("ma_window must be >= 1")
        if self.snapshot_interval < 1:
            raise ConfigError("snapshot_interval must be >= 1")


@dataclass(frozen=True)
class Snapshot:
    slot: int
    ma_reward: float
    energy_reduction_pct: float
    agreement: float = float("nan")
    agreement_vacuous: bool = False
    frozen_avg_reward: float = float("nan")
    oracle_avg_reward: float = float("nan")


@dataclass
class RunResult:
    """Per-slot time series, per-snapshot metrics, and a summary; the unit
    of experiment output."""

    regime: np.ndarray
    state_index: np.ndarray
    action: np.ndarray
    arrivals: np.ndarray
    served: np.ndarray
    dropped: np.ndarray
    queue: np.ndarray
    energy: np.ndarray
    reward: np.ndarray
    snapshots: list[Snapshot]
    summary: dict
    qtable: QTable | None = None

    @property
    def horizon(self) -> int:
        return len(self.reward)


@dataclass(frozen=True)
class SwitchRecord:
    switch_slot: int
    regime_from: int
    regime_to: int
    recovery_slots: int | None
    recovered: bool


@dataclass
class TrackingResult:
    run: RunResult
    switches: list[SwitchRecord]
    regime_oracle_avg: list[float]


@dataclass
class ConvergenceResult:
    run: RunResult
    oracle_policy: np.ndarray
    oracle_avg_reward: float
    solve: mdp_mod.SolveResult


def substreams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Workload and exploration generators for a master seed."""
    make = lambda key: np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))
    )
    return make(WORKLOAD_STREAM), make(EXPLORE_STREAM)


def moving_average(series, window: int) -> np.ndarray:
    """Trailing mean over min(window, t+1) values; length preserved."""
    if window < 1:
        raise ConfigError("window must be >= 1")
    x = np.asarray(series, dtype=float)
    csum = np.concatenate(([0.0], np.cumsum(x)))
    n = len(x)
    start = np.maximum(np.arange(n) + 1 - window, 0)
    return (csum[1:] - csum[start]) / (np.arange(n) + 1 - start)


@dataclass(frozen=True)
class AgreementResult:
    fraction: float
    qualifying_states: int
    vacuous: bool


def policy_agreement(q: QTable, oracle: np.ndarray, visit_floor) -> AgreementResult:
    """Fraction of sufficiently-visited states whose greedy action matches
    the oracle's; 1.0 (flagged vacuous) when no state qualifies."""
    oracle = np.asarray(oracle, dtype=int)
    if oracle.shape != (q.n_states,):
        raise ConfigError("oracle policy does not match the QTable state space")
    matches = 0
    qualifying = 0
    per_state_visits = q.visits.sum(axis=1)
    for s in range(q.n_states):
        if per_state_visits[s] >= visit_floor:
            qualifying += 1
            if greedy_action(q, s) == int(oracle[s]):
                matches += 1
    if qualifying == 0:
        return AgreementResult(1.0, 0, True)
    return AgreementResult(matches / qualifying, qualifying, False)


def energy_reduction_pct(run: RunResult, reference: RunResult) -> float:
    """100 * (E_ref - E_run) / E_ref over whole trajectories."""
    if run.horizon != reference.horizon:
        raise ConfigError("runs must share a horizon")
    e_ref = float(reference.energy.sum())
    if e_ref == 0.0:
        raise ConfigError("reference trajectory consumed zero energy")
    return 100.0 * (e_ref - float(run.energy.sum())) / e_ref


def _lift_policy(policy_base: np.ndarray, n_mod: int) -> np.ndarray:
    """Lift a base-state policy to the modulation-augmented space."""
    if n_mod == 1:
        return policy_base
    return np.repeat(policy_base, n_mod)


def run_simulation(
    cfg: ExperimentConfig,
    snapshot_hook: Callable[[int, QTable], dict] | None = None,
) -> RunResult:
    """Execute `horizon` slots of observe -> select -> step -> update.

    Bit-deterministic for a given (config, seed). `snapshot_hook`, when
    given, is called at each snapshot slot with the live QTable and may
    contribute extra Snapshot fields (agreement, frozen_avg_reward,
    oracle_avg_reward).
    """
    cd = compile_device(cfg.device)
    weights = cfg.weights
    rng_w, rng_e = substreams(cfg.seed)
    horizon = cfg.horizon
    arrivals, regimes, zstates = generate_arrival_series(cfg.workload, horizon, rng_w)

    qt: QTable | None = None
    oracle: OraclePolicy | None = None
    timeout_cfg: TimeoutConfig | None = None
    learner: LearnerConfig | None = None
    if isinstance(cfg.agent, QlearnSpec):
        learner = cfg.agent.learner
        avail = [cd.action_index_sets[s // cd.n_queue] for s in range(cd.n_states)]
        qt = init_qtable(cd.n_states, avail, learner.q_init)
        if cfg.agent.warm_start == "qstar":
            _warm_start_from_qstar(qt, cfg)
        elif cfg.agent.warm_start is not None:
            raise ConfigError(f"unknown warm_start {cfg.agent.warm_start!r}")
    elif isinstance(cfg.agent, TimeoutSpec):
        timeout_cfg = cfg.agent.config
    elif isinstance(cfg.agent, OracleSpec):
        if cfg.agent.policy is None:
            raise ConfigError("oracle agent requires a solved policy")
        oracle = OraclePolicy(cfg.agent.policy, cd, workload_mod_states(cfg.workload))
    elif not isinstance(cfg.agent, AlwaysOnSpec):
        raise ConfigError(f"unknown agent spec {type(cfg.agent).__name__}")

    state_arr = np.zeros(horizon, dtype=np.int32)
    action_arr = np.zeros(horizon, dtype=np.int8)
    served_arr = np.zeros(horizon, dtype=np.int8)
    dropped_arr = np.zeros(horizon, dtype=np.int8)
    queue_arr = np.zeros(horizon, dtype=np.int16)
    energy_arr = np.zeros(horizon)
    reward_arr = np.zeros(horizon)

    # Locals for the hot loop.
    n_queue = cd.n_queue
    cap = cd.queue_capacity
    actions = cd.actions
    serves = cd.serves
    power = cd.power
    action_sets = cd.action_index_sets
    ref_p, w_q, w_d = weights.reference_power, weights.w_queue, weights.w_drop

    d = cd.initial_device_state
    q = 0
    idle_streak = 0
    chi_const = None
    chi_decay = None
    lam = gamma_const = c0 = c1 = 0.0
    if learner is not None:
        lam = learner.discount
        if isinstance(learner.learning_rate, float):
            gamma_const = learner.learning_rate
            c0 = None
        else:
            c0, c1 = learner.learning_rate.c0, learner.learning_rate.c1
        if isinstance(learner.explore, float):
            chi_const = learner.explore
        else:
            chi_decay = learner.explore

    snapshots: list[Snapshot] = []
    interval = cfg.snapshot_interval
    cum_energy = 0.0

    for t in range(horizon):
        s = d * n_queue + q
        if qt is not None:
            if chi_const is not None:
                chi = chi_const
            else:
                chi = max(chi_decay.chi_min, chi_decay.chi0 * chi_decay.decay**t)
            a = select_action(qt, s, chi, rng_e)
        elif oracle is not None:
            a = oracle.action(d, q, int(zstates[t]) if oracle.n_mod > 1 else 0)
        elif timeout_cfg is not None:
            a = timeout_action(cd, d, q, idle_streak, timeout_cfg)
        else:
            a = always_on_action(cd, d)

        act = actions[d][a]
        d2 = act.next_device_state
        arrival = int(arrivals[t])
        q2 = q + arrival
        dropped = 0
        if q2 > cap:
            dropped = q2 - cap
            q2 = cap
        served = 0
        if serves[d2] and q2 > 0:
            served = 1
            q2 -= 1
        energy = power[d2] + act.switch_energy
        reward = (ref_p - energy) - w_q * q2 - w_d * dropped

        if qt is not None:
            gamma = gamma_const if c0 is None else c0 / (c1 + qt.visits[s, a])
            sample = TransitionSample(
                s=s, a=a, c=reward, s_next=d2 * n_queue + q2,
                available_next=action_sets[d2],
            )
            q_update(qt, sample, gamma, lam)
        if timeout_cfg is not None:
            if d2 < cd.n_modes and serves[d2] and q2 == 0:
                idle_streak += 1
            else:
                idle_streak = 0

        state_arr[t] = s
        action_arr[t] = a
        served_arr[t] = served
        dropped_arr[t] = dropped
        queue_arr[t] = q2
        energy_arr[t] = energy
        reward_arr[t] = reward
        cum_energy += energy
        d, q = d2, q2

        if (t + 1) % interval == 0 or t == horizon - 1:
            if not snapshots or snapshots[-1].slot != t:
                lo = max(0, t + 1 - cfg.ma_window)
                ma = float(reward_arr[lo : t + 1].mean())
                ref_energy = ref_p * (t + 1)
                red = 100.0 * (ref_energy - cum_energy) / ref_energy if ref_energy else 0.0
                extra = snapshot_hook(t, qt) if (snapshot_hook and qt is not None) else {}
                snapshots.append(Snapshot(slot=t, ma_reward=ma, energy_reduction_pct=red, **extra))

    summary = {
        "horizon": horizon,
        "seed": cfg.seed,
        "total_reward": float(reward_arr.sum()),
        "avg_reward": float(reward_arr.mean()),
        "total_energy": float(energy_arr.sum()),
        "avg_energy": float(energy_arr.mean()),
        "total_arrivals": int(arrivals.sum()),
        "total_served": int(served_arr.sum()),
        "total_dropped": int(dropped_arr.sum()),
        "final_ma_reward": snapshots[-1].ma_reward if snapshots else float("nan"),
        "final_energy_reduction_pct": snapshots[-1].energy_reduction_pct if snapshots else float("nan"),
    }
    return RunResult(
        regime=regimes, state_index=state_arr, action=action_arr, arrivals=arrivals.astype(np.int8),
        served=served_arr, dropped=dropped_arr, queue=queue_arr, energy=energy_arr,
        reward=reward_arr, snapshots=snapshots, summary=summary, qtable=qt,
    )


def _warm_start_from_qstar(qt: QTable, cfg: ExperimentConfig) -> None:
    """Load the solved Q-factors of the (first) stationary configuration
    into a fresh table; modulation-augmented Q-factors are averaged over
    the modulating states since the learner observes only (mode, queue)."""
    workload = cfg.workload
    if isinstance(workload, RegimeSchedule):
        workload = workload.segments[0].workload
    learner = cfg.agent.learner
    model = build_explicit_mdp(cfg.device, workload, cfg.weights)
    qres = mdp_mod.q_value_iteration(model, learner.discount, tol=cfg.solver_tol,
                                     max_iter=cfg.solver_max_iter)
    n_mod = workload_mod_states(workload)
    for s in range(qt.n_states):
        for a in qt.available[s]:
            vals = [qres.values[s * n_mod + z, a] for z in range(n_mod)]
            qt.values[s, a] = float(np.mean(vals))


def convergence_experiment(cfg: ExperimentConfig) -> ConvergenceResult:
    """Stationary convergence study against the model-based optimum.

    At every snapshot records the moving-average reward, the frozen greedy
    policy's analytic average reward, and the agreement with the oracle on
    sufficiently-visited states; the oracle's average reward is emitted as
    a constant reference.
    """
    if not is_stationary(cfg.workload):
        raise ConfigError("convergence_experiment requires a stationary workload")
    if not isinstance(cfg.agent, QlearnSpec):
        raise ConfigError("convergence_experiment requires a qlearn agent")
    learner = cfg.agent.learner
    model = build_explicit_mdp(cfg.device, cfg.workload, cfg.weights)
    solve = mdp_mod.value_iteration(model, learner.discount, tol=cfg.solver_tol,
                                    max_iter=cfg.solver_max_iter)
    if not solve.converged:
        raise SolverConvergenceError(
            f"value iteration residual {solve.residual!r} above tol after {solve.iterations} sweeps",
            result=solve,
        )
    oracle_avg = mdp_mod.average_reward(model, solve.policy)
    n_mod = workload_mod_states(cfg.workload)
    cd = compile_device(cfg.device)
    # Oracle restricted to base states (for agreement the learner is only
    # defined on (mode, queue)); with n_mod == 1 this is the oracle itself.
    oracle_base = solve.policy if n_mod == 1 else None

    def hook(t: int, qt: QTable) -> dict:
        frozen = greedy_policy_from_qtable(qt)
        try:
            frozen_avg = mdp_mod.average_reward(model, _lift_policy(frozen, n_mod))
        except SolverConvergenceError as exc:
            frozen_avg = float(exc.result) if exc.result is not None else float("nan")
        if oracle_base is not None:
            agreement = policy_agreement(qt, oracle_base, cfg.visit_floor)
        else:
            agreement = _augmented_agreement(qt, solve.policy, n_mod, cfg.visit_floor)
        return {
            "frozen_avg_reward": frozen_avg,
            "agreement": agreement.fraction,
            "agreement_vacuous": agreement.vacuous,
            "oracle_avg_reward": oracle_avg,
        }

    run = run_simulation(cfg, snapshot_hook=hook)
    run.summary["oracle_avg_reward"] = oracle_avg
    final = run.snapshots[-1]
    run.summary["final_frozen_avg_reward"] = final.frozen_avg_reward
    run.summary["final_agreement"] = final.agreement
    if oracle_avg != 0:
        run.summary["final_gap_pct"] = 100.0 * abs(final.frozen_avg_reward - oracle_avg) / abs(oracle_avg)
    return ConvergenceResult(run=run, oracle_policy=solve.policy, oracle_avg_reward=oracle_avg, solve=solve)


def _augmented_agreement(qt: QTable, oracle_aug: np.ndarray, n_mod: int, visit_floor) -> AgreementResult:
    """Agreement when the oracle lives on the modulation-augmented space:
    compare the learner's base-state greedy action at every augmented state
    whose base state is sufficiently visited."""
    matches = qualifying = 0
    per_state_visits = qt.visits.sum(axis=1)
    for s in range(qt.n_states):
        if per_state_visits[s] < visit_floor:
            continue
        a = greedy_action(qt, s)
        for z in range(n_mod):
            qualifying += 1
            if a == int(oracle_aug[s * n_mod + z]):
                matches += 1
    if qualifying == 0:
        return AgreementResult(1.0, 0, True)
    return AgreementResult(matches / qualifying, qualifying, False)


def recovery_band(oracle_avg: float, rho: float, abs_floor: float) -> float:
    """Half-width of the recovery band around a regime's oracle average:
    relative (rho * |avg|) with an absolute floor near zero."""
    if abs(oracle_avg) <= abs_floor:
        return abs_floor
    return rho * abs(oracle_avg)


def compute_recoveries(
    reward: np.ndarray,
    regimes: np.ndarray,
    boundaries: tuple[int, ...],
    regime_oracle_avg: list[float],
    window: int,
    rho: float,
    abs_floor: float,
) -> list[SwitchRecord]:
    """Per switch, the first slot at which the trailing moving-average
    reward re-enters the new regime's band; flagged unrecovered when that
    never happens before the next switch (never silently omitted)."""
    ma = moving_average(reward, window)
    horizon = len(reward)
    records = []
    for k, t_switch in enumerate(boundaries):
        if t_switch >= horizon:
            break
        regime_to = int(regimes[t_switch])
        regime_from = int(regimes[t_switch - 1]) if t_switch > 0 else regime_to
        target = regime_oracle_avg[regime_to]
        band = recovery_band(target, rho, abs_floor)
        end = boundaries[k + 1] if k + 1 < len(boundaries) else horizon
        end = min(end, horizon)
        hit = None
        for t in range(t_switch, end):
            if abs(ma[t] - target) <= band:
                hit = t - t_switch
                break
        records.append(
            SwitchRecord(
                switch_slot=t_switch, regime_from=regime_from, regime_to=regime_to,
                recovery_slots=hit, recovered=hit is not None,
            )
        )
    return records


def tracking_experiment(cfg: ExperimentConfig) -> TrackingResult:
    """Regime-switching tracking study.

    Runs continuously across switches (no reset); per regime the MDP is
    solved exactly and its average reward recorded as the reference, and
    per switch the recovery time of the moving-average reward is reported.
    """
    if not isinstance(cfg.workload, RegimeSchedule):
        raise ConfigError("tracking_experiment requires a RegimeSchedule workload")
    if isinstance(cfg.agent, QlearnSpec) and not isinstance(cfg.agent.learner.learning_rate, float):
        import warnings

        warnings.warn("a constant learning rate is recommended for tracking runs", stacklevel=2)

    discount = (
        cfg.agent.learner.discount if isinstance(cfg.agent, QlearnSpec) else LearnerConfig().discount
    )
    oracle_avgs: list[float] = []
    cache: dict = {}
    for seg in cfg.workload.segments:
        if seg.workload in cache:
            oracle_avgs.append(cache[seg.workload])
            continue
        model = build_explicit_mdp(cfg.device, seg.workload, cfg.weights)
        solve = mdp_mod.value_iteration(model, discount, tol=cfg.solver_tol, max_iter=cfg.solver_max_iter)
        if not solve.converged:
            raise SolverConvergenceError(
                f"value iteration did not converge for a regime segment "
                f"(residual {solve.residual!r})",
                result=solve,
            )
        avg = mdp_mod.average_reward(model, solve.policy)
        cache[seg.workload] = avg
        oracle_avgs.append(avg)

    boundaries = cfg.workload.boundaries

    def hook(t: int, qt: QTable) -> dict:
        regime = cfg.workload.segment_at(t)
        return {"oracle_avg_reward": oracle_avgs[regime]}

    run = run_simulation(cfg, snapshot_hook=hook if isinstance(cfg.agent, QlearnSpec) else None)
    switches = compute_recoveries(
        run.reward, run.regime, boundaries, oracle_avgs,
        cfg.ma_window, cfg.recovery_rho, cfg.recovery_abs_floor,
    )
    run.summary["n_switches"] = len(switches)
    run.summary["all_recovered"] = all(s.recovered for s in switches) if switches else True
    return TrackingResult(run=run, switches=switches, regime_oracle_avg=oracle_avgs)


# ---------------------------------------------------------------------------
# CSV emission. All files UTF-8, LF line endings, deterministic field order.
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    return str(x)


def write_trajectory_csv(path, run: RunResult) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["slot", "regime", "state_index", "action", "arrivals", "served",
             "dropped", "queue", "energy", "reward"]
        )
        for t in range(run.horizon):
            writer.writerow(
                [t, int(run.regime[t]), int(run.state_index[t]), int(run.action[t]),
                 int(run.arrivals[t]), int(run.served[t]), int(run.dropped[t]),
                 int(run.queue[t]), _fmt(run.energy[t]), _fmt(run.reward[t])]
            )


def write_snapshots_csv(path, run: RunResult) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["slot", "ma_reward", "energy_reduction_pct", "agreement",
             "agreement_vacuous", "frozen_avg_reward", "oracle_avg_reward"]
        )
        for s in run.snapshots:
            writer.writerow(
                [s.slot, _fmt(s.ma_reward), _fmt(s.energy_reduction_pct), _fmt(s.agreement),
                 _fmt(s.agreement_vacuous), _fmt(s.frozen_avg_reward), _fmt(s.oracle_avg_reward)]
            )


def write_summary_csv(path, run: RunResult) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["key", "value"])
        for key in sorted(run.summary):
            writer.writerow([key, _fmt(run.summary[key])])


def write_switches_csv(path, switches: list[SwitchRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["switch_slot", "regime_from", "regime_to", "recovery_slots", "recovered"])
        for s in switches:
            writer.writerow(
                [s.switch_slot, s.regime_from, s.regime_to,
                 "" if s.recovery_slots is None else s.recovery_slots,
                 "true" if s.recovered else "false"]
            )
