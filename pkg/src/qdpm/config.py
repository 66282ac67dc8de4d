"""The JSON configuration document.

One document with sections `device`, `workload`, `weights`, `agent`,
`experiment` (and optionally `sweep`) drives every command; CLI flags only
carry paths, seed, and verbosity. Unknown keys are rejected everywhere.

Seed precedence: explicit override (CLI `--seed` / request field) >
`experiment.seed` in the document > the `QDPM_SEED` environment variable >
0.
"""

from __future__ import annotations

import json
import os
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import agent as agent_mod
from . import device as device_mod
from . import workload as workload_mod
from .baselines import TimeoutConfig
from .env import RewardWeights
from .errors import ConfigError
from .harness import (
    AgentSpec,
    AlwaysOnSpec,
    ExperimentConfig,
    OracleSpec,
    QlearnSpec,
    TimeoutSpec,
)

SEED_ENV_VAR = "QDPM_SEED"


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModeCfg(StrictModel):
    name: str
    power: float = Field(ge=0)
    serves: bool = False


class TransitionCfg(StrictModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    from_mode: str = Field(alias="from")
    to_mode: str = Field(alias="to")
    latency: int = Field(default=0, ge=0)
    transit_power: float = Field(default=0.0, ge=0)
    switch_energy: float = Field(default=0.0, ge=0)


class DeviceCfg(StrictModel):
    modes: list[ModeCfg] = Field(min_length=1)
    transitions: list[TransitionCfg] = Field(default_factory=list)
    initial_mode: str
    queue_capacity: int = Field(ge=1)


class BernoulliCfg(StrictModel):
    kind: Literal["bernoulli"]
    p: float = Field(ge=0, le=1)


class MarkovModulatedCfg(StrictModel):
    kind: Literal["markov_modulated"]
    p_arrive: list[float] = Field(min_length=1)
    switch: list[list[float]]
    initial_state: int = 0


StationaryWorkloadCfg = Annotated[
    Union[BernoulliCfg, MarkovModulatedCfg], Field(discriminator="kind")
]


class SegmentCfg(StrictModel):
    duration: int = Field(ge=1)
    workload: StationaryWorkloadCfg


class RegimeScheduleCfg(StrictModel):
    kind: Literal["regime_schedule"]
    segments: list[SegmentCfg] = Field(min_length=1)


WorkloadCfg = Annotated[
    Union[BernoulliCfg, MarkovModulatedCfg, RegimeScheduleCfg],
    Field(discriminator="kind"),
]


class WeightsCfg(StrictModel):
    reference_power: float = Field(default=2.0, ge=0)
    w_queue: float = Field(default=0.2, ge=0)
    w_drop: float = Field(default=5.0, ge=0)


class VisitDecayCfg(StrictModel):
    c0: float = Field(default=1.0, gt=0)
    c1: float = Field(default=1.0, gt=0)


class ExploreDecayCfg(StrictModel):
    chi0: float = Field(default=0.2, ge=0, le=1)
    decay: float = Field(default=0.99997, gt=0, le=1)
    chi_min: float = Field(default=0.01, ge=0, le=1)


class LearnerCfg(StrictModel):
    discount: float = Field(default=0.95, ge=0, lt=1)
    learning_rate: Union[float, VisitDecayCfg] = 0.1
    explore: Union[float, ExploreDecayCfg] = 0.05
    q_init: float = 0.0


class AgentCfg(StrictModel):
    kind: Literal["qlearn", "always_on", "timeout", "oracle"] = "qlearn"
    learner: LearnerCfg = Field(default_factory=LearnerCfg)
    # "qstar" pre-loads the solved Q-factors (qlearn only).
    warm_start: Optional[Literal["qstar"]] = None
    # Timeout baseline; null timeout means never sleep.
    timeout: Optional[int] = Field(default=0, ge=0)
    wake_on_arrival: bool = True
    # Oracle baseline: policy.csv produced by `solve`.
    policy_path: Optional[str] = None


class ExperimentCfg(StrictModel):
    horizon: int = Field(default=100_000, ge=1)
    seed: Optional[int] = None
    ma_window: int = Field(default=500, ge=1)
    snapshot_interval: int = Field(default=1000, ge=1)
    visit_floor: int = Field(default=100, ge=0)
    recovery_rho: float = Field(default=0.10, gt=0)
    recovery_abs_floor: float = Field(default=0.05, ge=0)
    solver_tol: float = Field(default=1e-9, gt=0)
    solver_max_iter: int = Field(default=100_000, ge=1)


class SweepCfg(StrictModel):
    # Dotted config paths -> value lists, e.g. {"workload.p": [0.05, 0.3]}.
    grid: dict[str, list[Union[float, int, str, bool]]]


def _default_device_cfg() -> DeviceCfg:
    return DeviceCfg(
        modes=[
            ModeCfg(name="ON", power=2.0, serves=True),
            ModeCfg(name="OFF", power=0.1, serves=False),
        ],
        transitions=[
            TransitionCfg(from_mode="ON", to_mode="OFF", latency=0, transit_power=0.0, switch_energy=0.5),
            TransitionCfg(from_mode="OFF", to_mode="ON", latency=3, transit_power=3.0, switch_energy=0.0),
        ],
        initial_mode="ON",
        queue_capacity=8,
    )


class ConfigDoc(StrictModel):
    """The full configuration document. Every section has defaults (the
    std3 device, Bernoulli(0.3) arrivals, default weights, a qlearn agent)
    so minimal documents stay small."""

    device: DeviceCfg = Field(default_factory=_default_device_cfg)
    workload: WorkloadCfg = Field(default_factory=lambda: BernoulliCfg(kind="bernoulli", p=0.3))
    weights: WeightsCfg = Field(default_factory=WeightsCfg)
    agent: AgentCfg = Field(default_factory=AgentCfg)
    experiment: ExperimentCfg = Field(default_factory=ExperimentCfg)
    sweep: Optional[SweepCfg] = None


def _format_validation_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "invalid configuration:\n  " + "\n  ".join(lines)


def parse_config(data: dict) -> ConfigDoc:
    """Validate a raw document; the error message lists every violated field."""
    if not isinstance(data, dict):
        raise ConfigError("configuration document must be a JSON object")
    try:
        return ConfigDoc.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_validation_error(exc)) from exc


def load_config(path) -> ConfigDoc:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"configuration file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"configuration file is not valid JSON: {exc}") from exc
    return parse_config(data)


def resolve_seed(doc: ConfigDoc, override: Optional[int] = None) -> int:
    if override is not None:
        return int(override)
    if doc.experiment.seed is not None:
        return int(doc.experiment.seed)
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env!r}") from exc
    return 0


# ---------------------------------------------------------------------------
# Conversion to runtime objects.
# ---------------------------------------------------------------------------


def build_device(cfg: DeviceCfg) -> device_mod.DeviceModel:
    return device_mod.DeviceModel(
        modes=tuple(device_mod.PowerModeSpec(m.name, m.power, m.serves) for m in cfg.modes),
        transitions=tuple(
            device_mod.TransitionSpec(t.from_mode, t.to_mode, t.latency, t.transit_power, t.switch_energy)
            for t in cfg.transitions
        ),
        initial_mode=cfg.initial_mode,
        queue_capacity=cfg.queue_capacity,
    )


def build_workload(cfg) -> workload_mod.Workload:
    if isinstance(cfg, BernoulliCfg):
        return workload_mod.BernoulliArrivals(cfg.p)
    if isinstance(cfg, MarkovModulatedCfg):
        return workload_mod.MarkovModulatedArrivals(
            p_arrive=tuple(cfg.p_arrive),
            switch=tuple(tuple(row) for row in cfg.switch),
            initial_state=cfg.initial_state,
        )
    if isinstance(cfg, RegimeScheduleCfg):
        return workload_mod.RegimeSchedule(
            segments=tuple(
                workload_mod.RegimeSegment(seg.duration, build_workload(seg.workload))
                for seg in cfg.segments
            )
        )
    raise ConfigError(f"unsupported workload config {type(cfg).__name__}")


def build_weights(cfg: WeightsCfg) -> RewardWeights:
    return RewardWeights(cfg.reference_power, cfg.w_queue, cfg.w_drop)


def build_learner(cfg: LearnerCfg) -> agent_mod.LearnerConfig:
    lr = cfg.learning_rate
    if isinstance(lr, VisitDecayCfg):
        lr = agent_mod.VisitDecayRate(lr.c0, lr.c1)
    ex = cfg.explore
    if isinstance(ex, ExploreDecayCfg):
        ex = agent_mod.ExploreDecay(ex.chi0, ex.decay, ex.chi_min)
    return agent_mod.LearnerConfig(
        discount=cfg.discount, learning_rate=lr, explore=ex, q_init=cfg.q_init
    )


def build_agent_spec(cfg: AgentCfg, oracle_policy=None) -> AgentSpec:
    if cfg.kind == "qlearn":
        return QlearnSpec(learner=build_learner(cfg.learner), warm_start=cfg.warm_start)
    if cfg.kind == "always_on":
        return AlwaysOnSpec()
    if cfg.kind == "timeout":
        return TimeoutSpec(TimeoutConfig(cfg.timeout, cfg.wake_on_arrival))
    if cfg.kind == "oracle":
        return OracleSpec(policy=oracle_policy)
    raise ConfigError(f"unknown agent kind {cfg.kind!r}")


def build_experiment(doc: ConfigDoc, seed: int, oracle_policy=None) -> ExperimentConfig:
    exp = doc.experiment
    return ExperimentConfig(
        device=build_device(doc.device),
        workload=build_workload(doc.workload),
        weights=build_weights(doc.weights),
        agent=build_agent_spec(doc.agent, oracle_policy=oracle_policy),
        horizon=exp.horizon,
        seed=seed,
        ma_window=exp.ma_window,
        snapshot_interval=exp.snapshot_interval,
        visit_floor=exp.visit_floor,
        recovery_rho=exp.recovery_rho,
        recovery_abs_floor=exp.recovery_abs_floor,
        solver_tol=exp.solver_tol,
        solver_max_iter=exp.solver_max_iter,
    )


def resolved_config_dict(doc: ConfigDoc) -> dict:
    """Fully-resolved document (defaults applied), JSON-serialisable, with
    deterministic key content for manifests."""
    return doc.model_dump(mode="json", by_alias=True)
