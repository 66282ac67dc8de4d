"""Command layer shared by the HTTP service and (through it) the CLI.

Each command takes a validated ConfigDoc, writes its artifacts into an
output directory, and returns the manifest dict. Every output directory
gets a `manifest.json` capturing the fully-resolved config and seed, which
is sufficient to reproduce the run byte-identically.
"""

from __future__ import annotations

import csv
import itertools
import json
import os
from typing import Optional

import numpy as np

from . import __version__
from . import mdp as mdp_mod
from .agent import write_qtable_csv
from .config import (
    ConfigDoc,
    build_device,
    build_experiment,
    build_weights,
    build_workload,
    parse_config,
    resolve_seed,
    resolved_config_dict,
)
from .device import compile_device
from .env import build_explicit_mdp, workload_mod_states
from .errors import ConfigError, MissingArtifactError, SolverConvergenceError
from .harness import (
    EXPLORE_STREAM,
    WORKLOAD_STREAM,
    convergence_experiment,
    run_simulation,
    tracking_experiment,
    write_snapshots_csv,
    write_summary_csv,
    write_switches_csv,
    write_trajectory_csv,
)
from .workload import is_stationary


def _base_manifest(command: str, doc: ConfigDoc, seed: int) -> dict:
    return {
        "command": command,
        "version": __version__,
        "seed": seed,
        "rng_substreams": {"workload": WORKLOAD_STREAM, "exploration": EXPLORE_STREAM},
        "config": resolved_config_dict(doc),
    }


def _table_info(doc: ConfigDoc) -> dict:
    cd = compile_device(build_device(doc.device))
    return {
        "n_states": cd.n_states,
        "max_actions": cd.max_actions,
        "admissible_entries": sum(cd.n_actions[s // cd.n_queue] for s in range(cd.n_states)),
    }


def _write_manifest(out_dir: str, manifest: dict) -> None:
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _ensure_out_dir(out_dir: str) -> None:
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out_dir!r}: {exc}") from exc


def solve_command(doc: ConfigDoc, out_dir: str, seed: Optional[int] = None) -> dict:
    """Exact model-based solve: writes policy.csv, values.csv and a manifest
    with the convergence certificate (tol, iterations, residual)."""
    workload = build_workload(doc.workload)
    if not is_stationary(workload):
        raise ConfigError("solve requires a stationary workload (no regime_schedule)")
    _ensure_out_dir(out_dir)
    resolved_seed = resolve_seed(doc, seed)
    device = build_device(doc.device)
    weights = build_weights(doc.weights)
    exp = doc.experiment
    model = build_explicit_mdp(device, workload, weights)
    beta = doc.agent.learner.discount
    result = mdp_mod.value_iteration(model, beta, tol=exp.solver_tol, max_iter=exp.solver_max_iter)

    mdp_mod.write_state_csv(os.path.join(out_dir, "policy.csv"), result.policy, result.values)
    mdp_mod.write_state_csv(os.path.join(out_dir, "values.csv"), result.policy, result.values)
    manifest = _base_manifest("solve", doc, resolved_seed)
    manifest["solver"] = {
        "discount": beta,
        "tol": exp.solver_tol,
        "max_iter": exp.solver_max_iter,
        "iterations": result.iterations,
        "residual": result.residual,
        "converged": bool(result.converged),
    }
    manifest["mdp"] = {
        "n_states": model.n_states,
        "n_actions": model.n_actions,
        "modulating_states": workload_mod_states(workload),
    }
    manifest["qtable"] = _table_info(doc)
    _write_manifest(out_dir, manifest)
    if not result.converged:
        raise SolverConvergenceError(
            f"value iteration residual {result.residual!r} above tol "
            f"{exp.solver_tol!r} after {result.iterations} sweeps",
            result=manifest,
        )
    return manifest


def _load_policy_csv(path: str, expected_states: int) -> np.ndarray:
    if not path:
        raise MissingArtifactError(
            "oracle agent needs agent.policy_path pointing at a policy.csv; run `solve` first"
        )
    if not os.path.exists(path):
        raise MissingArtifactError(
            f"policy file {path!r} not found; run `solve` to produce it"
        )
    policy = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "state_index" not in reader.fieldnames:
            raise ConfigError(f"{path!r} is not a policy CSV (missing header)")
        for row in reader:
            policy[int(row["state_index"])] = int(row["action_index"])
    if sorted(policy) != list(range(expected_states)):
        raise ConfigError(
            f"policy file {path!r} covers {len(policy)} states, environment has {expected_states}"
        )
    return np.array([policy[s] for s in range(expected_states)], dtype=int)


def _experiment_config(doc: ConfigDoc, seed: int):
    oracle_policy = None
    if doc.agent.kind == "oracle":
        device = build_device(doc.device)
        workload = build_workload(doc.workload)
        n_mod = workload_mod_states(workload)
        expected = compile_device(device).n_states * n_mod
        oracle_policy = _load_policy_csv(doc.agent.policy_path, expected)
    return build_experiment(doc, seed, oracle_policy=oracle_policy)


def run_command(doc: ConfigDoc, out_dir: str, seed: Optional[int] = None) -> dict:
    """Single simulation run: trajectory.csv, snapshots.csv, summary.csv."""
    resolved_seed = resolve_seed(doc, seed)
    cfg = _experiment_config(doc, resolved_seed)
    _ensure_out_dir(out_dir)
    run = run_simulation(cfg)
    write_trajectory_csv(os.path.join(out_dir, "trajectory.csv"), run)
    write_snapshots_csv(os.path.join(out_dir, "snapshots.csv"), run)
    write_summary_csv(os.path.join(out_dir, "summary.csv"), run)
    if run.qtable is not None:
        write_qtable_csv(os.path.join(out_dir, "qtable.csv"), run.qtable)
    manifest = _base_manifest("run", doc, resolved_seed)
    manifest["qtable"] = _table_info(doc)
    manifest["summary"] = run.summary
    _write_manifest(out_dir, manifest)
    return manifest


def compare_command(doc: ConfigDoc, out_dir: str, seed: Optional[int] = None) -> dict:
    """Stationary convergence study: solve, then learn, with per-snapshot
    oracle reference, frozen-policy average reward, and policy agreement."""
    resolved_seed = resolve_seed(doc, seed)
    if doc.agent.kind != "qlearn":
        raise ConfigError("compare requires agent.kind == 'qlearn'")
    cfg = build_experiment(doc, resolved_seed)
    _ensure_out_dir(out_dir)
    result = convergence_experiment(cfg)
    run = result.run
    write_trajectory_csv(os.path.join(out_dir, "trajectory.csv"), run)
    write_snapshots_csv(os.path.join(out_dir, "snapshots.csv"), run)
    write_summary_csv(os.path.join(out_dir, "summary.csv"), run)
    write_qtable_csv(os.path.join(out_dir, "qtable.csv"), run.qtable)
    mdp_mod.write_state_csv(
        os.path.join(out_dir, "policy.csv"), result.oracle_policy, result.solve.values
    )
    manifest = _base_manifest("compare", doc, resolved_seed)
    manifest["qtable"] = _table_info(doc)
    manifest["solver"] = {
        "iterations": result.solve.iterations,
        "residual": result.solve.residual,
        "converged": bool(result.solve.converged),
    }
    manifest["oracle_avg_reward"] = result.oracle_avg_reward
    manifest["summary"] = run.summary
    _write_manifest(out_dir, manifest)
    return manifest


def track_command(doc: ConfigDoc, out_dir: str, seed: Optional[int] = None) -> dict:
    """Regime-switching tracking study with per-switch recovery times."""
    resolved_seed = resolve_seed(doc, seed)
    if doc.workload.kind != "regime_schedule":
        raise ConfigError("track requires workload.kind == 'regime_schedule'")
    cfg = _experiment_config(doc, resolved_seed)
    _ensure_out_dir(out_dir)
    result = tracking_experiment(cfg)
    run = result.run
    write_trajectory_csv(os.path.join(out_dir, "trajectory.csv"), run)
    write_snapshots_csv(os.path.join(out_dir, "snapshots.csv"), run)
    write_summary_csv(os.path.join(out_dir, "summary.csv"), run)
    write_switches_csv(os.path.join(out_dir, "switches.csv"), result.switches)
    if run.qtable is not None:
        write_qtable_csv(os.path.join(out_dir, "qtable.csv"), run.qtable)
    manifest = _base_manifest("track", doc, resolved_seed)
    manifest["qtable"] = _table_info(doc)
    manifest["regime_oracle_avg_reward"] = result.regime_oracle_avg
    manifest["recovery"] = {
        "rho": cfg.recovery_rho,
        "abs_floor": cfg.recovery_abs_floor,
        "ma_window": cfg.ma_window,
    }
    manifest["switches"] = [
        {
            "switch_slot": s.switch_slot,
            "regime_from": s.regime_from,
            "regime_to": s.regime_to,
            "recovery_slots": s.recovery_slots,
            "recovered": s.recovered,
        }
        for s in result.switches
    ]
    manifest["summary"] = run.summary
    _write_manifest(out_dir, manifest)
    return manifest


def _apply_override(data: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = data
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node:
            raise ConfigError(f"sweep grid path {dotted!r} does not exist in the config")
        node = node[p]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError(f"sweep grid path {dotted!r} does not exist in the config")
    node[parts[-1]] = value


def point_seed(master_seed: int, point_index: int) -> int:
    """Deterministic per-point seed derived from (master seed, point index)."""
    words = np.random.SeedSequence(entropy=master_seed, spawn_key=(point_index,)).generate_state(2)
    return int(words[0]) | (int(words[1]) << 32)


def sweep_command(doc: ConfigDoc, out_dir: str, seed: Optional[int] = None) -> dict:
    """Grid sweep: one `run` per grid point in its own directory, plus an
    index.csv tying parameters to results."""
    if doc.sweep is None or not doc.sweep.grid:
        raise ConfigError("sweep requires a non-empty `sweep.grid` section")
    for key, vals in doc.sweep.grid.items():
        if not vals:
            raise ConfigError(f"sweep grid entry {key!r} has no values")
    master_seed = resolve_seed(doc, seed)
    _ensure_out_dir(out_dir)

    keys = list(doc.sweep.grid.keys())
    base = resolved_config_dict(doc)
    base.pop("sweep", None)
    points = list(itertools.product(*(doc.sweep.grid[k] for k in keys)))
    index_rows = []
    for i, values in enumerate(points):
        point_cfg = json.loads(json.dumps(base))
        for key, value in zip(keys, values):
            _apply_override(point_cfg, key, value)
        point_doc = parse_config(point_cfg)
        p_seed = point_seed(master_seed, i)
        point_dir = os.path.join(out_dir, f"point_{i:04d}")
        manifest = run_command(point_doc, point_dir, seed=p_seed)
        index_rows.append(
            [i, *values, p_seed, f"point_{i:04d}",
             repr(manifest["summary"]["avg_reward"]), repr(manifest["summary"]["total_energy"])]
        )

    index_path = os.path.join(out_dir, "index.csv")
    with open(index_path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["point", *keys, "seed", "out_dir", "avg_reward", "total_energy"])
        writer.writerows(index_rows)

    manifest = _base_manifest("sweep", doc, master_seed)
    manifest["grid"] = {k: list(v) for k, v in doc.sweep.grid.items()}
    manifest["n_points"] = len(points)
    _write_manifest(out_dir, manifest)
    return manifest
