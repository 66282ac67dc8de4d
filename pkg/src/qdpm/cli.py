"""Thin command-line client for the qdpm service.

By default the CLI talks to the FastAPI app in-process (no server needed);
`--server URL` points it at a running instance instead. Experiments are
data: all behaviour lives in the JSON config document, flags only carry
paths, seed, and verbosity.

Exit codes: 0 success, 2 config/validation, 3 solver non-convergence,
4 missing dependency artifact.
"""

from __future__ import annotations

import json
import os
import sys

import click
import httpx

from .config import SEED_ENV_VAR

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGENCE = 3
EXIT_MISSING_ARTIFACT = 4

_STATUS_EXIT = {400: EXIT_CONFIG, 422: EXIT_CONFIG, 409: EXIT_NONCONVERGENCE, 424: EXIT_MISSING_ARTIFACT}


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    # Deferred imports so `--help` stays fast. TestClient is the supported
    # synchronous httpx client over an in-process ASGI app.
    from fastapi.testclient import TestClient

    from .service import app

    return TestClient(app)


def _load_config_file(path: str) -> dict:
    if not os.path.exists(path):
        click.echo(f"error: configuration file not found: {path}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        click.echo(f"error: configuration file is not valid JSON: {exc}", err=True)
        sys.exit(EXIT_CONFIG)


def _resolve_cli_seed(seed: int | None, config: dict) -> int | None:
    """Seed precedence: --seed, then the config document, then QDPM_SEED."""
    if seed is not None:
        return seed
    if config.get("experiment", {}).get("seed") is not None:
        return None  # let the service use the config's seed
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            click.echo(f"error: {SEED_ENV_VAR} must be an integer, got {env!r}", err=True)
            sys.exit(EXIT_CONFIG)
    return None


def _invoke(ctx, endpoint: str, config_path: str, out: str, seed: int | None) -> None:
    config = _load_config_file(config_path)
    payload = {
        "config": config,
        "out_dir": os.path.abspath(out),
        "seed": _resolve_cli_seed(seed, config),
    }
    quiet = ctx.obj.get("quiet", False)
    verbose = ctx.obj.get("verbose", False)
    with _client(ctx.obj.get("server")) as client:
        resp = client.post(f"/{endpoint}", json=payload)
    if resp.status_code == 200:
        manifest = resp.json()["manifest"]
        if verbose:
            click.echo(json.dumps(manifest, indent=2, sort_keys=True))
        elif not quiet:
            summary = manifest.get("summary", {})
            bits = [f"{endpoint}: ok", f"out={out}", f"seed={manifest.get('seed')}"]
            if "avg_reward" in summary:
                bits.append(f"avg_reward={summary['avg_reward']:.6g}")
            if "solver" in manifest:
                bits.append(f"residual={manifest['solver']['residual']:.3g}")
            click.echo("  ".join(bits))
        sys.exit(EXIT_OK)
    try:
        detail = resp.json().get("detail", {})
    except ValueError:
        detail = {}
    message = detail.get("message") if isinstance(detail, dict) else str(detail)
    if not message:
        message = json.dumps(detail) if detail else resp.text
    if not quiet:
        click.echo(f"error: {message}", err=True)
    code = _STATUS_EXIT.get(resp.status_code)
    if code is None:
        raise RuntimeError(f"unexpected service response {resp.status_code}: {resp.text}")
    sys.exit(code)


def _common_options(fn):
    fn = click.option("--config", "config_path", required=True, type=click.Path(), help="JSON config document")(fn)
    fn = click.option("--out", required=True, type=click.Path(), help="output directory")(fn)
    fn = click.option("--seed", type=int, default=None, help="seed override (wins over config and QDPM_SEED)")(fn)
    return fn


@click.group()
@click.option("--server", default=None, envvar="QDPM_SERVER", help="base URL of a running qdpm service; default is in-process")
@click.option("--quiet", is_flag=True, help="suppress normal output")
@click.option("--verbose", is_flag=True, help="print the full manifest")
@click.pass_context
def main(ctx, server, quiet, verbose):
    """Q-learning dynamic power management experiment lab."""
    ctx.ensure_object(dict)
    ctx.obj.update(server=server, quiet=quiet, verbose=verbose)


@main.command()
@_common_options
@click.pass_context
def solve(ctx, config_path, out, seed):
    """Solve the exact MDP: writes policy.csv, values.csv, manifest."""
    _invoke(ctx, "solve", config_path, out, seed)


@main.command()
@_common_options
@click.pass_context
def run(ctx, config_path, out, seed):
    """Run one simulation: trajectory.csv, snapshots.csv, summary.csv."""
    _invoke(ctx, "run", config_path, out, seed)


@main.command()
@_common_options
@click.pass_context
def compare(ctx, config_path, out, seed):
    """Stationary convergence study against the model-based optimum."""
    _invoke(ctx, "compare", config_path, out, seed)


@main.command()
@_common_options
@click.pass_context
def track(ctx, config_path, out, seed):
    """Regime-switching tracking study with recovery times."""
    _invoke(ctx, "track", config_path, out, seed)


@main.command()
@_common_options
@click.pass_context
def sweep(ctx, config_path, out, seed):
    """Run a declarative parameter grid, one directory per point."""
    _invoke(ctx, "sweep", config_path, out, seed)


if __name__ == "__main__":
    main()
