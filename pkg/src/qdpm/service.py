"""HTTP front end: a FastAPI service wrapping the experiment commands.

Each endpoint takes the raw JSON configuration document plus an output
directory (on the server's filesystem), runs the command, and returns the
manifest. Error categories map onto HTTP statuses (and, through the CLI,
onto exit codes): invalid config -> 400, solver non-convergence -> 409,
missing dependency artifact -> 424.
"""

from __future__ import annotations

from typing import Any, Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import __version__, commands
from .config import parse_config
from .errors import ConfigError, MissingArtifactError, SolverConvergenceError

app = FastAPI(
    title="qdpm",
    version=__version__,
    description="Q-learning dynamic power management experiment service",
)


class CommandRequest(BaseModel):
    config: dict[str, Any]
    out_dir: str
    seed: Optional[int] = None


class CommandResponse(BaseModel):
    status: str = "ok"
    manifest: dict[str, Any]


@app.exception_handler(ConfigError)
async def _config_error(request: Request, exc: ConfigError):
    return JSONResponse(
        status_code=400, content={"detail": {"category": "config", "message": str(exc)}}
    )


@app.exception_handler(SolverConvergenceError)
async def _solver_error(request: Request, exc: SolverConvergenceError):
    detail: dict[str, Any] = {"category": "solver_nonconvergence", "message": str(exc)}
    if isinstance(exc.result, dict):
        detail["manifest"] = exc.result
    return JSONResponse(status_code=409, content={"detail": detail})


@app.exception_handler(MissingArtifactError)
async def _missing_artifact(request: Request, exc: MissingArtifactError):
    return JSONResponse(
        status_code=424,
        content={"detail": {"category": "missing_artifact", "message": str(exc)}},
    )


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


def _dispatch(command, req: CommandRequest) -> CommandResponse:
    doc = parse_config(req.config)
    manifest = command(doc, req.out_dir, seed=req.seed)
    return CommandResponse(manifest=manifest)


@app.post("/solve", response_model=CommandResponse)
def solve(req: CommandRequest) -> CommandResponse:
    return _dispatch(commands.solve_command, req)


@app.post("/run", response_model=CommandResponse)
def run(req: CommandRequest) -> CommandResponse:
    return _dispatch(commands.run_command, req)


@app.post("/compare", response_model=CommandResponse)
def compare(req: CommandRequest) -> CommandResponse:
    return _dispatch(commands.compare_command, req)


@app.post("/track", response_model=CommandResponse)
def track(req: CommandRequest) -> CommandResponse:
    return _dispatch(commands.track_command, req)


@app.post("/sweep", response_model=CommandResponse)
def sweep(req: CommandRequest) -> CommandResponse:
    return _dispatch(commands.sweep_command, req)
