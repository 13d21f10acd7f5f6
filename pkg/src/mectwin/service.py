"""FastAPI application exposing the experiment commands and the per-AP solver.

Run with ``uvicorn mectwin.service:app``.  Errors come back as JSON
``{"code": ..., "message": ...}`` with status 400 (bad config) or 404
(missing artifact); the CLI maps them to its exit codes.
"""

from __future__ import annotations

import math

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from mectwin import __version__, experiments
from mectwin.ap_optimizer import ApProblem, ApUser, solve_ap
from mectwin.params import ConfigError, params_from_dict
from mectwin.schemas import ApSolveRequest, ApSolveResponse, RunRequest, RunResponse

app = FastAPI(title="mectwin", version=__version__)


@app.exception_handler(ConfigError)
async def _config_error(request: Request, exc: ConfigError):
    return JSONResponse(status_code=400, content={"code": "config_error", "message": str(exc)})


@app.exception_handler(experiments.MissingArtifact)
async def _missing(request: Request, exc: experiments.MissingArtifact):
    return JSONResponse(status_code=404, content={"code": "missing_artifact", "message": str(exc)})


def _seed(req: RunRequest) -> int:
    if req.seed is not None:
        return req.seed
    seed = req.config.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    return seed


def _finite(obj):
    """JSON has no infinities; map them to None."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__, "build": experiments.build_id()}


@app.post("/solve-ap", response_model=RunResponse)
def solve_ap_cmd(req: RunRequest) -> RunResponse:
    seed = _seed(req)
    res = experiments.run_solve_ap(req.config, seed, req.out_dir, req.workers)
    return RunResponse(command="solve-ap", seed=seed, out_dir=req.out_dir, files=res["files"],
                       summary=_finite({"summary": res["summary"]}))


@app.post("/sweep", response_model=RunResponse)
def sweep_cmd(req: RunRequest) -> RunResponse:
    seed = _seed(req)
    res = experiments.run_sweep(req.config, seed, req.out_dir, req.workers)
    return RunResponse(command="sweep", seed=seed, out_dir=req.out_dir, files=res["files"],
                       summary={"rows": res["rows"]})


@app.post("/train", response_model=RunResponse)
def train_cmd(req: RunRequest) -> RunResponse:
    seed = _seed(req)
    res = experiments.run_train(req.config, seed, req.out_dir, req.epochs, req.drift, req.checkpoint)
    files = res.pop("files")
    return RunResponse(command="train", seed=seed, out_dir=req.out_dir, files=files, summary=_finite(res))


@app.post("/compare", response_model=RunResponse)
def compare_cmd(req: RunRequest) -> RunResponse:
    seed = _seed(req)
    res = experiments.run_compare(req.config, seed, req.out_dir, req.workers, req.checkpoint)
    return RunResponse(command="compare", seed=seed, out_dir=req.out_dir, files=res["files"],
                       summary=_finite({"table": res["table"]}))


@app.post("/ap/solve", response_model=ApSolveResponse)
def ap_solve(req: ApSolveRequest) -> ApSolveResponse:
    params = params_from_dict(req.system)
    users = [ApUser(u.service, u.lam_per_slot, u.bits, u.cycles, u.c_max_cycles_per_slot, u.alpha, k)
             for k, u in enumerate(req.users)]
    sol = solve_ap(ApProblem(users, params))
    return ApSolveResponse(feasible=sol.feasible, eta_star_j_per_bit=_finite(sol.eta_star), N=sol.N,
                           x=sol.x, P_w=sol.P, eta_j_per_bit=sol.eta, rho=sol.rho,
                           evaluations=sol.evaluations)
