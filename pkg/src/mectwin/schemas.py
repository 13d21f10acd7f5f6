"""Request and response models of the HTTP service."""

from __future__ import annotations

from typing import Any, Literal, Optional

from pydantic import BaseModel, Field


class RunRequest(BaseModel):
    """Common envelope for the experiment commands.

    ``config`` is the parsed config document (the client reads the file).
    """

    config: dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = None
    out_dir: str = "out"
    workers: int = Field(1, ge=1)
    epochs: Optional[int] = Field(None, ge=0)
    drift: list[str] = Field(default_factory=list)
    checkpoint: Optional[str] = None


class RunResponse(BaseModel):
    command: str
    seed: int
    out_dir: str
    files: list[str]
    summary: dict[str, Any] = Field(default_factory=dict)


class ErrorBody(BaseModel):
    code: Literal["config_error", "missing_artifact", "bad_request"]
    message: str


class UserIn(BaseModel):
    service: Literal["urllc", "dt"]
    lam_per_slot: float = Field(gt=0)
    bits: float = Field(gt=0)
    cycles: float = Field(gt=0)
    c_max_cycles_per_slot: float = Field(gt=0)
    alpha: float = Field(gt=0)


class ApSolveRequest(BaseModel):
    users: list[UserIn]
    system: dict[str, Any] = Field(default_factory=dict)


class ApSolveResponse(BaseModel):
    feasible: bool
    eta_star_j_per_bit: Optional[float]
    N: list[float]
    x: list[float]
    P_w: list[float]
    eta_j_per_bit: list[float]
    rho: float
    evaluations: int
