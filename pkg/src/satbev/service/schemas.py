"""Request/response bodies for the HTTP endpoints.

Responses that wrap artifacts already shaped by the core library (manifests,
metric reports, verification reports) carry them as plain JSON objects; the
authoritative schema lives with the producing module.
"""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, ConfigDict, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class PoseIn(BaseModel):
    model_config = ConfigDict(extra="forbid")

    timestamp: float = 0.0
    lat: float
    lon: float
    yaw: float
    token: Optional[str] = None


class CurateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mosaic_dir: str
    poses: str
    out_dir: str


class CurateResponse(BaseModel):
    count_ok: int
    count_failed: int
    entries: list[dict]


class SliceRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mosaic_dir: str
    pose: PoseIn


class SliceResponse(BaseModel):
    sidecar: dict
    png_base64: str


class GenlabelsRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    occ_dir: str
    out_dir: str


class GenlabelsResponse(BaseModel):
    count: int
    entries: list[dict]


class EvalRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    pred_dir: str
    gt_dir: str
    observe_mask: bool = False


class EvalResponse(BaseModel):
    count: int
    pooled: dict
    per_sample: dict


class PerClassRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    per_class: list[float] = Field(min_length=17, max_length=17)


class ReportResponse(BaseModel):
    report: dict


class VerifyRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    perturb_geometry: bool = False
    suites: Optional[list[str]] = None


class VerifyResponse(BaseModel):
    seed: int
    perturb_geometry: bool
    passed: bool
    suites: list[dict]


class BenchRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    repeats: int = Field(default=5, ge=1, le=100)


class BenchResponse(BaseModel):
    work: dict
    gather_s: float
    splat_s: float
    splat_over_gather: float
    repeats: int


class DemoFuseRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = 0


class DemoFuseResponse(BaseModel):
    stats: dict
    map_png_base64: str


class ErrorDetail(BaseModel):
    kind: str
    message: str
