"""Pydantic request/response models for the pipeline endpoints."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class VolumeInfo(BaseModel):
    id: str
    dims: list[int]
    spacing: list[float]
    origin: list[float]
    header_path: str | None = None


class LoadVolumeRequest(BaseModel):
    header_path: str
    id: str | None = None


class PhantomRequest(BaseModel):
    out_dir: str
    name: str = "phantom"
    spec: dict | None = None  # PhantomSpec JSON; defaults when omitted
    seed: int | None = None
    slab_layers: list[tuple[str, float]] | None = None  # layered alternative


class PhantomResponse(BaseModel):
    header_path: str
    volume: VolumeInfo
    label_counts: dict[str, int]


class FitRequest(BaseModel):
    volume: str
    delta_hu: float = 100.0
    out: str | None = None


class FitResponse(BaseModel):
    thresholds: dict
    classes: dict[str, dict[str, float]]
    out: str | None = None


class PlanRequest(BaseModel):
    volume: str
    out: str | None = None
    max_length_mm: float = 90.0
    risk_clearance_cap_mm: float = 10.0
    target_hit_cap: int = 15
    min_quality: float = Field(0.4, ge=0.0, le=1.0)


class PlanResponse(BaseModel):
    n_paths: int
    q_max: float | None = None
    q_min: float | None = None
    out: str | None = None
    warning: str | None = None


class DegradeParams(BaseModel):
    sigma_mm: float = Field(1.0, ge=0.0)
    seed: int = 11


class SteerRequest(BaseModel):
    volume: str
    paths_file: str
    path_index: int = 0
    provider: str = "full"  # full | partial
    step_mm: float = Field(0.09, gt=0.0, le=0.09)
    design_slope: float = 0.0
    degrade: DegradeParams = Field(default_factory=DegradeParams)
    out_prefix: str | None = None


class SteerResponse(BaseModel):
    path_id: str
    n_samples: int
    max_force_n: float
    events: list[list]
    out_npz: str | None = None
    out_csv: str | None = None


class CompareRequest(BaseModel):
    ref_npz: str
    test_npz: str


class MetricsRow(BaseModel):
    path_id: str
    rmse_n: float
    mae_n: float
    pct_identical: float
    msd_mm: float
    hsd_mm: float
    unmatched: list[str]


class StudyRequest(BaseModel):
    volume: str
    out_dir: str
    paths_file: str | None = None  # planned on the fly when omitted
    test_provider: str = "partial"  # partial | full
    degrade: DegradeParams = Field(default_factory=DegradeParams)
    step_mm: float = Field(0.09, gt=0.0, le=0.09)
    design_slope: float = 0.0
    max_paths: int | None = None
    patient_id: str = "phantom"
    min_quality: float = Field(0.4, ge=0.0, le=1.0)


class StudyResponse(BaseModel):
    n_paths: int
    summary: dict
    metrics_csv: str
    summary_json: str
    quantiles_csv: str | None = None


class ReportRequest(BaseModel):
    metrics_csv: str
    out_dir: str


class ReportResponse(BaseModel):
    written: list[str]


class ErrorBody(BaseModel):
    error: str
    message: str
