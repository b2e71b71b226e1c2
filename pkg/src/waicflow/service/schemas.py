"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class JobRequest(BaseModel):
    """Common shape of every command request.

    `config_path` points at a key=value config file readable by the service;
    `overrides` are config keys applied on top of it (CLI flags end up here).
    """

    out_dir: str
    config_path: Optional[str] = None
    seed: Optional[int] = None
    members: Optional[int] = None
    serial: Optional[bool] = None
    overrides: dict[str, str] = Field(default_factory=dict)


class SimulateRequest(JobRequest):
    pass


class SimulateResponse(BaseModel):
    dataset_path: str
    camera_table_path: str
    n_rows: int
    n_train: int
    n_test: int
    n_tr_s: int
    n_sup: int
    n_sup_r: int


class TrainRequest(JobRequest):
    dataset_path: str


class TrainResponse(BaseModel):
    manifest_path: str
    checkpoint_paths: list[str]
    loss_curve_path: str
    n_training_rows: int
    final_nll: list[float]


class ScoreRequest(JobRequest):
    manifest_path: str
    dataset_path: str


class ScoreResponse(BaseModel):
    scores_path: str
    n_rows: int
    median_waic: float
    mean_waic: float


class SpectrumScore(BaseModel):
    waic: float
    mean_logp: float
    var_logp: float
    per_member_logp: list[float]


class ScoreSpectraRequest(BaseModel):
    """Score raw spectra directly, without touching the filesystem."""

    manifest_path: str
    spectra: list[list[float]]


class ScoreSpectraResponse(BaseModel):
    scores: list[SpectrumScore]


class SplitSummaryModel(BaseModel):
    median: float
    map_estimate: float
    q02: float
    q25: float
    q75: float
    q98: float


class InsilicoResponse(BaseModel):
    summaries: dict[str, SplitSummaryModel]
    median_gap: float
    auroc_outside: float
    worst2_outside_fraction: float
    n_outside: int
    paths: dict[str, str]


class SceneChangeResponse(BaseModel):
    detected_frame: Optional[int]
    true_switch_frame: int
    n_frames: int
    mean_waic_mismatched: float
    mean_waic_matched: float
    series_path: str
    report_path: str


class SweepRow(BaseModel):
    members: int
    mean_waic_in_distribution: float
    mean_waic_outside: float


class SweepResponse(BaseModel):
    rows: list[SweepRow]
    table_path: str
    stabilization_gap: float


class ErrorResponse(BaseModel):
    detail: str
