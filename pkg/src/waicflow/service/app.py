"""FastAPI service wrapping the core package.

Commands run synchronously in the request (training jobs take minutes at
full scale; clients should not set a read timeout). Usage errors map to
HTTP 400, everything else raised by the package to HTTP 500.
"""

from __future__ import annotations

import os

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..config import HarnessConfig, load_config
from ..datasets import load_checkpoint
from ..errors import UsageError, WaicflowError
from ..experiments import (cmd_score, cmd_simulate, cmd_train,
                           run_ensemble_sweep, run_insilico_experiment,
                           run_scene_change_experiment)
from ..waic import Ensemble, waic_batch
from . import schemas


def _resolve_config(req: schemas.JobRequest) -> HarnessConfig:
    overrides: dict = dict(req.overrides)
    if req.seed is not None:
        overrides["seed"] = req.seed
    if req.members is not None:
        overrides["members"] = req.members
    if req.serial is not None:
        overrides["serial"] = req.serial
    return load_config(req.config_path, **overrides)


def create_app() -> FastAPI:
    app = FastAPI(title="waicflow", version=__version__)

    @app.exception_handler(UsageError)
    async def usage_error_handler(request: Request, err: UsageError):
        return JSONResponse(status_code=400, content={"detail": str(err)})

    @app.exception_handler(WaicflowError)
    async def runtime_error_handler(request: Request, err: WaicflowError):
        return JSONResponse(status_code=500, content={"detail": str(err)})

    @app.exception_handler(Exception)
    async def unexpected_error_handler(request: Request, err: Exception):
        return JSONResponse(status_code=500,
                            content={"detail": f"{type(err).__name__}: {err}"})

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/simulate", response_model=schemas.SimulateResponse)
    def simulate(req: schemas.SimulateRequest):
        result = cmd_simulate(_resolve_config(req), req.out_dir)
        return schemas.SimulateResponse(**result)

    @app.post("/train", response_model=schemas.TrainResponse)
    def train(req: schemas.TrainRequest):
        result = cmd_train(_resolve_config(req), req.dataset_path, req.out_dir)
        return schemas.TrainResponse(**result)

    @app.post("/score", response_model=schemas.ScoreResponse)
    def score(req: schemas.ScoreRequest):
        result = cmd_score(req.manifest_path, req.dataset_path, req.out_dir)
        return schemas.ScoreResponse(**result)

    @app.post("/waic", response_model=schemas.ScoreSpectraResponse)
    def waic_spectra(req: schemas.ScoreSpectraRequest):
        if not req.spectra:
            raise UsageError("no spectra to score")
        if not os.path.exists(req.manifest_path):
            raise UsageError(f"manifest not found: {req.manifest_path}")
        ensemble = load_checkpoint(req.manifest_path)
        if not isinstance(ensemble, Ensemble):
            raise UsageError(f"{req.manifest_path} is not an ensemble manifest")
        widths = {len(row) for row in req.spectra}
        if len(widths) != 1:
            raise UsageError(f"spectra have inconsistent lengths: {sorted(widths)}")
        scores = waic_batch(ensemble, np.asarray(req.spectra, dtype=np.float64))
        return schemas.ScoreSpectraResponse(scores=[
            schemas.SpectrumScore(waic=s.waic, mean_logp=s.mean_logp,
                                  var_logp=s.var_logp,
                                  per_member_logp=s.per_member_logp.tolist())
            for s in scores])

    @app.post("/experiments/insilico", response_model=schemas.InsilicoResponse)
    def insilico(req: schemas.JobRequest):
        report = run_insilico_experiment(_resolve_config(req), req.out_dir)
        summaries = {name: schemas.SplitSummaryModel(
            median=s.median, map_estimate=s.map_estimate,
            q02=s.q02, q25=s.q25, q75=s.q75, q98=s.q98)
            for name, s in report.summaries.items()}
        gap = abs(report.summaries["sup_r"].median - report.summaries["tr_s"].median)
        return schemas.InsilicoResponse(
            summaries=summaries, median_gap=gap,
            auroc_outside=report.auroc_outside,
            worst2_outside_fraction=report.worst2_outside_fraction,
            n_outside=report.n_outside, paths=report.paths)

    @app.post("/experiments/scenechange", response_model=schemas.SceneChangeResponse)
    def scenechange(req: schemas.JobRequest):
        config = _resolve_config(req)
        result = run_scene_change_experiment(config, req.out_dir)
        series = result.roi_mean_waic
        switch = result.true_switch_frame
        settle = min(switch + 10, series.size - 1)
        return schemas.SceneChangeResponse(
            detected_frame=result.detected_frame,
            true_switch_frame=switch,
            n_frames=int(series.size),
            mean_waic_mismatched=float(series[:switch].mean()),
            mean_waic_matched=float(series[settle:].mean()),
            series_path=os.path.join(req.out_dir, "scene_series.csv"),
            report_path=os.path.join(req.out_dir, "scene_report.txt"))

    @app.post("/experiments/sweep", response_model=schemas.SweepResponse)
    def sweep(req: schemas.JobRequest):
        config = _resolve_config(req)
        rows = run_ensemble_sweep(config, req.out_dir)
        by_m = {m: w_in for m, w_in, _ in rows}
        gap = 0.0
        if 10 in by_m and 20 in by_m and by_m[20] != 0:
            gap = abs(by_m[10] - by_m[20]) / abs(by_m[20])
        return schemas.SweepResponse(
            rows=[schemas.SweepRow(members=m, mean_waic_in_distribution=w_in,
                                   mean_waic_outside=w_out)
                  for m, w_in, w_out in rows],
            table_path=os.path.join(req.out_dir, "sweep.csv"),
            stabilization_gap=gap)

    return app


app = create_app()
