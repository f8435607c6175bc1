"""FastAPI application: pipeline endpoints, slice serving, trainer socket."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from fastapi import FastAPI, Query, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .. import __version__
from ..errors import SimError
from ..evaluation import (StudyConfig, compare, load_trace_npz, read_metrics_csv,
                          run_study, save_trace_csv, save_trace_npz, steer,
                          write_metrics_csv)
from ..phantom import DegradeSpec, PhantomSpec, default_spec, generate, generate_slab
from ..planner import Planner, PlannerConfig, load_paths, save_paths
from ..report import write_report
from ..tissue import fit_thresholds
from ..volume import TissueLabel, save_volume
from .registry import VolumeRegistry
from .schemas import (CompareRequest, ErrorBody, FitRequest, FitResponse,
                      HealthResponse, LoadVolumeRequest, MetricsRow,
                      PhantomRequest, PhantomResponse, PlanRequest, PlanResponse,
                      ReportRequest, ReportResponse, SteerRequest, SteerResponse,
                      StudyRequest, StudyResponse, VolumeInfo)
from .slices import render_slice
from .trainer import TrainerSession


def create_app(registry: VolumeRegistry | None = None,
               ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="needlesim", version=__version__)
    app.state.registry = registry if registry is not None else VolumeRegistry()

    @app.exception_handler(SimError)
    async def _sim_error(request, exc: SimError):
        body = ErrorBody(error=type(exc).__name__, message=str(exc))
        return JSONResponse(status_code=400, content=body.model_dump())

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(version=__version__)

    @app.get("/volumes", response_model=list[VolumeInfo])
    def volumes():
        return [VolumeInfo(**info) for info in app.state.registry.list_info()]

    @app.post("/volumes/load", response_model=VolumeInfo)
    def load_volume_ep(req: LoadVolumeRequest):
        entry = app.state.registry.load(req.header_path, req.id)
        return VolumeInfo(**entry.info())

    @app.post("/phantom", response_model=PhantomResponse)
    def phantom_ep(req: PhantomRequest):
        if req.slab_layers:
            layers = [(TissueLabel[name], float(t)) for name, t in req.slab_layers]
            vol = generate_slab(layers, seed=req.seed if req.seed is not None else 3)
        else:
            if req.spec is not None:
                import json as _json
                spec = PhantomSpec.from_json(_json.dumps(req.spec))
            else:
                spec = default_spec()
            if req.seed is not None:
                from dataclasses import replace
                spec = replace(spec, seed=req.seed)
            vol = generate(spec)
        header = Path(req.out_dir) / f"{req.name}.json"
        save_volume(vol, header)
        entry = app.state.registry.add(vol, header_path=str(header))
        values, counts = np.unique(vol.labels, return_counts=True)
        label_counts = {TissueLabel(int(v)).name: int(c)
                        for v, c in zip(values, counts)}
        return PhantomResponse(header_path=str(header),
                               volume=VolumeInfo(**entry.info()),
                               label_counts=label_counts)

    @app.post("/fit", response_model=FitResponse)
    def fit_ep(req: FitRequest):
        entry = app.state.registry.get(req.volume)
        model, thresholds = fit_thresholds(entry.volume, req.delta_hu)
        out = None
        if req.out:
            Path(req.out).parent.mkdir(parents=True, exist_ok=True)
            Path(req.out).write_text(thresholds.to_json() + "\n")
            out = req.out
        classes = {name: {"mean": c.mean, "std": c.std, "weight": c.weight}
                   for name, c in (("air", model.air), ("skin", model.skin),
                                   ("fat_soft", model.fat_soft), ("bone", model.bone))}
        return FitResponse(
            thresholds={"t0": thresholds.t0, "t1": thresholds.t1,
                        "t2_minus": thresholds.t2_minus, "t2_plus": thresholds.t2_plus,
                        "fallbacks": list(thresholds.fallbacks)},
            classes=classes, out=out)

    @app.post("/plan", response_model=PlanResponse)
    def plan_ep(req: PlanRequest):
        entry = app.state.registry.get(req.volume)
        config = PlannerConfig(max_length_mm=req.max_length_mm,
                               risk_clearance_cap_mm=req.risk_clearance_cap_mm,
                               target_hit_cap=req.target_hit_cap,
                               min_quality=req.min_quality)
        paths = Planner(entry.volume, config).plan()
        entry.set_reference_paths(paths)
        out = None
        if req.out:
            Path(req.out).parent.mkdir(parents=True, exist_ok=True)
            save_paths(paths, req.out)
            out = req.out
        qs = [p.q for p in paths]
        return PlanResponse(
            n_paths=len(paths),
            q_max=max(qs) if qs else None,
            q_min=min(qs) if qs else None,
            out=out,
            warning=None if paths else "no candidate path survived the constraints")

    @app.post("/steer", response_model=SteerResponse)
    def steer_ep(req: SteerRequest):
        entry = app.state.registry.get(req.volume)
        paths = load_paths(req.paths_file)
        if not 0 <= req.path_index < len(paths):
            raise SimError(f"path index {req.path_index} outside 0..{len(paths) - 1}")
        provider = entry.provider(req.provider, req.degrade.sigma_mm,
                                  req.degrade.seed)
        trace = steer(paths[req.path_index], provider, req.step_mm,
                      req.design_slope, path_id=f"p{req.path_index:05d}")
        out_npz = out_csv = None
        if req.out_prefix:
            prefix = Path(req.out_prefix)
            prefix.parent.mkdir(parents=True, exist_ok=True)
            out_npz = str(prefix) + ".npz"
            out_csv = str(prefix) + ".csv"
            save_trace_npz(trace, out_npz)
            save_trace_csv(trace, out_csv)
        return SteerResponse(path_id=trace.path_id, n_samples=len(trace),
                             max_force_n=float(trace.forces.max()),
                             events=[list(e) for e in trace.events],
                             out_npz=out_npz, out_csv=out_csv)

    @app.post("/compare", response_model=MetricsRow)
    def compare_ep(req: CompareRequest):
        ref = load_trace_npz(req.ref_npz)
        test = load_trace_npz(req.test_npz)
        m = compare(ref, test)
        return MetricsRow(path_id=m.path_id, rmse_n=m.rmse, mae_n=m.mae,
                          pct_identical=m.pct_identical, msd_mm=m.msd,
                          hsd_mm=m.hsd, unmatched=list(m.unmatched))

    @app.post("/study", response_model=StudyResponse)
    def study_ep(req: StudyRequest):
        entry = app.state.registry.get(req.volume)
        if req.paths_file:
            paths = load_paths(req.paths_file)
        else:
            paths = entry.reference_paths()
        cfg = StudyConfig(
            degrade=DegradeSpec(sigma_mm=req.degrade.sigma_mm, seed=req.degrade.seed),
            test_provider=req.test_provider, step_mm=req.step_mm,
            design_slope=req.design_slope, max_paths=req.max_paths,
            patient_id=req.patient_id)
        result = run_study(entry.volume, paths, cfg, entry.table)
        out = Path(req.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        metrics_csv = out / "metrics.csv"
        summary_json = out / "summary.json"
        write_metrics_csv(result.metrics, metrics_csv)
        summary_json.write_text(result.summary.to_json() + "\n")
        written = write_report(result.metrics, out)
        import json as _json
        return StudyResponse(n_paths=len(result.metrics),
                             summary=_json.loads(result.summary.to_json()),
                             metrics_csv=str(metrics_csv),
                             summary_json=str(summary_json),
                             quantiles_csv=written[0])

    @app.post("/report", response_model=ReportResponse)
    def report_ep(req: ReportRequest):
        metrics = read_metrics_csv(req.metrics_csv)
        written = write_report(metrics, req.out_dir)
        return ReportResponse(written=written)

    @app.get("/slice")
    def slice_ep(volume: str, axis: str = "z", index: int = 0,
                 center: float = 40.0, width: float = 400.0,
                 overlay: bool = False,
                 provider: str = Query("full", pattern="^(full|partial)$"),
                 sigma_mm: float = 1.0, seed: int = 11):
        entry = app.state.registry.get(volume)
        grid = entry.label_grid(provider, sigma_mm, seed)
        return render_slice(entry.volume, axis, index, center, width, overlay,
                            label_grid=grid)

    @app.websocket("/session")
    async def session_ws(ws: WebSocket):
        await ws.accept()
        session = TrainerSession(app.state.registry)
        try:
            while True:
                msg = await ws.receive_json()
                await ws.send_json(session.handle(msg))
        except WebSocketDisconnect:
            pass

    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
