"""FastAPI surface over curation, labels, evaluation, and verification.

Every operation the CLI exposes is an endpoint here; errors leave as
``{"detail": {"kind", "message"}}`` so clients can branch on ``kind``
without parsing prose.
"""

from __future__ import annotations

import base64
import io

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from PIL import Image

from .. import __version__, geo, pipeline, synth, verification
from ..occupancy import OccFormatError
from ..tensor import DimensionError, NumericError
from . import schemas


def _png_base64(array) -> str:
    buf = io.BytesIO()
    Image.fromarray(array).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _error(status: int, kind: str, message: str) -> JSONResponse:
    detail = schemas.ErrorDetail(kind=kind, message=message)
    return JSONResponse(status_code=status, content={"detail": detail.model_dump()})


def create_app() -> FastAPI:
    app = FastAPI(title="satbev", version=__version__)

    @app.exception_handler(geo.MosaicNotFoundError)
    async def _mosaic_missing(request, exc):
        return _error(404, exc.kind, str(exc))

    @app.exception_handler(geo.GeoError)
    async def _geo_error(request, exc):
        return _error(400, getattr(exc, "kind", "geo"), str(exc))

    @app.exception_handler(pipeline.SampleSetError)
    async def _sample_mismatch(request, exc):
        return _error(400, "sample-mismatch", str(exc))

    @app.exception_handler(FileNotFoundError)
    async def _not_found(request, exc):
        return _error(404, "not-found", str(exc))

    @app.exception_handler(OccFormatError)
    async def _occ_format(request, exc):
        return _error(400, "occ-format", str(exc))

    @app.exception_handler(DimensionError)
    async def _dims(request, exc):
        return _error(400, "dimension", str(exc))

    @app.exception_handler(NumericError)
    async def _numeric(request, exc):
        return _error(400, "numeric", str(exc))

    @app.exception_handler(KeyError)
    async def _key(request, exc):
        return _error(400, "invalid", str(exc))

    @app.exception_handler(ValueError)
    async def _value(request, exc):
        return _error(400, "invalid", str(exc))

    @app.get("/health", response_model=schemas.HealthResponse)
    async def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/curate", response_model=schemas.CurateResponse)
    async def curate(req: schemas.CurateRequest):
        mosaic = geo.GeoMosaic.from_dir(req.mosaic_dir)
        poses = geo.poses_read_jsonl(req.poses)
        manifest = geo.curate(poses, mosaic, req.out_dir)
        return schemas.CurateResponse(**manifest)

    @app.post("/slice", response_model=schemas.SliceResponse)
    async def slice_one(req: schemas.SliceRequest):
        mosaic = geo.GeoMosaic.from_dir(req.mosaic_dir)
        pose = geo.EgoPose(timestamp=req.pose.timestamp, lat=req.pose.lat,
                           lon=req.pose.lon, yaw=req.pose.yaw,
                           token=req.pose.token)
        sl = geo.extract_oriented_slice(mosaic, pose)
        return schemas.SliceResponse(sidecar=geo.slice_sidecar(sl),
                                     png_base64=_png_base64(sl.pixels))

    @app.post("/genlabels", response_model=schemas.GenlabelsResponse)
    async def genlabels(req: schemas.GenlabelsRequest):
        manifest = pipeline.generate_label_maps(req.occ_dir, req.out_dir)
        return schemas.GenlabelsResponse(**manifest)

    @app.post("/eval", response_model=schemas.EvalResponse)
    async def evaluate(req: schemas.EvalRequest):
        result = pipeline.evaluate_dirs(req.pred_dir, req.gt_dir,
                                        observe_mask=req.observe_mask)
        return schemas.EvalResponse(**result)

    @app.post("/eval/per-class", response_model=schemas.ReportResponse)
    async def eval_per_class(req: schemas.PerClassRequest):
        report = pipeline.report_from_per_class(req.per_class)
        return schemas.ReportResponse(report=report.to_json())

    @app.post("/verify", response_model=schemas.VerifyResponse)
    async def verify(req: schemas.VerifyRequest):
        report = verification.run_verification(
            seed=req.seed, perturb_geometry=req.perturb_geometry,
            names=req.suites)
        return schemas.VerifyResponse(**report.to_json())

    @app.post("/bench", response_model=schemas.BenchResponse)
    async def bench(req: schemas.BenchRequest):
        result = synth.bench_view_transforms(seed=req.seed, repeats=req.repeats)
        return schemas.BenchResponse(**result)

    @app.post("/demo-fuse", response_model=schemas.DemoFuseResponse)
    async def demo_fuse(req: schemas.DemoFuseRequest):
        result = synth.demo_fuse(seed=req.seed)
        return schemas.DemoFuseResponse(
            stats=result["stats"],
            map_png_base64=_png_base64(result["attention_map"]))

    return app
