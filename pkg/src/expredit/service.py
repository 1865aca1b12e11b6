"""FastAPI service exposing the request/response-shaped operations: synthetic
face rendering, manifest validation, AU stage-target interpolation, editing
with a loaded checkpoint, and the PSNR / Frechet metrics. Long training runs
stay on the CLI."""

import base64
import io
import os

import numpy as np
from fastapi import FastAPI, HTTPException
from PIL import Image
from pydantic import BaseModel, Field

from . import __version__
from .data import ManifestError, denormalize_image, load_image, load_manifest
from .interp import pseudo_targets, stage_targets
from .metrics import frechet_distance, psnr, save_image_grid
from .synth import SyntheticFaceParams, synth_face_render
from .training import edit, load_checkpoint


class RenderRequest(BaseModel):
    au_like: list[float] = Field(min_length=1)
    identity_seed: int = 0
    canvas: int = 128


class RenderResponse(BaseModel):
    image_png_base64: str
    landmarks: dict[str, tuple[float, float]]


class ManifestRequest(BaseModel):
    path: str


class ManifestSummary(BaseModel):
    valid: bool
    au_dim: int
    image_size: int
    n_records: int
    n_identities: int


class StageTargetsRequest(BaseModel):
    y_x: list[float]
    y_z: list[float]
    n_stages: int = 3
    checkpoint: str | None = None  # None: linear pseudo targets only


class StageTargetsResponse(BaseModel):
    targets: list[list[float]]


class PsnrRequest(BaseModel):
    image_a: str
    image_b: str


class MetricResponse(BaseModel):
    value: float


class FrechetRequest(BaseModel):
    mu_a: list[float]
    sigma_a: list[list[float]]
    mu_b: list[float]
    sigma_b: list[list[float]]


class EditRequest(BaseModel):
    checkpoint: str
    image: str
    source_aus: list[float]
    target_aus: list[float]
    out_dir: str | None = None
    grid: bool = False


class EditResponse(BaseModel):
    final: str
    intermediates: list[str]
    grid: str | None = None


def _png_base64(img):
    buf = io.BytesIO()
    Image.fromarray(denormalize_image(img)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def create_app():
    app = FastAPI(title="expredit", version=__version__)
    checkpoints = {}

    def get_model(path):
        path = os.path.abspath(path)
        if path not in checkpoints:
            if not os.path.exists(path):
                raise HTTPException(404, f"checkpoint not found: {path}")
            checkpoints[path] = load_checkpoint(path)[0]
        return checkpoints[path]

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/synth/render", response_model=RenderResponse)
    def render(req: RenderRequest):
        try:
            img, landmarks = synth_face_render(
                SyntheticFaceParams(
                    au_like=np.array(req.au_like), identity_seed=req.identity_seed, canvas=req.canvas
                )
            )
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from exc
        return RenderResponse(image_png_base64=_png_base64(img), landmarks=landmarks)

    @app.post("/manifest/validate", response_model=ManifestSummary)
    def validate_manifest(req: ManifestRequest):
        if not os.path.exists(req.path):
            raise HTTPException(404, f"manifest not found: {req.path}")
        try:
            manifest = load_manifest(req.path)
        except ManifestError as exc:
            raise HTTPException(422, str(exc)) from exc
        return ManifestSummary(
            valid=True,
            au_dim=manifest.au_dim,
            image_size=manifest.image_size,
            n_records=len(manifest.records),
            n_identities=len(manifest.identities()),
        )

    @app.post("/interp/stage-targets", response_model=StageTargetsResponse)
    def interp_stage_targets(req: StageTargetsRequest):
        try:
            if req.checkpoint is None:
                targets = pseudo_targets(req.y_x, req.y_z, req.n_stages)
            else:
                model = get_model(req.checkpoint)
                targets = stage_targets(req.y_x, req.y_z, req.n_stages, model.interpolator)
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from exc
        return StageTargetsResponse(targets=[[float(v) for v in t] for t in targets])

    @app.post("/metrics/psnr", response_model=MetricResponse)
    def metric_psnr(req: PsnrRequest):
        for path in (req.image_a, req.image_b):
            if not os.path.exists(path):
                raise HTTPException(404, f"image not found: {path}")
        try:
            value = psnr(load_image(req.image_a), load_image(req.image_b))
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from exc
        return MetricResponse(value=value)

    @app.post("/metrics/frechet", response_model=MetricResponse)
    def metric_frechet(req: FrechetRequest):
        try:
            value = frechet_distance(
                (np.array(req.mu_a), np.array(req.sigma_a)),
                (np.array(req.mu_b), np.array(req.sigma_b)),
            )
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from exc
        return MetricResponse(value=value)

    @app.post("/edit", response_model=EditResponse)
    def edit_image(req: EditRequest):
        from .data import save_image

        model = get_model(req.checkpoint)
        if not os.path.exists(req.image):
            raise HTTPException(404, f"image not found: {req.image}")
        face = load_image(req.image)
        try:
            intermediates, final = edit(face, req.source_aus, req.target_aus, model)
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from exc
        out_dir = req.out_dir or os.path.dirname(os.path.abspath(req.image))
        os.makedirs(out_dir, exist_ok=True)
        stem = os.path.splitext(os.path.basename(req.image))[0]
        paths = []
        for i, img in enumerate(intermediates):
            p = os.path.join(out_dir, f"{stem}_stage{i + 1}.png")
            save_image(p, img)
            paths.append(p)
        final_path = os.path.join(out_dir, f"{stem}_edited.png")
        save_image(final_path, final)
        grid_path = None
        if req.grid:
            grid_path = os.path.join(out_dir, f"{stem}_grid.png")
            save_image_grid(grid_path, [face] + intermediates + [final])
        return EditResponse(final=final_path, intermediates=paths, grid=grid_path)

    return app


app = create_app()
