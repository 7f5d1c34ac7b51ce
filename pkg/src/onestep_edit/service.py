"""FastAPI inference service.

Endpoints exchange 32x32 RGB images as base64-encoded PNG.  Models are
loaded once at startup from ``ONESTEP_CKPT_DIR`` (or the ``ckpt_dir``
argument); requests against a service without models get 503.
"""

from __future__ import annotations

import base64
import io
import os
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from onestep_edit.attention import ScaleConfig
from onestep_edit.datagen import from_uint8, to_uint8
from onestep_edit.editing import EditMask, EditRequest, ModelBundle, edit_image, invert
from onestep_edit.losses import noise_stats
from onestep_edit.prompts import BG_STYLES, COLORS, GRAMMAR, SHAPES, PromptSpec, encode_prompt
from onestep_edit.schedule import InvalidArgument


class ScalesIn(BaseModel):
    s_y: float = 2.0
    s_edit: float = 0.0
    s_non_edit: float = 1.0


class InvertIn(BaseModel):
    image: str = Field(description="base64 PNG, 32x32 RGB")
    source_prompt: str


class EditIn(BaseModel):
    image: str
    source_prompt: str
    edit_prompt: str
    scales: ScalesIn = ScalesIn()
    user_mask: str | None = None


def _decode_image(b64: str, field: str) -> torch.Tensor:
    from PIL import Image

    try:
        raw = base64.b64decode(b64, validate=True)
        img = Image.open(io.BytesIO(raw)).convert("RGB")
    except Exception:
        raise HTTPException(400, detail={"field": field, "error": "not a decodable base64 PNG"})
    if img.size != (32, 32):
        img = img.resize((32, 32), Image.BILINEAR)
    return from_uint8(np.asarray(img, dtype=np.uint8))


def _decode_mask(b64: str) -> torch.Tensor:
    from PIL import Image

    try:
        raw = base64.b64decode(b64, validate=True)
        img = Image.open(io.BytesIO(raw)).convert("L")
    except Exception:
        raise HTTPException(400, detail={"field": "user_mask", "error": "not a decodable base64 PNG"})
    if img.size != (32, 32):
        img = img.resize((32, 32), Image.NEAREST)
    return torch.from_numpy(np.asarray(img, dtype=np.float32) / 255.0)


def _encode_image(x: torch.Tensor) -> str:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(to_uint8(x)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


def _encode_mask(m: torch.Tensor) -> str:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray((m.clamp(0, 1) * 255).round().byte().numpy(), mode="L").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


def _parse_prompt(text: str, field: str) -> PromptSpec:
    try:
        return PromptSpec.parse(text)
    except InvalidArgument as e:
        raise HTTPException(400, detail={"field": field, "error": str(e)})


def create_app(ckpt_dir: str | None = None, models: ModelBundle | None = None) -> FastAPI:
    """Build the app.  ``models`` wins over ``ckpt_dir``; both absent means
    the service starts degraded and answers 503 on inference routes."""
    app = FastAPI(title="onestep-edit")

    if models is None:
        ckpt_dir = ckpt_dir or os.environ.get("ONESTEP_CKPT_DIR")
        if ckpt_dir and Path(ckpt_dir).is_dir():
            from onestep_edit.cli import _load_bundle

            try:
                models = _load_bundle(ckpt_dir)
            except Exception:
                models = None
    app.state.models = models

    def _require_models() -> ModelBundle:
        if app.state.models is None:
            raise HTTPException(503, detail="models are not loaded")
        return app.state.models

    @app.get("/api/health")
    def health():
        return {"status": "ok", "models": app.state.models is not None}

    @app.get("/api/prompt-grammar")
    def grammar():
        return {
            "grammar": GRAMMAR,
            "shapes": list(SHAPES),
            "colors": list(COLORS),
            "background_styles": list(BG_STYLES),
            "format": "COLOR SHAPE/STYLE BGCOLOR",
            "scales": {
                "s_y": {"min": 0.0, "max": 4.0, "default": 2.0},
                "s_edit": {"min": 0.0, "max": 1.0, "default": 0.0},
                "s_non_edit": {"min": 0.0, "max": 1.0, "default": 1.0},
            },
        }

    @app.post("/api/invert")
    def api_invert(body: InvertIn):
        bundle = _require_models()
        image = _decode_image(body.image, "image")
        prompt = _parse_prompt(body.source_prompt, "source_prompt")
        with torch.no_grad():
            eps = invert(bundle.inv, image, encode_prompt(prompt, bundle.vocab))
        stats = noise_stats(eps.unsqueeze(0).repeat(2, 1, 1, 1))
        return {
            "inverted_noise_stats": stats,
            "preview": _encode_image(eps.clamp(-1, 1)),
        }

    @app.post("/api/edit")
    def api_edit(body: EditIn):
        bundle = _require_models()
        image = _decode_image(body.image, "image")
        try:
            scales = ScaleConfig(
                s_y=body.scales.s_y, s_edit=body.scales.s_edit, s_non_edit=body.scales.s_non_edit
            )
            scales.validate()
        except InvalidArgument as e:
            raise HTTPException(400, detail={"field": "scales", "error": str(e)})
        user_mask = None
        if body.user_mask is not None:
            user_mask = EditMask(_decode_mask(body.user_mask), provenance="user-supplied")
        req = EditRequest(
            source_image=image,
            source_prompt=_parse_prompt(body.source_prompt, "source_prompt"),
            edit_prompt=_parse_prompt(body.edit_prompt, "edit_prompt"),
            scales=scales,
            user_mask=user_mask,
        )
        result = edit_image(bundle, req)
        return {
            "edited_image": _encode_image(result["edited"]),
            "mask": _encode_mask(result["mask"].weights),
            "timings_ms": result["timings_ms"],
        }

    @app.exception_handler(InvalidArgument)
    def _invalid_argument(request, exc):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    frontend_dist = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if frontend_dist.is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=frontend_dist, html=True), name="frontend")

    return app
