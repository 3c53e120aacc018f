"""HTTP layer: request validation, readiness gating, probability output.

Contract with clients:

* ``POST /classify`` takes ``{"image": <base64 PNG>, "descriptions":
  [...]}`` and returns ``{"probs": [...], "model_id": "..."}`` where
  ``probs`` sums to 1 within 1e-6 and follows the request's description
  order. Descriptions are scored verbatim; the service never rewrites
  or templates them.
* ``GET /health`` answers 200 with the model id once the backend is
  loaded, 503 before that. ``/classify`` is gated the same way.
* Malformed requests (missing fields, empty description list, bytes
  that do not decode to an image) get 400, unknown routes 404.
"""

from __future__ import annotations

import base64
import binascii
import io
import os
from contextlib import asynccontextmanager

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel, Field

from .backends import DEFAULT_MODEL, make_backend


class ClassifyRequest(BaseModel):
    image: str
    descriptions: list[str] = Field(min_length=1)


def _decode_image(data: str) -> Image.Image:
    try:
        raw = base64.b64decode(data, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise HTTPException(status_code=400, detail=f"image is not valid base64: {exc}")
    try:
        image = Image.open(io.BytesIO(raw))
        image.load()
    except Exception as exc:
        raise HTTPException(status_code=400, detail=f"image bytes do not decode: {exc}")
    return image.convert("RGB")


def create_app(model_id: str | None = None) -> FastAPI:
    """Build the service around one scoring backend.

    The backend is constructed eagerly, so an unknown model id fails
    here, but loaded inside the lifespan handler: until the server has
    actually started, both endpoints report 503.
    """
    if model_id is None:
        model_id = os.environ.get("BRRP_CLIP_MODEL", DEFAULT_MODEL)
    backend = make_backend(model_id)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        backend.load()
        app.state.ready = True
        yield

    app = FastAPI(lifespan=lifespan)
    app.state.ready = False
    app.state.backend = backend

    @app.exception_handler(RequestValidationError)
    async def on_bad_request(request, exc):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    def require_ready() -> None:
        if not app.state.ready:
            raise HTTPException(status_code=503, detail="model is loading")

    @app.get("/health")
    async def health():
        if not app.state.ready:
            return JSONResponse(
                status_code=503,
                content={"status": "loading", "model_id": backend.model_id},
            )
        return {"status": "ok", "model_id": backend.model_id}

    @app.post("/classify")
    async def classify(request: ClassifyRequest):
        require_ready()
        image = _decode_image(request.image)
        logits = backend.scores(image, request.descriptions)
        shifted = np.exp(logits - logits.max())
        probs = shifted / shifted.sum()
        return {"probs": [float(p) for p in probs], "model_id": backend.model_id}

    return app
