"""HTTP surface: /info, /embed_text, /encode_image, /decode_latent,
/predict_noise, /clip_score.

POST bodies and 200 responses use the wire frame (JSON header line + raw f32
payloads); every response echoes the request id and the pinned model version.
Validation problems return 400 with the offending field named, an unloaded
model returns 503, inference failures return 500 with a trace id, and queue
overflow returns 429. Inference is serialized through a single worker slot
with a bounded wait queue.
"""

from __future__ import annotations

import threading
import uuid

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from . import model, scoring
from .wire import WireError, decode_frame, encode_frame

MAX_QUEUE_DEPTH = 8


class _Gate:
    """One in-flight inference; bounded number of waiters; overflow -> 429."""

    def __init__(self, depth: int = MAX_QUEUE_DEPTH):
        self._slot = threading.Semaphore(1)
        self._waiting = threading.Semaphore(depth)

    def __enter__(self):
        if not self._waiting.acquire(blocking=False):
            raise QueueFull()
        self._slot.acquire()
        return self

    def __exit__(self, *exc):
        self._slot.release()
        self._waiting.release()


class QueueFull(RuntimeError):
    pass


def create_app(loaded: bool = True) -> FastAPI:
    app = FastAPI(title="guidance-service", version=model.MODEL_VERSION)
    app.state.loaded = loaded
    app.state.gate = _Gate()

    def error(status: int, message: str, request_id: str | None = None,
              **extra) -> JSONResponse:
        payload = {"status": "error", "error": message,
                   "model_version": model.MODEL_VERSION, **extra}
        if request_id is not None:
            payload["request_id"] = request_id
        return JSONResponse(payload, status_code=status)

    def ok_frame(request_id: str, meta: dict | None = None,
                 tensors: dict[str, np.ndarray] | None = None) -> Response:
        header = {"request_id": request_id, "status": "ok",
                  "model_version": model.MODEL_VERSION, **(meta or {})}
        return Response(content=encode_frame(header, tensors),
                        media_type="application/x-tensor-stream")

    async def parse(request: Request):
        body = await request.body()
        header, tensors = decode_frame(body)
        return header, tensors, header.get("request_id", uuid.uuid4().hex[:12])

    @app.get("/info")
    def info():
        return model.model_card()

    @app.post("/embed_text")
    async def embed_text(request: Request):
        if not app.state.loaded:
            return error(503, "model not loaded")
        try:
            header, _, rid = await parse(request)
        except WireError as exc:
            return error(400, str(exc))
        prompt = header.get("prompt")
        if not prompt or not isinstance(prompt, str):
            return error(400, "missing field 'prompt'", rid)
        with app.state.gate:
            emb = model.embed_text(prompt)
        return ok_frame(rid, tensors={"embedding": emb})

    @app.post("/encode_image")
    async def encode_image(request: Request):
        if not app.state.loaded:
            return error(503, "model not loaded")
        try:
            _, tensors, rid = await parse(request)
        except WireError as exc:
            return error(400, str(exc))
        if "image" not in tensors:
            return error(400, "missing field 'image'", rid)
        try:
            latent = model.encode_image(tensors["image"])
        except model.ModelError as exc:
            return error(400, str(exc), rid)
        return ok_frame(rid, tensors={"latent": latent})

    @app.post("/decode_latent")
    async def decode_latent(request: Request):
        if not app.state.loaded:
            return error(503, "model not loaded")
        try:
            _, tensors, rid = await parse(request)
        except WireError as exc:
            return error(400, str(exc))
        if "latent" not in tensors:
            return error(400, "missing field 'latent'", rid)
        try:
            image = model.decode_latent(tensors["latent"])
        except model.ModelError as exc:
            return error(400, str(exc), rid)
        return ok_frame(rid, tensors={"image": image})

    @app.post("/predict_noise")
    async def predict_noise(request: Request):
        if not app.state.loaded:
            return error(503, "model not loaded")
        try:
            header, tensors, rid = await parse(request)
        except WireError as exc:
            return error(400, str(exc))
        for name in ("z_t", "embedding"):
            if name not in tensors:
                return error(400, f"missing field {name!r}", rid)
        if "depth" not in tensors:
            return error(400, "missing field 'depth' (this model is "
                              "depth-conditioned)", rid)
        if "t" not in header:
            return error(400, "missing field 't'", rid)
        try:
            with app.state.gate:
                pred = model.predict_noise(
                    tensors["z_t"], float(header["t"]), tensors["embedding"],
                    negative_embedding=tensors.get("negative_embedding"),
                    depth=tensors.get("depth"),
                    omega=float(header["omega"]) if "omega" in header else None)
        except QueueFull:
            return error(429, "inference queue full", rid)
        except model.ModelError as exc:
            return error(400, str(exc), rid)
        except Exception:
            return error(500, "inference failure", rid, trace_id=uuid.uuid4().hex)
        return ok_frame(rid, tensors={"noise_pred": pred})

    @app.post("/clip_score")
    async def clip_score(request: Request):
        if not app.state.loaded:
            return error(503, "model not loaded")
        try:
            header, tensors, rid = await parse(request)
        except WireError as exc:
            return error(400, str(exc))
        prompt = header.get("prompt")
        if not prompt:
            return error(400, "missing field 'prompt'", rid)
        if "image" not in tensors:
            return error(400, "missing field 'image'", rid)
        try:
            with app.state.gate:
                emb = model.embed_text(prompt)
                score = scoring.clip_score(tensors["image"], emb)
        except QueueFull:
            return error(429, "inference queue full", rid)
        except model.ModelError as exc:
            return error(400, str(exc), rid)
        return ok_frame(rid, meta={"score": score})

    return app


app = create_app()
