"""HTTP generation service.

Stateless JSON API over a fixed set of checkpoints registered at startup:
POST /v1/generate, POST /v1/compare, GET /v1/keywords, GET /v1/checkpoints,
GET /v1/health. Generation is synchronous with a small concurrency cap;
every error response carries a machine-readable code and a human message.
"""

from __future__ import annotations

import base64
import threading
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .checkpoint import Checkpoint, load_checkpoint
from .diffusion import sample
from .errors import TtxError, UnknownCheckpointError
from .imaging import encode_png
from .taxonomy import load_taxonomy

MAX_COUNT = 16
DEFAULT_MAX_CONCURRENT = 2


class GenerationRequest(BaseModel):
    prompt: str
    seed: int
    steps: int = Field(default=50, ge=1)
    guidance: float = Field(default=3.0, ge=0.0)
    count: int = Field(default=1, ge=1, le=MAX_COUNT)
    checkpoint_id: str


class CompareRequest(BaseModel):
    prompt: str
    seed: int
    steps: int = Field(default=50, ge=1)
    guidance: float = Field(default=3.0, ge=0.0)
    count: int = Field(default=1, ge=1, le=MAX_COUNT)
    checkpoint_a: str
    checkpoint_b: str


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message})


class CheckpointRegistry:
    """Immutable name -> checkpoint map fixed at startup."""

    def __init__(self, checkpoints: dict[str, Checkpoint]):
        self._entries = {name: (ckpt, ckpt.digest()) for name, ckpt in checkpoints.items()}

    @classmethod
    def from_paths(cls, paths: dict[str, str | Path]) -> "CheckpointRegistry":
        return cls({name: load_checkpoint(p) for name, p in paths.items()})

    def get(self, name: str) -> tuple[Checkpoint, str]:
        if name not in self._entries:
            raise UnknownCheckpointError(f"no checkpoint registered as {name!r}")
        return self._entries[name]

    def listing(self) -> list[dict]:
        return [{"name": name, "digest": digest} for name, (_, digest) in sorted(self._entries.items())]


def _generate_b64(checkpoint: Checkpoint, req) -> list[str]:
    model, encoder, schedule, codec = checkpoint.build_components()
    images = sample(
        model,
        schedule,
        codec,
        encoder,
        prompt=req.prompt,
        seed=req.seed,
        count=req.count,
        steps=req.steps,
        guidance=req.guidance,
    )
    return [base64.b64encode(encode_png(img)).decode("ascii") for img in images]


def create_app(
    registry: CheckpointRegistry,
    max_concurrent: int = DEFAULT_MAX_CONCURRENT,
) -> FastAPI:
    app = FastAPI(title="ttx pattern service")
    app.state.registry = registry
    app.state.gate = threading.BoundedSemaphore(max_concurrent)

    @app.exception_handler(TtxError)
    async def _domain_error(request: Request, exc: TtxError):
        status = 404 if isinstance(exc, UnknownCheckpointError) else 400
        return _error(status, exc.code, exc.message)

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError):
        return _error(400, "invalid_request", str(exc.errors()))

    @app.get("/v1/health")
    def health():
        return {"status": "ok"}

    @app.get("/v1/keywords")
    def keywords():
        return {"keywords": list(load_taxonomy().keywords)}

    @app.get("/v1/checkpoints")
    def checkpoints():
        return {"checkpoints": registry.listing()}

    @app.post("/v1/generate")
    def generate(req: GenerationRequest):
        checkpoint, digest = registry.get(req.checkpoint_id)
        if not app.state.gate.acquire(blocking=False):
            return _error(429, "capacity_exceeded", "too many concurrent generations")
        try:
            images = _generate_b64(checkpoint, req)
        finally:
            app.state.gate.release()
        return {
            "images": images,
            "request": req.model_dump(),
            "checkpoint_digest": digest,
        }

    @app.post("/v1/compare")
    def compare(req: CompareRequest):
        ckpt_a, digest_a = registry.get(req.checkpoint_a)
        ckpt_b, digest_b = registry.get(req.checkpoint_b)
        if not app.state.gate.acquire(blocking=False):
            return _error(429, "capacity_exceeded", "too many concurrent generations")
        try:
            images_a = _generate_b64(ckpt_a, req)
            images_b = _generate_b64(ckpt_b, req)
        finally:
            app.state.gate.release()
        return {
            "images_a": images_a,
            "images_b": images_b,
            "request": req.model_dump(),
            "digests": {"checkpoint_a": digest_a, "checkpoint_b": digest_b},
        }

    return app
