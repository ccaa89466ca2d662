"""HTTP service exposing the frozen encoders and the describe model.

Endpoints (JSON bodies, floats as JSON numbers):

    GET  /v1/profile      -> {"model_name", "dim"}
    POST /v1/embed-image  {"image_path" | "image_b64"} -> {"embedding", "dim"}
    POST /v1/embed-text   {"texts": [...]} -> {"embeddings", "dim"}
    POST /v1/describe     {"image_path" | "image_b64", "prompt"}
                          -> {"text", "metadata": {model, temperature, ...}}

Request handling is stateless; model execution is serialized to one lane
per model.  At startup the advertised dim is validated against a probe
embedding and a mismatch aborts the service.
"""

from __future__ import annotations

import base64
import binascii
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel

from .backends import (DescriberBackend, EncoderBackend, SerializedBackend,
                       make_describer, make_encoder)


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8091
    encoder: str = "stub"
    describer: str = "stub"
    dim: int = 768
    device: str = "cpu"
    temperature: float = 0.0
    max_tokens: int = 512
    describer_config: str = ""


class ServiceError(Exception):
    """Maps to a structured JSON error payload."""

    def __init__(self, code: str, message: str, status: int = 400):
        super().__init__(message)
        self.code = code
        self.status = status


class EmbedImageRequest(BaseModel):
    image_path: Optional[str] = None
    image_b64: Optional[str] = None


class EmbedTextRequest(BaseModel):
    texts: list[str]


class DescribeRequest(BaseModel):
    image_path: Optional[str] = None
    image_b64: Optional[str] = None
    prompt: str


def _load_image_bytes(image_path: Optional[str],
                      image_b64: Optional[str]) -> bytes:
    """Resolve and decode-check the request image; bad input -> 'bad-image'."""
    if image_path is None and image_b64 is None:
        raise ServiceError("bad-request", "one of image_path or image_b64 "
                                          "is required")
    if image_b64 is not None:
        try:
            raw = base64.b64decode(image_b64, validate=True)
        except (binascii.Error, ValueError):
            raise ServiceError("bad-image", "image_b64 is not valid base64")
    else:
        path = Path(image_path)
        if not path.is_file():
            raise ServiceError("bad-image", f"no such image: {image_path}")
        raw = path.read_bytes()
    try:
        with Image.open(io.BytesIO(raw)) as image:
            image.verify()
    except (UnidentifiedImageError, OSError, ValueError):
        raise ServiceError("bad-image", "image bytes are not decodable")
    return raw


def create_app(config: Optional[ServiceConfig] = None,
               encoder: Optional[EncoderBackend] = None,
               describer: Optional[DescriberBackend] = None) -> FastAPI:
    """Build the service; raises if the probe embedding dim disagrees."""
    config = config or ServiceConfig()
    encoder = encoder if encoder is not None else make_encoder(
        config.encoder, dim=config.dim, device=config.device)
    describer = describer if describer is not None else make_describer(
        config.describer, temperature=config.temperature,
        max_tokens=config.max_tokens, config_path=config.describer_config,
        device=config.device)

    probe = encoder.embed_texts(["startup dimensionality probe"])
    if probe.shape != (1, encoder.dim):
        raise RuntimeError(
            f"startup probe returned shape {probe.shape}, advertised dim "
            f"is {encoder.dim}: refusing to start"
        )

    encoder_lane = SerializedBackend(encoder)
    describer_lane = SerializedBackend(describer)

    app = FastAPI(title="lmm-sidecar", version="0.1.0")

    @app.exception_handler(ServiceError)
    async def service_error_handler(request: Request, exc: ServiceError):
        return JSONResponse(
            status_code=exc.status,
            content={"error": {"code": exc.code, "message": str(exc)}},
        )

    @app.get("/v1/profile")
    def profile():
        return {"model_name": encoder.model_name, "dim": encoder.dim}

    @app.post("/v1/embed-image")
    def embed_image(request: EmbedImageRequest):
        raw = _load_image_bytes(request.image_path, request.image_b64)
        vector = encoder_lane.embed_image(raw)
        return {"embedding": [float(v) for v in vector], "dim": encoder.dim}

    @app.post("/v1/embed-text")
    def embed_text(request: EmbedTextRequest):
        if not request.texts:
            raise ServiceError("bad-request", "texts must be non-empty")
        if any(not t.strip() for t in request.texts):
            raise ServiceError("bad-request", "texts must not contain "
                                              "blank entries")
        matrix = encoder_lane.embed_texts(request.texts)
        return {
            "embeddings": [[float(v) for v in row] for row in matrix],
            "dim": encoder.dim,
        }

    @app.post("/v1/describe")
    def describe(request: DescribeRequest):
        if not request.prompt or not request.prompt.strip():
            raise ServiceError("bad-request", "prompt must be non-empty")
        raw = _load_image_bytes(request.image_path, request.image_b64)
        text = describer_lane.describe(raw, request.prompt)
        return {
            "text": text,
            "metadata": {"model": describer.model_name, **describer.params},
        }

    return app


def serve(config: ServiceConfig) -> None:
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port)
