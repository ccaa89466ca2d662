"""HTTP client for the encoder/description sidecar service.

The sidecar speaks JSON over HTTP: POST /v1/embed-image, POST
/v1/embed-text, POST /v1/describe, GET /v1/profile.  Transient failures
(connection errors, 5xx) are retried with bounded exponential backoff;
4xx responses carry a structured error payload and are not retried.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import requests


class SidecarError(RuntimeError):
    """Service-side failure: unreachable, bad status, or bad payload."""

    def __init__(self, message: str, code: str = ""):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class DescribeResult:
    """Raw description text plus the decoding provenance the service echoed."""

    text: str
    model_name: str = ""
    params: dict = field(default_factory=dict)


class SidecarClient:
    """Thin typed wrapper over the sidecar's HTTP endpoints."""

    def __init__(self, base_url: str, *, timeout: float = 60.0,
                 max_retries: int = 3, backoff: float = 0.5,
                 session=None, sleep=time.sleep):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self._session = session if session is not None else requests.Session()
        self._sleep = sleep
        self._profile: Optional[dict] = None

    # -- transport ---------------------------------------------------------

    def _request(self, method: str, path: str, payload: Optional[dict] = None) -> dict:
        url = f"{self.base_url}{path}"
        last_error: Optional[Exception] = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                response = self._session.request(
                    method, url, json=payload, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = exc
                continue
            if response.status_code >= 500:
                last_error = SidecarError(
                    f"{path}: server error {response.status_code}")
                continue
            if response.status_code >= 400:
                raise SidecarError(
                    f"{path}: {_error_message(response)}",
                    code=_error_code(response),
                )
            try:
                return response.json()
            except ValueError:
                raise SidecarError(f"{path}: response is not JSON") from None
        raise SidecarError(
            f"{path}: unreachable after {self.max_retries + 1} attempts "
            f"({last_error})"
        )

    # -- endpoints ----------------------------------------------------------

    def profile(self) -> dict:
        """Model name and embedding dim advertised by the service (cached)."""
        if self._profile is None:
            self._profile = self._request("GET", "/v1/profile")
        return self._profile

    @property
    def model_name(self) -> str:
        return str(self.profile().get("model_name", ""))

    @property
    def dim(self) -> int:
        return int(self.profile().get("dim", 0))

    def embed_image(self, image_ref: Optional[str] = None,
                    image_b64: Optional[str] = None) -> np.ndarray:
        if image_ref is None and image_b64 is None:
            raise ValueError("one of image_ref or image_b64 is required")
        payload = {}
        if image_ref is not None:
            payload["image_path"] = image_ref
        if image_b64 is not None:
            payload["image_b64"] = image_b64
        body = self._request("POST", "/v1/embed-image", payload)
        return np.asarray(body["embedding"], dtype=np.float32)

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        texts = list(texts)
        if not texts:
            raise ValueError("texts must be non-empty")
        body = self._request("POST", "/v1/embed-text", {"texts": texts})
        matrix = np.asarray(body["embeddings"], dtype=np.float32)
        if matrix.shape[0] != len(texts):
            raise SidecarError(
                f"/v1/embed-text: {matrix.shape[0]} vectors for {len(texts)} texts"
            )
        return matrix

    def describe(self, image_ref: str, prompt: str) -> DescribeResult:
        body = self._request(
            "POST", "/v1/describe",
            {"image_path": image_ref, "prompt": prompt},
        )
        metadata = body.get("metadata", {})
        return DescribeResult(
            text=str(body.get("text", "")),
            model_name=str(metadata.get("model", "")),
            params={k: v for k, v in metadata.items() if k != "model"},
        )


def _error_message(response) -> str:
    try:
        return str(response.json()["error"]["message"])
    except Exception:
        return f"status {response.status_code}"


def _error_code(response) -> str:
    try:
        return str(response.json()["error"]["code"])
    except Exception:
        return ""
