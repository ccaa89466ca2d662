"""Model backends behind the service endpoints.

Every backend is frozen at inference time and deterministic: the same
input always yields the same output.  The deterministic stub backends
derive vectors and descriptions from content hashes, which keeps the
full pipeline runnable on a laptop; the CLIP/LMM backends load real
checkpoints and need a GPU box with the model extras installed.
"""

from __future__ import annotations

import abc
import hashlib
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class BackendError(RuntimeError):
    """Raised when a backend cannot produce an output for a valid request."""


class EncoderBackend(abc.ABC):
    """Paired frozen image/text encoders with one shared output width."""

    model_name: str
    dim: int

    @abc.abstractmethod
    def embed_image(self, image_bytes: bytes) -> np.ndarray:
        """Embed one decoded-checkable image, returning a (dim,) float32 vector."""

    @abc.abstractmethod
    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        """Embed texts in order, returning an (n, dim) float32 matrix."""


class DescriberBackend(abc.ABC):
    """Multimodal model answering an image + prompt with free text."""

    model_name: str
    params: dict

    @abc.abstractmethod
    def describe(self, image_bytes: bytes, prompt: str) -> str:
        """Return the raw response text."""


def _hash_vector(seed_material: bytes, dim: int) -> np.ndarray:
    digest = hashlib.sha256(seed_material).digest()
    seed = int.from_bytes(digest[:8], "little")
    gen = np.random.default_rng(seed)
    return gen.standard_normal(dim).astype(np.float32)


class HashEncoderBackend(EncoderBackend):
    """Deterministic stand-in encoder: embeddings from content hashes.

    Identical inputs map to identical vectors and distinct inputs to
    (effectively) independent ones, which is all the contract tests and
    desk-scale pipeline runs need.
    """

    def __init__(self, dim: int = 768, model_name: str = "hash-encoder"):
        if dim <= 0:
            raise ValueError(f"dim must be positive, got {dim}")
        self.dim = dim
        self.model_name = model_name

    def embed_image(self, image_bytes: bytes) -> np.ndarray:
        return _hash_vector(b"image:" + image_bytes, self.dim)

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack([
            _hash_vector(b"text:" + text.encode("utf-8"), self.dim)
            for text in texts
        ])


class HashDescriberBackend(DescriberBackend):
    """Deterministic stand-in describer: enumerated lines from a hash."""

    _SUBJECTS = ("scene", "foreground", "background", "lighting", "color",
                 "texture", "motion", "setting", "framing", "mood")

    def __init__(self, model_name: str = "hash-describer",
                 temperature: float = 0.0, max_tokens: int = 512):
        self.model_name = model_name
        self.params = {"temperature": temperature, "max_tokens": max_tokens}

    def describe(self, image_bytes: bytes, prompt: str) -> str:
        token = hashlib.sha256(image_bytes + prompt.encode("utf-8")) \
            .hexdigest()[:12]
        lines = [
            f"{i + 1}. The {self._SUBJECTS[i % len(self._SUBJECTS)]} of "
            f"image {token} shows deterministic detail {i + 1}."
            for i in range(10)
        ]
        return "\n".join(lines)


class ClipEncoderBackend(EncoderBackend):
    """Real CLIP encoders via open_clip; requires the ``models`` extra."""

    def __init__(self, model_name: str = "ViT-L-14",
                 pretrained: str = "openai", device: str = "cpu"):
        try:
            import open_clip
            import torch
            from PIL import Image
        except ImportError as exc:
            raise BackendError(
                f"CLIP backend needs torch/open_clip installed ({exc}); "
                "pip install 'lmm-sidecar[models]'"
            ) from exc
        import io

        self._io = io
        self._torch = torch
        self._Image = Image
        self.model_name = f"CLIP {model_name}"
        self.device = device
        self._model, _, self._preprocess = \
            open_clip.create_model_and_transforms(model_name,
                                                  pretrained=pretrained)
        self._tokenizer = open_clip.get_tokenizer(model_name)
        self._model = self._model.to(device).eval()
        with torch.no_grad():
            probe = self._model.encode_text(
                self._tokenizer(["probe"]).to(device))
        self.dim = int(probe.shape[-1])

    def embed_image(self, image_bytes: bytes) -> np.ndarray:
        image = self._Image.open(self._io.BytesIO(image_bytes)).convert("RGB")
        tensor = self._preprocess(image).unsqueeze(0).to(self.device)
        with self._torch.no_grad():
            features = self._model.encode_image(tensor)
        return features[0].cpu().numpy().astype(np.float32)

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        tokens = self._tokenizer(list(texts)).to(self.device)
        with self._torch.no_grad():
            features = self._model.encode_text(tokens)
        return features.cpu().numpy().astype(np.float32)


class MiniGPT4DescriberBackend(DescriberBackend):
    """Hook for a locally installed MiniGPT-4 (Vicuna-13B) checkout.

    The upstream project is not pip-installable; point PYTHONPATH at a
    working checkout exposing ``minigpt4`` and pass its eval config.
    """

    def __init__(self, config_path: str, device: str = "cuda:0",
                 temperature: float = 0.1, max_tokens: int = 512):
        try:
            import minigpt4  # noqa: F401
        except ImportError as exc:
            raise BackendError(
                "MiniGPT-4 backend needs a local checkout on PYTHONPATH "
                f"({exc})"
            ) from exc
        raise BackendError(
            "MiniGPT-4 wiring is site-specific; subclass "
            "MiniGPT4DescriberBackend and implement describe() against "
            f"your checkout (config: {config_path}, device: {device})"
        )

    def describe(self, image_bytes: bytes, prompt: str) -> str:
        raise NotImplementedError


@dataclass
class SerializedBackend:
    """One-lane execution wrapper: a single in-flight call per model.

    GPU memory holds one resident copy of each model, so calls are
    serialized; the HTTP layer may still accept concurrent connections.
    """

    backend: object
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def __getattr__(self, name):
        attr = getattr(self.backend, name)
        if not callable(attr):
            return attr
        def locked(*args, **kwargs):
            with self._lock:
                return attr(*args, **kwargs)
        return locked


def make_encoder(kind: str, dim: int = 768, device: str = "cpu") -> EncoderBackend:
    if kind == "stub":
        return HashEncoderBackend(dim=dim)
    if kind == "clip":
        return ClipEncoderBackend(device=device)
    raise ValueError(f"unknown encoder backend {kind!r}")


def make_describer(kind: str, temperature: float = 0.0,
                   max_tokens: int = 512, config_path: str = "",
                   device: str = "cpu") -> DescriberBackend:
    if kind == "stub":
        return HashDescriberBackend(temperature=temperature,
                                    max_tokens=max_tokens)
    if kind == "minigpt4":
        return MiniGPT4DescriberBackend(config_path=config_path, device=device,
                                        temperature=temperature,
                                        max_tokens=max_tokens)
    raise ValueError(f"unknown describer backend {kind!r}")
