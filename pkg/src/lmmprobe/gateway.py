"""Uniform, dimension-enforcing access to the frozen encoders.

Two adapters provide the vectors: a file adapter backed by precomputed
embedding stores, and a remote adapter that calls the sidecar service.
The gateway in front of either guarantees that every vector it surfaces
matches the configured profile dimension and is finite, and memoizes
results into embedding stores so each distinct id costs at most one
adapter call.
"""

from __future__ import annotations

import abc
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .datasets import EmbeddingStore, SampleRecord
from .descriptions import DescriptionSet
from .fusion import DescriptionEmbeddings

DEFAULT_PROFILE_NAME = "vit-l-14"

# Preset encoder widths, keyed by CLI profile name.
PROFILE_DIMS = {
    "vit-l-14": 768,
    "vit-b-32": 512,
    "vit-b-16": 512,
}


class Modality(Enum):
    IMAGE = "image"
    TEXT = "text"


class DimensionMismatchError(RuntimeError):
    """A vector's dim disagrees with the profile: the adapter is misconfigured."""


class MissingEmbeddingError(LookupError):
    """The file adapter has no entry for a requested id."""


@dataclass(frozen=True)
class EncoderProfile:
    """Identity and output width of one frozen encoder."""

    model_name: str
    dim: int
    modality: Modality

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError(f"profile dim must be positive, got {self.dim}")


def profile_pair(name: str = DEFAULT_PROFILE_NAME,
                 dim: Optional[int] = None) -> tuple[EncoderProfile, EncoderProfile]:
    """(image, text) profiles for a named preset, or an explicit dim."""
    if dim is None:
        try:
            dim = PROFILE_DIMS[name]
        except KeyError:
            raise ValueError(
                f"unknown profile {name!r}; known: {sorted(PROFILE_DIMS)}"
            ) from None
    model = f"CLIP {name.upper()}" if name in PROFILE_DIMS else name
    return (EncoderProfile(model, dim, Modality.IMAGE),
            EncoderProfile(model, dim, Modality.TEXT))


class EncoderAdapter(abc.ABC):
    """Source of raw embedding vectors, by sample."""

    @abc.abstractmethod
    def fetch_image_embedding(self, sample: SampleRecord) -> np.ndarray:
        """Return the (d,) image embedding for one sample."""

    @abc.abstractmethod
    def fetch_description_embeddings(self, descriptions: DescriptionSet) -> np.ndarray:
        """Return the (K, d) text embeddings, rows matching text order."""


class StoreAdapter(EncoderAdapter):
    """File adapter: reads vectors from precomputed embedding stores."""

    def __init__(self, image_store: Optional[EmbeddingStore] = None,
                 text_store: Optional[EmbeddingStore] = None):
        self._image_store = image_store
        self._text_store = text_store

    def fetch_image_embedding(self, sample: SampleRecord) -> np.ndarray:
        if self._image_store is None:
            raise MissingEmbeddingError("no image store configured")
        vec = self._image_store.vector(sample.id)
        if vec is None:
            raise MissingEmbeddingError(
                f"image embedding missing for id {sample.id!r}"
            )
        return vec

    def fetch_description_embeddings(self, descriptions: DescriptionSet) -> np.ndarray:
        if self._text_store is None:
            raise MissingEmbeddingError("no text store configured")
        block = self._text_store.get(descriptions.sample_id)
        if block is None:
            raise MissingEmbeddingError(
                f"description embeddings missing for id {descriptions.sample_id!r}"
            )
        return block


class RemoteAdapter(EncoderAdapter):
    """Remote adapter: calls the sidecar's embed endpoints.

    The in-flight request cap bounds concurrent calls when the gateway is
    used from multiple threads.
    """

    def __init__(self, client, max_in_flight: int = 4):
        if max_in_flight < 1:
            raise ValueError(f"max_in_flight must be >= 1, got {max_in_flight}")
        self._client = client
        self._gate = threading.Semaphore(max_in_flight)

    def fetch_image_embedding(self, sample: SampleRecord) -> np.ndarray:
        with self._gate:
            return self._client.embed_image(image_ref=sample.image_ref)

    def fetch_description_embeddings(self, descriptions: DescriptionSet) -> np.ndarray:
        with self._gate:
            return self._client.embed_texts(list(descriptions.texts))


class EncoderGateway:
    """Front for an adapter that enforces the profile and memoizes.

    Every surfaced vector has exactly the profile dim and finite entries;
    a violation raises instead of propagating bad data downstream.  The
    memo tables are EmbeddingStore instances, so a run can persist them
    as canonical store files afterwards.
    """

    def __init__(self, adapter: EncoderAdapter,
                 image_profile: Optional[EncoderProfile] = None,
                 text_profile: Optional[EncoderProfile] = None,
                 image_store: Optional[EmbeddingStore] = None,
                 text_store: Optional[EmbeddingStore] = None):
        default_image, default_text = profile_pair()
        self.adapter = adapter
        self.image_profile = image_profile or default_image
        self.text_profile = text_profile or default_text
        self.image_store = image_store or EmbeddingStore(self.image_profile.dim, 1)
        self._text_store = text_store
        self._insert_lock = threading.Lock()

    @property
    def text_store(self) -> Optional[EmbeddingStore]:
        return self._text_store

    def embed_image(self, sample: SampleRecord) -> np.ndarray:
        """Image embedding for a sample; at most one adapter call per id."""
        cached = self.image_store.vector(sample.id)
        if cached is not None:
            return cached
        vec = np.asarray(self.adapter.fetch_image_embedding(sample), dtype=np.float32)
        self._validate(vec, self.image_profile, sample.id, expect_rows=None)
        with self._insert_lock:
            if sample.id not in self.image_store:
                self.image_store.put(sample.id, vec)
        return self.image_store.vector(sample.id)

    def embed_texts(self, descriptions: DescriptionSet) -> DescriptionEmbeddings:
        """Text embeddings for one sample's descriptions, order preserved."""
        k = descriptions.count
        if self._text_store is None:
            self._text_store = EmbeddingStore(self.text_profile.dim, k)
        cached = self._text_store.get(descriptions.sample_id)
        if cached is not None:
            return DescriptionEmbeddings(descriptions.sample_id, cached)
        matrix = np.asarray(
            self.adapter.fetch_description_embeddings(descriptions),
            dtype=np.float32,
        )
        self._validate(matrix, self.text_profile, descriptions.sample_id,
                       expect_rows=k)
        with self._insert_lock:
            if descriptions.sample_id not in self._text_store:
                self._text_store.put(descriptions.sample_id, matrix)
        return DescriptionEmbeddings(
            descriptions.sample_id, self._text_store.get(descriptions.sample_id))

    def _validate(self, arr: np.ndarray, profile: EncoderProfile,
                  sample_id: str, expect_rows: Optional[int]) -> None:
        if expect_rows is None:
            if arr.ndim != 1:
                raise DimensionMismatchError(
                    f"{sample_id!r}: expected a vector, got shape {arr.shape}"
                )
        else:
            if arr.ndim != 2 or arr.shape[0] != expect_rows:
                raise DimensionMismatchError(
                    f"{sample_id!r}: expected {expect_rows} vectors, "
                    f"got shape {arr.shape}"
                )
        if arr.shape[-1] != profile.dim:
            raise DimensionMismatchError(
                f"{sample_id!r}: adapter returned dim {arr.shape[-1]}, "
                f"profile {profile.model_name!r} requires {profile.dim}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{sample_id!r}: adapter returned non-finite values")
