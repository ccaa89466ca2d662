"""Description pooling and image/text embedding fusion.

One image yields one image embedding and K description embeddings.  The
descriptions are reduced to a single vector by elementwise averaging, and
the two channels are then combined by one of four strategies: image only,
text only, concatenation (image block first, text block second), or the
elementwise mean.  All operations here are pure functions on immutable
inputs and are safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .validation import as_matrix, as_vector

DEFAULT_DESCRIPTION_COUNT = 10
DEFAULT_EMBEDDING_DIM = 768  # CLIP ViT-L-14 output width


class FusionStrategy(Enum):
    """How the image embedding and pooled text embedding are combined."""

    IMAGE_ONLY = "image"
    TEXT_ONLY = "text"
    CONCAT = "concat"
    MEAN = "mean"

    def output_dim(self, dim: int) -> int:
        """Fused feature dimension for encoder dimension ``dim``."""
        if dim <= 0:
            raise ValueError(f"encoder dim must be positive, got {dim}")
        return 2 * dim if self is FusionStrategy.CONCAT else dim

    @property
    def needs_image(self) -> bool:
        return self is not FusionStrategy.TEXT_ONLY

    @property
    def needs_text(self) -> bool:
        return self is not FusionStrategy.IMAGE_ONLY

    @classmethod
    def parse(cls, name: "str | FusionStrategy") -> "FusionStrategy":
        """Parse a strategy from a CLI/config spelling.

        Accepts the canonical values ("image", "text", "concat", "mean")
        plus the long forms "image_only"/"text_only" in any case.
        """
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {
            "image": cls.IMAGE_ONLY,
            "image_only": cls.IMAGE_ONLY,
            "text": cls.TEXT_ONLY,
            "text_only": cls.TEXT_ONLY,
            "concat": cls.CONCAT,
            "concatenation": cls.CONCAT,
            "mean": cls.MEAN,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(
                f"unknown fusion strategy {name!r}; "
                f"expected one of {sorted(set(a for a in aliases))}"
            ) from None


@dataclass(frozen=True)
class DescriptionEmbeddings:
    """Text embeddings of the K descriptions of one sample, shape (K, dim)."""

    sample_id: str
    vectors: np.ndarray

    def __post_init__(self):
        mat = as_matrix(self.vectors, name="description embeddings")
        mat.setflags(write=False)
        object.__setattr__(self, "vectors", mat)

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class FusedFeature:
    """Classifier input for one sample, produced by one fusion strategy."""

    values: np.ndarray
    strategy: FusionStrategy
    sample_id: str = ""

    def __post_init__(self):
        vec = as_vector(self.values, name="fused values")
        vec.setflags(write=False)
        object.__setattr__(self, "values", vec)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def pool_descriptions(embeddings) -> np.ndarray:
    """Elementwise arithmetic mean over a sample's description embeddings.

    Accepts a :class:`DescriptionEmbeddings` or any (K, dim) array-like.
    The mean is computed in float64; output dim equals input dim.
    """
    if isinstance(embeddings, DescriptionEmbeddings):
        mat = embeddings.vectors
    else:
        mat = as_matrix(embeddings, name="description embeddings")
    return mat.astype(np.float64, copy=False).mean(axis=0)


def fuse(image_embedding=None, pooled_text=None,
         strategy: FusionStrategy = FusionStrategy.CONCAT, *,
         sample_id: str = "") -> FusedFeature:
    """Combine an image embedding with a pooled text embedding.

    CONCAT places the image block first and the text block second (fixed,
    so cached features stay comparable across runs); MEAN is the
    elementwise average of the two; the single-channel strategies pass
    their operand through and allow the other to be absent.
    """
    strategy = FusionStrategy.parse(strategy)
    image = None if image_embedding is None else as_vector(
        image_embedding, name="image embedding")
    text = None if pooled_text is None else as_vector(
        pooled_text, name="pooled text embedding")

    if strategy.needs_image and image is None:
        raise ValueError(f"{strategy.value}: image embedding is required")
    if strategy.needs_text and text is None:
        raise ValueError(f"{strategy.value}: pooled text embedding is required")

    if strategy is FusionStrategy.IMAGE_ONLY:
        values = image
    elif strategy is FusionStrategy.TEXT_ONLY:
        values = text
    else:
        if image.shape[0] != text.shape[0]:
            raise ValueError(
                f"{strategy.value}: image dim {image.shape[0]} != "
                f"text dim {text.shape[0]}"
            )
        if strategy is FusionStrategy.CONCAT:
            values = np.concatenate([image, text])
        else:
            values = (image + text) / 2.0
    return FusedFeature(values=values, strategy=strategy, sample_id=sample_id)


def fuse_matrix(image_matrix=None, text_matrix=None,
                strategy: FusionStrategy = FusionStrategy.CONCAT) -> np.ndarray:
    """Row-wise :func:`fuse` over aligned (n, dim) matrices."""
    strategy = FusionStrategy.parse(strategy)
    image = None if image_matrix is None else as_matrix(
        image_matrix, name="image embeddings", dtype=np.float64)
    text = None if text_matrix is None else as_matrix(
        text_matrix, name="pooled text embeddings", dtype=np.float64)

    if strategy.needs_image and image is None:
        raise ValueError(f"{strategy.value}: image embeddings are required")
    if strategy.needs_text and text is None:
        raise ValueError(f"{strategy.value}: pooled text embeddings are required")

    if strategy is FusionStrategy.IMAGE_ONLY:
        return image
    if strategy is FusionStrategy.TEXT_ONLY:
        return text
    if image.shape != text.shape:
        raise ValueError(
            f"{strategy.value}: image shape {image.shape} != text shape {text.shape}"
        )
    if strategy is FusionStrategy.CONCAT:
        return np.hstack([image, text])
    return (image + text) / 2.0


class EmbeddingFusionTransformer(BaseEstimator, TransformerMixin):
    """sklearn-style transformer over stacked [image | pooled text] blocks.

    Expects X of shape (n, 2 * encoder_dim) with the image embedding in
    the first half of the columns and the pooled text embedding in the
    second half, and emits the fused features for ``strategy``.  Lets the
    fusion step sit inside an sklearn Pipeline in front of a classifier.
    """

    def __init__(self, strategy="concat"):
        self.strategy = strategy

    def fit(self, X, y=None):
        X = as_matrix(X, name="X", dtype=np.float64)
        if X.shape[1] % 2 != 0:
            raise ValueError(
                f"X must stack two equal-width blocks; got {X.shape[1]} columns"
            )
        self.encoder_dim_ = X.shape[1] // 2
        return self

    def transform(self, X):
        if not hasattr(self, "encoder_dim_"):
            raise RuntimeError("transformer is not fitted")
        X = as_matrix(X, name="X", dtype=np.float64)
        if X.shape[1] != 2 * self.encoder_dim_:
            raise ValueError(
                f"X has {X.shape[1]} columns, expected {2 * self.encoder_dim_}"
            )
        d = self.encoder_dim_
        return fuse_matrix(X[:, :d], X[:, d:], FusionStrategy.parse(self.strategy))
