"""Linear probing over fused image and description embeddings.

Frozen encoders (served by a sidecar or read from precomputed stores)
supply an image embedding and K description-text embeddings per sample;
the descriptions are average-pooled, fused with the image embedding
(concat / mean / single channel), and a single linear layer is trained
on the result with softmax cross-entropy.
"""

__version__ = "0.1.0"

from .fusion import (DEFAULT_DESCRIPTION_COUNT, DEFAULT_EMBEDDING_DIM,
                     DescriptionEmbeddings, EmbeddingFusionTransformer,
                     FusedFeature, FusionStrategy, fuse, fuse_matrix,
                     pool_descriptions)
from .datasets import (DatasetManifest, DescriptionCache, EmbeddingStore,
                       ManifestError, SampleRecord, StoreError, load_manifest,
                       read_store, write_manifest, write_store)
from .descriptions import (DEFAULT_PROMPT_TEMPLATE, DescriptionSet,
                           ParseError, PromptSpec, describe_samples,
                           parse_response, request_descriptions)
from .gateway import (DimensionMismatchError, EncoderAdapter, EncoderGateway,
                      EncoderProfile, MissingEmbeddingError, Modality,
                      RemoteAdapter, StoreAdapter, profile_pair)
from .probe import (LinearProbeClassifier, ProbeModel, TrainConfig,
                    TrainTrace, TrainingDivergedError, accuracy,
                    cross_entropy, format_percent, load_checkpoint,
                    loss_gradient, predict, save_checkpoint, softmax, train)
from .client import DescribeResult, SidecarClient, SidecarError
from .harness import (PartialDataError, RunReport, RunSpec, StrategyResult,
                      SynthConfig, SynthPaths, emit_curves, replay_report,
                      run_ablation, synth_dataset)

__all__ = [
    "__version__",
    "DEFAULT_DESCRIPTION_COUNT",
    "DEFAULT_EMBEDDING_DIM",
    "DEFAULT_PROMPT_TEMPLATE",
    "DatasetManifest",
    "DescribeResult",
    "DescriptionCache",
    "DescriptionEmbeddings",
    "DescriptionSet",
    "DimensionMismatchError",
    "EmbeddingFusionTransformer",
    "EmbeddingStore",
    "EncoderAdapter",
    "EncoderGateway",
    "EncoderProfile",
    "FusedFeature",
    "FusionStrategy",
    "LinearProbeClassifier",
    "ManifestError",
    "MissingEmbeddingError",
    "Modality",
    "ParseError",
    "PartialDataError",
    "ProbeModel",
    "PromptSpec",
    "RemoteAdapter",
    "RunReport",
    "RunSpec",
    "SampleRecord",
    "SidecarClient",
    "SidecarError",
    "StoreAdapter",
    "StoreError",
    "StrategyResult",
    "SynthConfig",
    "SynthPaths",
    "TrainConfig",
    "TrainTrace",
    "TrainingDivergedError",
    "accuracy",
    "cross_entropy",
    "describe_samples",
    "emit_curves",
    "format_percent",
    "fuse",
    "fuse_matrix",
    "load_checkpoint",
    "load_manifest",
    "loss_gradient",
    "parse_response",
    "pool_descriptions",
    "predict",
    "profile_pair",
    "read_store",
    "replay_report",
    "request_descriptions",
    "run_ablation",
    "save_checkpoint",
    "softmax",
    "synth_dataset",
    "train",
    "write_manifest",
    "write_store",
]
