"""Inference sidecar: frozen encoders and a describe model behind HTTP."""

__version__ = "0.1.0"

from .app import ServiceConfig, ServiceError, create_app, serve
from .backends import (BackendError, ClipEncoderBackend, DescriberBackend,
                       EncoderBackend, HashDescriberBackend,
                       HashEncoderBackend, MiniGPT4DescriberBackend,
                       SerializedBackend, make_describer, make_encoder)
from .export import ExportResult, export_embeddings
from .formats import (FormatError, ManifestSample, StoreWriter,
                      read_cached_descriptions, read_manifest_samples,
                      read_store_blocks)
from .frames import (FrameExtractionResult, extract_middle_frame,
                     extract_middle_frames)

__all__ = [
    "__version__",
    "BackendError",
    "ClipEncoderBackend",
    "DescriberBackend",
    "EncoderBackend",
    "ExportResult",
    "FormatError",
    "FrameExtractionResult",
    "HashDescriberBackend",
    "HashEncoderBackend",
    "ManifestSample",
    "MiniGPT4DescriberBackend",
    "SerializedBackend",
    "ServiceConfig",
    "ServiceError",
    "StoreWriter",
    "create_app",
    "export_embeddings",
    "extract_middle_frame",
    "extract_middle_frames",
    "make_describer",
    "make_encoder",
    "read_cached_descriptions",
    "read_manifest_samples",
    "read_store_blocks",
    "serve",
]
