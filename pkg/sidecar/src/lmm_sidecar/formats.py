"""Canonical on-disk formats shared with the training toolkit.

These layouts are the cross-package interface and must stay bit-exact:

Embedding store — binary; header magic ``FEMB``, version u32, dim u32,
vectors-per-record u32, count u64, all little-endian; each record is a
u16 id length, the UTF-8 id, then K * dim little-endian float32 values.

Manifest — UTF-8 JSON lines; header object with ``name`` and ``classes``
first, one ``{"id", "split", "label", "image_ref"}`` object per line
after.

Description cache — UTF-8 JSON lines keyed by sample id; entries carry
``texts`` plus prompt/model provenance.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

STORE_MAGIC = b"FEMB"
STORE_VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")
_ID_LEN = struct.Struct("<H")


class FormatError(ValueError):
    """Malformed manifest, cache, or store file."""


@dataclass(frozen=True)
class ManifestSample:
    id: str
    split: str
    label: str
    image_ref: str


def read_manifest_samples(path) -> list[ManifestSample]:
    """Samples of a JSON-lines manifest, in file order."""
    path = Path(path)
    samples: list[ManifestSample] = []
    header_seen = False
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path.name}: line {lineno}: {exc.msg}") from None
            if not header_seen:
                if "classes" not in obj:
                    raise FormatError(
                        f"{path.name}: line {lineno}: missing manifest header")
                header_seen = True
                continue
            samples.append(ManifestSample(
                id=str(obj["id"]), split=str(obj["split"]),
                label=str(obj["label"]), image_ref=str(obj.get("image_ref", "")),
            ))
    if not header_seen:
        raise FormatError(f"{path.name}: empty manifest")
    return samples


def read_cached_descriptions(path) -> dict[str, list[str]]:
    """sample id -> texts from a description cache; later lines win."""
    path = Path(path)
    entries: dict[str, list[str]] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path.name}: line {lineno}: {exc.msg}") from None
            entries[str(obj["id"])] = [str(t) for t in obj["texts"]]
    return entries


class StoreWriter:
    """Streaming writer for the canonical embedding store format."""

    def __init__(self, path, dim: int, vectors_per_record: int = 1):
        if dim <= 0 or vectors_per_record <= 0:
            raise FormatError("dim and vectors_per_record must be positive")
        self.path = Path(path)
        self.dim = int(dim)
        self.vectors_per_record = int(vectors_per_record)
        self._count = 0
        self._fh = self.path.open("wb")
        self._fh.write(_HEADER.pack(STORE_MAGIC, STORE_VERSION, self.dim,
                                    self.vectors_per_record, 0))

    def add(self, sample_id: str, block) -> None:
        arr = np.asarray(block, dtype="<f4")
        if arr.ndim == 1:
            arr = arr[np.newaxis, :]
        if arr.shape != (self.vectors_per_record, self.dim):
            raise FormatError(
                f"{sample_id!r}: block shape {arr.shape} does not match "
                f"({self.vectors_per_record}, {self.dim})"
            )
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"{sample_id!r}: non-finite values")
        id_bytes = sample_id.encode("utf-8")
        self._fh.write(_ID_LEN.pack(len(id_bytes)))
        self._fh.write(id_bytes)
        self._fh.write(np.ascontiguousarray(arr).tobytes(order="C"))
        self._count += 1

    def close(self) -> None:
        # The record count lands in the header once it is known.
        self._fh.seek(0)
        self._fh.write(_HEADER.pack(STORE_MAGIC, STORE_VERSION, self.dim,
                                    self.vectors_per_record, self._count))
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


def read_store_blocks(path) -> Iterator[tuple[str, np.ndarray]]:
    """Yield (id, (K, dim) float32 block) records from a store file."""
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, dim, k, count = _HEADER.unpack_from(buf, 0)
    if magic != STORE_MAGIC or version != STORE_VERSION:
        raise FormatError(f"{path}: not a supported store file")
    offset = _HEADER.size
    for i in range(count):
        (id_len,) = _ID_LEN.unpack_from(buf, offset)
        offset += _ID_LEN.size
        sample_id = buf[offset:offset + id_len].decode("utf-8")
        offset += id_len
        block = np.frombuffer(buf, dtype="<f4", count=k * dim,
                              offset=offset).reshape(k, dim).copy()
        offset += 4 * k * dim
        yield sample_id, block
