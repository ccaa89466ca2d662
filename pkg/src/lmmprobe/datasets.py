"""Dataset manifests, the on-disk embedding store, and the description cache.

Canonical formats (all fixed so files hash identically across platforms):

Manifest — UTF-8 JSON lines.  Line 1 is a header object with ``name``,
``classes`` (ordered, defines class indices by position) and optional
``expected_counts`` ({"train": n, "test": n}).  Every following line is
one sample: ``{"id", "split", "label", "image_ref", "image_meta"?}``.

Embedding store — binary.  Header: magic ``FEMB``, format version (u32),
dim (u32), vectors-per-record K (u32), record count (u64), all
little-endian.  Each record: id length (u16), UTF-8 id bytes, then
K * dim little-endian float32 values.  Image stores use K == 1;
description stores use K == description count.

Description cache — UTF-8 JSON lines, one entry per line keyed by sample
id, carrying the texts plus prompt/model/timestamp provenance so stale
caches are detectable.  Re-reading a written entry returns byte-identical
strings; a repeated put with identical content is a no-op.
"""

from __future__ import annotations

import json
import struct
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

STORE_MAGIC = b"FEMB"
STORE_VERSION = 1
_STORE_HEADER = struct.Struct("<4sIIIQ")  # magic, version, dim, K, count
_ID_LEN = struct.Struct("<H")

VALID_SPLITS = ("train", "test")


class ManifestError(ValueError):
    """Raised for malformed or inconsistent dataset manifests."""


class StoreError(ValueError):
    """Raised for embedding-store violations: bad dims, corrupt files."""


class CacheError(ValueError):
    """Raised for description-cache violations."""


# ---------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class SampleRecord:
    """One dataset item; images are referenced, never decoded here."""

    id: str
    split: str
    label: str
    image_ref: str = ""
    image_meta: Optional[dict] = None

    def __post_init__(self):
        if not self.id:
            raise ManifestError("sample id must be non-empty")
        if self.split not in VALID_SPLITS:
            raise ManifestError(
                f"sample {self.id!r}: split must be one of {VALID_SPLITS}, "
                f"got {self.split!r}"
            )


@dataclass
class DatasetManifest:
    name: str
    classes: list[str]
    samples: list[SampleRecord]
    expected_counts: Optional[dict] = None
    # Free-form dataset provenance, e.g. which official train/test split
    # the manifest encodes.  Round-trips through the header untouched.
    metadata: Optional[dict] = None

    def validate(self) -> "DatasetManifest":
        if not self.classes:
            raise ManifestError("class list must be non-empty")
        if len(set(self.classes)) != len(self.classes):
            raise ManifestError("class list contains duplicates")
        known = set(self.classes)
        seen: set[str] = set()
        for sample in self.samples:
            if sample.id in seen:
                raise ManifestError(f"duplicate id {sample.id!r}")
            seen.add(sample.id)
            if sample.label not in known:
                raise ManifestError(
                    f"sample {sample.id!r}: unknown label {sample.label!r}"
                )
        if self.expected_counts:
            for split, expected in self.expected_counts.items():
                actual = sum(1 for s in self.samples if s.split == split)
                if actual != expected:
                    raise ManifestError(
                        f"count mismatch for split {split!r}: "
                        f"expected {expected}, found {actual}"
                    )
        return self

    def class_index(self, label: str) -> int:
        """Class index = position in the manifest's class list."""
        try:
            return self.classes.index(label)
        except ValueError:
            raise ManifestError(f"unknown label {label!r}") from None

    def split_samples(self, split: str) -> list[SampleRecord]:
        if split not in VALID_SPLITS:
            raise ManifestError(f"split must be one of {VALID_SPLITS}, got {split!r}")
        return [s for s in self.samples if s.split == split]

    def label_indices(self, samples: Sequence[SampleRecord]) -> np.ndarray:
        index = {name: i for i, name in enumerate(self.classes)}
        return np.array([index[s.label] for s in samples], dtype=np.int64)


def _json_compact(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def load_manifest(path) -> DatasetManifest:
    """Load and validate a JSON-lines manifest.

    Parse failures report the 1-based line number.  Loading is
    deterministic: identical bytes give an identical manifest with the
    same sample order.
    """
    path = Path(path)
    samples: list[SampleRecord] = []
    header = None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path.name}: line {lineno}: {exc.msg}") from None
            if header is None:
                if "classes" not in obj:
                    raise ManifestError(
                        f"{path.name}: line {lineno}: header must declare 'classes'"
                    )
                header = obj
                continue
            try:
                samples.append(SampleRecord(
                    id=str(obj["id"]),
                    split=str(obj["split"]),
                    label=str(obj["label"]),
                    image_ref=str(obj.get("image_ref", "")),
                    image_meta=obj.get("image_meta"),
                ))
            except KeyError as exc:
                raise ManifestError(
                    f"{path.name}: line {lineno}: missing field {exc}"
                ) from None
            except ManifestError as exc:
                raise ManifestError(f"{path.name}: line {lineno}: {exc}") from None
    if header is None:
        raise ManifestError(f"{path.name}: empty manifest")
    manifest = DatasetManifest(
        name=str(header.get("name", path.stem)),
        classes=[str(c) for c in header["classes"]],
        samples=samples,
        expected_counts=header.get("expected_counts"),
        metadata=header.get("metadata"),
    )
    try:
        return manifest.validate()
    except ManifestError as exc:
        raise ManifestError(f"{path.name}: {exc}") from None


def write_manifest(manifest: DatasetManifest, path) -> None:
    manifest.validate()
    path = Path(path)
    header = {
        "name": manifest.name,
        "classes": manifest.classes,
        "expected_counts": manifest.expected_counts,
    }
    if manifest.metadata is not None:
        header["metadata"] = manifest.metadata
    lines = [_json_compact(header)]
    for s in manifest.samples:
        record = {"id": s.id, "split": s.split, "label": s.label,
                  "image_ref": s.image_ref}
        if s.image_meta is not None:
            record["image_meta"] = s.image_meta
        lines.append(_json_compact(record))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# embedding store


class EmbeddingStore:
    """Fixed-dimension map of sample id -> float32 embedding block.

    A block has shape (vectors_per_record, dim): image stores keep one
    vector per record, description stores keep one per description.
    Reads are safe from concurrent threads; writers must be serialized by
    the caller.
    """

    def __init__(self, dim: int, vectors_per_record: int = 1):
        if dim <= 0:
            raise StoreError(f"dim must be positive, got {dim}")
        if vectors_per_record <= 0:
            raise StoreError(
                f"vectors_per_record must be positive, got {vectors_per_record}"
            )
        self.dim = int(dim)
        self.vectors_per_record = int(vectors_per_record)
        self._entries: dict[str, np.ndarray] = {}

    def put(self, sample_id: str, values) -> None:
        if not sample_id:
            raise StoreError("sample id must be non-empty")
        arr = np.asarray(values, dtype=np.float32)
        if arr.ndim == 1:
            arr = arr[np.newaxis, :]
        expected = (self.vectors_per_record, self.dim)
        if arr.shape != expected:
            raise StoreError(
                f"dimension mismatch for {sample_id!r}: "
                f"got shape {arr.shape}, store expects {expected}"
            )
        if not np.all(np.isfinite(arr)):
            raise StoreError(f"non-finite values for {sample_id!r}")
        self._entries[sample_id] = np.ascontiguousarray(arr)

    def get(self, sample_id: str) -> Optional[np.ndarray]:
        """Return the (K, dim) block, or None when the id is absent."""
        return self._entries.get(sample_id)

    def vector(self, sample_id: str) -> Optional[np.ndarray]:
        """Single-vector view, valid only for K == 1 stores."""
        if self.vectors_per_record != 1:
            raise StoreError(
                f"vector() requires vectors_per_record == 1, "
                f"store has {self.vectors_per_record}"
            )
        block = self._entries.get(sample_id)
        return None if block is None else block[0]

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def ids(self) -> Iterator[str]:
        return iter(self._entries.keys())

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(self._entries.items())

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        if (self.dim, self.vectors_per_record) != (other.dim, other.vectors_per_record):
            return False
        if list(self._entries) != list(other._entries):
            return False
        return all(
            np.array_equal(block, other._entries[key])
            for key, block in self._entries.items()
        )


def write_store(store: EmbeddingStore, path) -> None:
    """Write a store in the canonical binary format (see module docstring)."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_STORE_HEADER.pack(
            STORE_MAGIC, STORE_VERSION, store.dim,
            store.vectors_per_record, len(store),
        ))
        for sample_id, block in store.items():
            id_bytes = sample_id.encode("utf-8")
            if len(id_bytes) > 0xFFFF:
                raise StoreError(f"id too long: {sample_id[:32]!r}...")
            fh.write(_ID_LEN.pack(len(id_bytes)))
            fh.write(id_bytes)
            fh.write(block.astype("<f4", copy=False).tobytes(order="C"))


def read_store(path) -> EmbeddingStore:
    """Read a canonical binary store; round-trips :func:`write_store` bit-exactly."""
    path = Path(path)
    buf = path.read_bytes()
    if len(buf) < _STORE_HEADER.size:
        raise StoreError(f"{path.name}: corrupt header (file too short)")
    magic, version, dim, k, count = _STORE_HEADER.unpack_from(buf, 0)
    if magic != STORE_MAGIC:
        raise StoreError(f"{path.name}: corrupt header (bad magic {magic!r})")
    if version != STORE_VERSION:
        raise StoreError(f"{path.name}: unsupported format version {version}")
    store = EmbeddingStore(dim=dim, vectors_per_record=k)
    offset = _STORE_HEADER.size
    block_bytes = 4 * k * dim
    for i in range(count):
        if offset + _ID_LEN.size > len(buf):
            raise StoreError(f"{path.name}: truncated record {i}")
        (id_len,) = _ID_LEN.unpack_from(buf, offset)
        offset += _ID_LEN.size
        if offset + id_len + block_bytes > len(buf):
            raise StoreError(f"{path.name}: truncated record {i}")
        sample_id = buf[offset:offset + id_len].decode("utf-8")
        offset += id_len
        block = np.frombuffer(
            buf, dtype="<f4", count=k * dim, offset=offset,
        ).reshape(k, dim)
        offset += block_bytes
        store.put(sample_id, block)
    if offset != len(buf):
        raise StoreError(f"{path.name}: {len(buf) - offset} trailing bytes")
    return store


# ---------------------------------------------------------------------------
# description cache


@dataclass(frozen=True)
class CacheEntry:
    """Cached descriptions for one sample plus fetch provenance."""

    sample_id: str
    texts: tuple[str, ...]
    raw_response: str = ""
    padded: bool = False
    prompt: str = ""
    model: str = ""
    created: str = ""

    def content_key(self) -> tuple:
        # Provenance timestamps are excluded: identical content is a no-op.
        return (self.sample_id, self.texts, self.raw_response, self.padded,
                self.prompt, self.model)


class DescriptionCache:
    """JSON-lines cache of per-sample description sets.

    Entries are appended on first put; a repeated put with identical
    content is a no-op.  With ``path=None`` the cache is memory-only.
    Reads need no lock (dict reads are atomic); puts are serialized
    through an internal lock, matching the single-writer contract.
    """

    def __init__(self, path=None, k: int = 10):
        if k < 1:
            raise CacheError(f"description count must be >= 1, got {k}")
        self.k = int(k)
        self.path = None if path is None else Path(path)
        self._entries: dict[str, CacheEntry] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        with self.path.open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CacheError(
                        f"{self.path.name}: line {lineno}: {exc.msg}"
                    ) from None
                entry = CacheEntry(
                    sample_id=str(obj["id"]),
                    texts=tuple(str(t) for t in obj["texts"]),
                    raw_response=str(obj.get("raw", "")),
                    padded=bool(obj.get("padded", False)),
                    prompt=str(obj.get("prompt", "")),
                    model=str(obj.get("model", "")),
                    created=str(obj.get("created", "")),
                )
                # Later lines win so a rewritten entry supersedes the old one.
                self._entries[entry.sample_id] = entry

    def get(self, sample_id: str) -> Optional[CacheEntry]:
        """Return the cached entry, or None when absent (absence is not an error)."""
        return self._entries.get(sample_id)

    def put(self, sample_id: str, texts: Sequence[str], *,
            raw_response: str = "", padded: bool = False,
            prompt: str = "", model: str = "",
            created: Optional[str] = None) -> bool:
        """Store one description set; returns False for an identical repeat."""
        texts = tuple(texts)
        if len(texts) != self.k:
            raise CacheError(
                f"wrong description count for {sample_id!r}: "
                f"got {len(texts)}, expected {self.k}"
            )
        if any(not t or not t.strip() for t in texts):
            raise CacheError(f"empty description for {sample_id!r}")
        entry = CacheEntry(
            sample_id=sample_id, texts=texts, raw_response=raw_response,
            padded=padded, prompt=prompt, model=model,
            created=created if created is not None else _utc_now(),
        )
        with self._lock:
            existing = self._entries.get(sample_id)
            if existing is not None and existing.content_key() == entry.content_key():
                return False
            self._entries[sample_id] = entry
            if self.path is not None:
                record = {
                    "id": entry.sample_id, "texts": list(entry.texts),
                    "raw": entry.raw_response, "padded": entry.padded,
                    "prompt": entry.prompt, "model": entry.model,
                    "created": entry.created,
                }
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(_json_compact(record) + "\n")
        return True

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def ids(self) -> Iterator[str]:
        return iter(self._entries.keys())


def _utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
