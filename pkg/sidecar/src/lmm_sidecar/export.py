"""Offline exporter: manifest in, canonical embedding store files out.

Bypasses HTTP entirely so bulk extraction is not bottlenecked on JSON;
the emitted files are byte-identical to what the gateway would have
memoized through the wire.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .backends import EncoderBackend
from .formats import (StoreWriter, read_cached_descriptions,
                      read_manifest_samples)


@dataclass
class ExportResult:
    images_written: int
    texts_written: int
    skipped: list[str]


def export_embeddings(manifest_path, encoder: EncoderBackend, *,
                      images_out=None, texts_out=None,
                      desc_cache: Optional[str] = None,
                      image_root: Optional[str] = None) -> ExportResult:
    """Embed every manifest sample and write store files.

    ``images_out`` embeds each sample's image_ref (resolved against
    ``image_root`` when relative); ``texts_out`` embeds the cached
    descriptions from ``desc_cache``.  Samples whose image file or cache
    entry is missing are skipped and reported, keeping the export
    resumable rather than all-or-nothing.
    """
    if images_out is None and texts_out is None:
        raise ValueError("nothing to export: pass images_out and/or texts_out")
    if texts_out is not None and desc_cache is None:
        raise ValueError("texts_out requires desc_cache")

    samples = read_manifest_samples(manifest_path)
    skipped: list[str] = []
    images_written = texts_written = 0

    if images_out is not None:
        root = Path(image_root) if image_root else None
        with StoreWriter(images_out, dim=encoder.dim) as writer:
            for sample in samples:
                path = Path(sample.image_ref)
                if root is not None and not path.is_absolute():
                    path = root / path
                if not path.is_file():
                    skipped.append(sample.id)
                    continue
                writer.add(sample.id, encoder.embed_image(path.read_bytes()))
                images_written += 1

    if texts_out is not None:
        cached = read_cached_descriptions(desc_cache)
        counts = {len(texts) for texts in cached.values()}
        if len(counts) > 1:
            raise ValueError(f"cache has mixed description counts: {counts}")
        k = counts.pop() if counts else 0
        if k == 0:
            raise ValueError("description cache is empty")
        with StoreWriter(texts_out, dim=encoder.dim,
                         vectors_per_record=k) as writer:
            for sample in samples:
                texts = cached.get(sample.id)
                if texts is None:
                    skipped.append(sample.id)
                    continue
                writer.add(sample.id, encoder.embed_texts(texts))
                texts_written += 1

    return ExportResult(images_written=images_written,
                        texts_written=texts_written,
                        skipped=sorted(set(skipped)))
