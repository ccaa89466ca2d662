"""Fetching and parsing per-image semantic descriptions.

Each image is described by prompting a multimodal model once; the free-
text response is parsed into exactly K descriptions (default 10).  Real
model output is messy, so the parse contract is total: enumerated lines
first, sentence splitting as fallback, truncate past K, pad (and flag)
below K.  Fetches consult the cache first and tolerate per-sample
failures so a partial run can be resumed.
"""

from __future__ import annotations

import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .client import SidecarError
from .datasets import DescriptionCache, SampleRecord

DEFAULT_PROMPT_TEMPLATE = "Give 10 semantic descriptions of the image"
DEFAULT_DESCRIPTION_COUNT = 10


class ParseError(ValueError):
    """Raised when no descriptions can be extracted from a response."""


class DescriptionServiceError(RuntimeError):
    """Raised when the description service stays unreachable after retries."""


@dataclass(frozen=True)
class PromptSpec:
    """The prompt sent per image and the description count it requests."""

    template: str = DEFAULT_PROMPT_TEMPLATE
    k: int = DEFAULT_DESCRIPTION_COUNT

    def __post_init__(self):
        if not self.template or not self.template.strip():
            raise ValueError("prompt template must be non-empty")
        if self.k < 1:
            raise ValueError(f"description count must be >= 1, got {self.k}")
        if self.template == DEFAULT_PROMPT_TEMPLATE and self.k != 10:
            raise ValueError(
                f"default prompt asks for 10 descriptions, k={self.k} disagrees"
            )


@dataclass(frozen=True)
class DescriptionSet:
    """Exactly K parsed descriptions for one sample."""

    sample_id: str
    texts: tuple[str, ...]
    raw_response: str = ""
    padded: bool = False

    def __post_init__(self):
        object.__setattr__(self, "texts", tuple(self.texts))
        if not self.texts:
            raise ValueError(f"sample {self.sample_id!r}: empty description set")
        if any(not t or not t.strip() for t in self.texts):
            raise ValueError(
                f"sample {self.sample_id!r}: blank description in set"
            )

    @property
    def count(self) -> int:
        return len(self.texts)


_ENUMERATOR = re.compile(r"^\s*(?:\d{1,3}\s*[.)]|[-•*])\s*(.*)$")
_SENTENCE_SPLIT = re.compile(r"[.!?]+")
_ENUM_JUNK = re.compile(r"^[\s\d.)\]\-•*]*$")


def parse_response(raw: str, k: int) -> tuple[list[str], bool]:
    """Extract exactly ``k`` descriptions from a free-text model response.

    Stages: (1) lines with a leading enumerator ("1.", "1)", "-", "•")
    each start an item, continuation lines are appended to the open item;
    (2) if that yields fewer than ``k`` items, sentence splitting on
    ".", "!", "?" is tried and kept when it finds more; (3) more than
    ``k`` items are truncated to the first ``k``; (4) fewer are padded by
    repeating the last item, with the returned flag set.

    Returns (texts, padded).  Raises ParseError when nothing at all can
    be extracted.
    """
    if not raw or not raw.strip():
        raise ParseError("empty response")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")

    items: list[str] = []
    for line in raw.splitlines():
        match = _ENUMERATOR.match(line)
        if match:
            items.append(match.group(1).strip())
        elif items and line.strip():
            items[-1] = f"{items[-1]} {line.strip()}".strip()
    items = [t for t in items if t]

    if len(items) < k:
        sentences = [
            s.strip() for s in _SENTENCE_SPLIT.split(raw)
            if s.strip() and not _ENUM_JUNK.match(s)
        ]
        if len(sentences) > len(items):
            items = sentences

    if not items:
        raise ParseError("no extractable descriptions in response")

    padded = False
    if len(items) > k:
        items = items[:k]
    elif len(items) < k:
        items = items + [items[-1]] * (k - len(items))
        padded = True
    return items, padded


def request_descriptions(sample: SampleRecord, prompt: PromptSpec, client, *,
                         cache: Optional[DescriptionCache] = None,
                         max_retries: int = 3, backoff: float = 0.5,
                         sleep=time.sleep) -> DescriptionSet:
    """Descriptions for one sample, from cache when present.

    A cache hit makes no service call.  Otherwise the service is called
    with bounded exponential backoff on transient errors; when retries
    are exhausted a DescriptionServiceError is raised for this sample
    only.  Fresh results are parsed, cached with provenance, and
    returned.
    """
    if cache is not None:
        entry = cache.get(sample.id)
        if entry is not None:
            return DescriptionSet(
                sample_id=sample.id, texts=entry.texts,
                raw_response=entry.raw_response, padded=entry.padded,
            )

    last_error: Optional[Exception] = None
    result = None
    for attempt in range(max_retries + 1):
        if attempt:
            sleep(backoff * 2 ** (attempt - 1))
        try:
            result = client.describe(sample.image_ref, prompt.template)
            break
        except (SidecarError, ConnectionError, TimeoutError, OSError) as exc:
            last_error = exc
    if result is None:
        raise DescriptionServiceError(
            f"sample {sample.id!r}: service unreachable after "
            f"{max_retries + 1} attempts ({last_error})"
        )

    raw = result.text if hasattr(result, "text") else str(result)
    texts, padded = parse_response(raw, prompt.k)
    descriptions = DescriptionSet(
        sample_id=sample.id, texts=tuple(texts),
        raw_response=raw, padded=padded,
    )
    if cache is not None:
        cache.put(
            sample.id, descriptions.texts,
            raw_response=raw, padded=padded, prompt=prompt.template,
            model=getattr(result, "model_name", "") or
                  getattr(client, "model_name", ""),
        )
    return descriptions


@dataclass
class DescribeReport:
    """Outcome of a dataset description pass."""

    fetched: list[str] = field(default_factory=list)
    cached: list[str] = field(default_factory=list)
    failed: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failed

    def summary(self) -> str:
        return (f"{len(self.fetched)} fetched, {len(self.cached)} cached, "
                f"{len(self.failed)} failed")


def describe_samples(samples: Sequence[SampleRecord], prompt: PromptSpec,
                     client, cache: DescriptionCache, *,
                     concurrency: int = 4, max_retries: int = 3,
                     backoff: float = 0.5, sleep=time.sleep) -> DescribeReport:
    """Populate the cache for every sample, with bounded concurrency.

    Failed samples are recorded in the report instead of aborting the
    run; the cache's own lock serializes writes.
    """
    if concurrency < 1:
        raise ValueError(f"concurrency must be >= 1, got {concurrency}")
    report = DescribeReport()

    def fetch(sample: SampleRecord) -> tuple[str, str]:
        if sample.id in cache:
            return sample.id, "cached"
        try:
            request_descriptions(
                sample, prompt, client, cache=cache,
                max_retries=max_retries, backoff=backoff, sleep=sleep)
            return sample.id, "fetched"
        except (DescriptionServiceError, ParseError) as exc:
            return sample.id, f"failed: {exc}"

    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        for sample_id, status in pool.map(fetch, samples):
            if status == "cached":
                report.cached.append(sample_id)
            elif status == "fetched":
                report.fetched.append(sample_id)
            else:
                report.failed[sample_id] = status[len("failed: "):]
    return report
