"""Shared fixtures and stub services."""

from __future__ import annotations

import numpy as np
import pytest

from lmmprobe import DescribeResult, SidecarError


class StubDescribeClient:
    """Canned describe() responses with a call counter."""

    def __init__(self, response: str, model_name: str = "stub-lmm",
                 fail_times: int = 0):
        self.response = response
        self.model_name = model_name
        self.fail_times = fail_times
        self.calls = 0

    def describe(self, image_ref, prompt):
        self.calls += 1
        if self.calls <= self.fail_times:
            raise SidecarError("stub service down")
        return DescribeResult(text=self.response, model_name=self.model_name,
                              params={"temperature": 0.0})


class StubEmbedClient:
    """embed_image / embed_texts backed by fixed arrays, with counters."""

    def __init__(self, image_vectors: dict, text_matrix_fn, model_name="stub-clip"):
        self.image_vectors = image_vectors
        self.text_matrix_fn = text_matrix_fn
        self.model_name = model_name
        self.image_calls = 0
        self.text_calls = 0

    def embed_image(self, image_ref=None, image_b64=None):
        self.image_calls += 1
        return self.image_vectors[image_ref]

    def embed_texts(self, texts):
        self.text_calls += 1
        return self.text_matrix_fn(texts)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_runtest_logreport(report):
    """One visible PASS/FAIL line per acceptance criterion."""
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    outcome = "PASS" if report.passed else "FAIL"
    name = report.nodeid.split("::")[-1]
    print(f"[{outcome}] {name}")
