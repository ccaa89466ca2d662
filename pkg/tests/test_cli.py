"""End-to-end CLI coverage through click's runner."""

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
from click.testing import CliRunner

from lmmprobe import DescriptionCache, read_store
from lmmprobe.cli import main


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli-synth")
    result = CliRunner().invoke(main, [
        "--seed", "5", "--out", str(out), "synth",
        "--classes", "3", "--dim", "6", "--train-samples", "60",
        "--test-samples", "30", "--k", "4",
    ])
    assert result.exit_code == 0, result.output
    return out


class TestSynthCommand:
    def test_writes_three_files(self, synth_dir):
        assert (synth_dir / "manifest.jsonl").exists()
        assert (synth_dir / "images.femb").exists()
        assert (synth_dir / "texts.femb").exists()
        store = read_store(synth_dir / "images.femb")
        assert len(store) == 90


class TestAblateAndReport:
    def test_ablate_then_report_then_replay(self, runner, synth_dir, tmp_path):
        run_dir = tmp_path / "run"
        result = runner.invoke(main, [
            "--out", str(run_dir), "ablate",
            "--manifest", str(synth_dir / "manifest.jsonl"),
            "--embeddings", str(synth_dir / "images.femb"),
            "--desc-embeddings", str(synth_dir / "texts.femb"),
            "--strategies", "image,concat",
            "--epochs", "20",
        ])
        assert result.exit_code == 0, result.output
        assert "Method" in result.output
        assert "concat" in result.output

        shown = runner.invoke(main, ["report", "--run", str(run_dir)])
        assert shown.exit_code == 0
        assert "concat" in shown.output

        replayed = runner.invoke(main, [
            "--out", str(tmp_path / "replay"),
            "report", "--run", str(run_dir), "--replay",
        ])
        assert replayed.exit_code == 0, replayed.output
        assert "bit-exact" in replayed.output

    def test_ablate_from_config_file(self, runner, synth_dir, tmp_path):
        config = {
            "manifest": str(synth_dir / "manifest.jsonl"),
            "image_store": str(synth_dir / "images.femb"),
            "text_store": str(synth_dir / "texts.femb"),
            "strategies": ["mean"],
            "train_config": {"epochs": 10, "seed": 3},
        }
        config_path = tmp_path / "run.json"
        config_path.write_text(json.dumps(config), encoding="utf-8")
        result = runner.invoke(main, [
            "--config", str(config_path), "--out", str(tmp_path / "run"),
            "ablate",
        ])
        assert result.exit_code == 0, result.output
        assert "mean" in result.output

    def test_seed_flag_overrides(self, runner, synth_dir, tmp_path):
        args = [
            "ablate",
            "--manifest", str(synth_dir / "manifest.jsonl"),
            "--embeddings", str(synth_dir / "images.femb"),
            "--strategies", "image", "--epochs", "5",
        ]
        r1 = runner.invoke(main, ["--seed", "1", "--out",
                                  str(tmp_path / "a")] + args)
        r2 = runner.invoke(main, ["--seed", "1", "--out",
                                  str(tmp_path / "b")] + args)
        r3 = runner.invoke(main, ["--seed", "2", "--out",
                                  str(tmp_path / "c")] + args)
        assert r1.exit_code == r2.exit_code == r3.exit_code == 0
        ckpt = "probe_image.ckpt"
        assert (tmp_path / "a" / ckpt).read_bytes() == \
               (tmp_path / "b" / ckpt).read_bytes()
        assert (tmp_path / "a" / ckpt).read_bytes() != \
               (tmp_path / "c" / ckpt).read_bytes()


class TestTrainCommand:
    def test_single_strategy_training(self, runner, synth_dir, tmp_path):
        result = runner.invoke(main, [
            "--out", str(tmp_path / "train"), "train",
            "--manifest", str(synth_dir / "manifest.jsonl"),
            "--embeddings", str(synth_dir / "images.femb"),
            "--strategy", "image", "--epochs", "15",
        ])
        assert result.exit_code == 0, result.output
        assert "test accuracy" in result.output
        assert (tmp_path / "train" / "probe_image.ckpt").exists()


class TestEmbedCommand:
    def test_file_adapter_revalidates_store(self, runner, synth_dir, tmp_path):
        out_path = tmp_path / "copy.femb"
        result = runner.invoke(main, ["embed",
            "--manifest", str(synth_dir / "manifest.jsonl"),
            "--adapter", "file", "--modality", "image",
            "--profile", "custom",  # unknown preset falls back to store dim?
            "--source", str(synth_dir / "images.femb"),
            "--out", str(out_path),
        ])
        # Unknown profile must fail loudly, not guess.
        assert result.exit_code != 0

    def test_file_adapter_round_trip(self, runner, synth_dir, tmp_path):
        out_path = tmp_path / "copy.femb"
        result = runner.invoke(main, ["embed",
            "--manifest", str(synth_dir / "manifest.jsonl"),
            "--adapter", "file", "--modality", "image",
            "--profile", "vit-l-14",
            "--source", str(synth_dir / "images.femb"),
            "--out", str(out_path),
        ])
        # Synth stores are 6-d, the vit-l-14 profile demands 768: hard error.
        assert result.exit_code != 0

    def test_file_adapter_with_matching_profile(self, runner, tmp_path):
        # Build a 768-d store so the default profile matches.
        from lmmprobe import (DatasetManifest, EmbeddingStore, SampleRecord,
                              write_manifest, write_store)
        gen = np.random.default_rng(0)
        store = EmbeddingStore(dim=768)
        samples = []
        for i in range(4):
            store.put(f"s{i}", gen.normal(size=768).astype(np.float32))
            samples.append(SampleRecord(f"s{i}", "train", "a"))
        manifest = DatasetManifest("m", ["a"], samples)
        write_manifest(manifest, tmp_path / "m.jsonl")
        write_store(store, tmp_path / "src.femb")

        result = CliRunner().invoke(main, ["embed",
            "--manifest", str(tmp_path / "m.jsonl"),
            "--adapter", "file", "--modality", "image",
            "--source", str(tmp_path / "src.femb"),
            "--out", str(tmp_path / "out.femb"),
        ])
        assert result.exit_code == 0, result.output
        assert read_store(tmp_path / "out.femb") == store


class FakeSidecarHandler(BaseHTTPRequestHandler):
    """Just enough sidecar for the describe CLI path."""

    response_text = "\n".join(f"{i}. canned description {i}"
                              for i in range(1, 11))

    def log_message(self, *args):
        pass

    def _send(self, payload, status=200):
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path == "/v1/profile":
            self._send({"model_name": "fake-encoder", "dim": 768})
        else:
            self._send({"error": {"code": "not-found", "message": "?"}}, 404)

    def do_POST(self):
        if self.path == "/v1/describe":
            self._send({"text": self.response_text,
                        "metadata": {"model": "fake-lmm", "temperature": 0.0}})
        else:
            self._send({"error": {"code": "not-found", "message": "?"}}, 404)


@pytest.fixture
def fake_sidecar():
    server = HTTPServer(("127.0.0.1", 0), FakeSidecarHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


class TestDescribeCommand:
    def test_populates_cache_over_http(self, runner, synth_dir, tmp_path,
                                       fake_sidecar):
        cache_path = tmp_path / "descs.jsonl"
        result = runner.invoke(main, ["describe",
            "--manifest", str(synth_dir / "manifest.jsonl"),
            "--desc-cache", str(cache_path),
            "--sidecar-url", fake_sidecar,
            "--split", "test",
        ])
        assert result.exit_code == 0, result.output
        assert "30 fetched" in result.output
        cache = DescriptionCache(cache_path)
        assert len(cache) == 30
        entry = cache.get(next(iter(cache.ids())))
        assert entry.texts[0] == "canned description 1"
        assert entry.model == "fake-lmm"
