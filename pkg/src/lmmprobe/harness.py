"""Experiment orchestration: ablations, traces, reports, synthetic data.

An ablation trains one probe per fusion strategy from identical data,
seed, and config, so accuracy differences are attributable to the
strategy alone.  Reports are written both machine-readable (JSON lines)
and as an aligned text table, and carry enough provenance (input file
checksums, config echo, seed) that replaying a report reproduces the
accuracies and checkpoint bytes exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from . import __version__
from .datasets import (DatasetManifest, DescriptionCache, EmbeddingStore,
                       SampleRecord, load_manifest, read_store, write_manifest,
                       write_store)
from .fusion import FusionStrategy, fuse_matrix, pool_descriptions
from .probe import (TrainConfig, TrainTrace, accuracy, format_percent,
                    save_checkpoint, train)

REPORT_JSONL = "report.jsonl"
REPORT_TXT = "report.txt"
CURVES_CSV = "curves.csv"

# Published full-scale reference accuracies (percent) on UCF-101 middle
# frames with CLIP ViT-L-14 features, 500 epochs at lr 1e-3.  These need
# GPU inference over the real dataset, so they are regression targets for
# sidecar-backed runs, not assertions the desk-scale suite can check.
UCF101_REFERENCE_ACCURACY = {
    "image": 89.981,
    "text": 80.333,
    "concat": 91.753,
    "mean": 91.277,
}


class PartialDataError(RuntimeError):
    """Samples lack embeddings and the run was not told to tolerate that."""


@dataclass
class RunSpec:
    """Declarative description of one ablation run."""

    manifest: Path
    image_store: Optional[Path] = None
    text_store: Optional[Path] = None
    strategies: list[FusionStrategy] = field(
        default_factory=lambda: list(FusionStrategy))
    train_config: TrainConfig = field(default_factory=TrainConfig)
    out_dir: Path = Path("runs")
    normalize: bool = False
    allow_partial: bool = False
    desc_cache: Optional[Path] = None

    def __post_init__(self):
        self.manifest = Path(self.manifest)
        self.image_store = None if self.image_store is None else Path(self.image_store)
        self.text_store = None if self.text_store is None else Path(self.text_store)
        self.desc_cache = None if self.desc_cache is None else Path(self.desc_cache)
        self.out_dir = Path(self.out_dir)
        self.strategies = [FusionStrategy.parse(s) for s in self.strategies]
        if not self.strategies:
            raise ValueError("at least one fusion strategy is required")
        if len(set(self.strategies)) != len(self.strategies):
            raise ValueError("duplicate fusion strategies in run spec")

    def needs_image(self) -> bool:
        return any(s.needs_image for s in self.strategies)

    def needs_text(self) -> bool:
        return any(s.needs_text for s in self.strategies)

    def to_dict(self) -> dict:
        return {
            "manifest": str(self.manifest),
            "image_store": None if self.image_store is None else str(self.image_store),
            "text_store": None if self.text_store is None else str(self.text_store),
            "strategies": [s.value for s in self.strategies],
            "train_config": self.train_config.to_dict(),
            "normalize": self.normalize,
            "allow_partial": self.allow_partial,
            "desc_cache": None if self.desc_cache is None else str(self.desc_cache),
        }

    @classmethod
    def from_dict(cls, data: Mapping, out_dir=None) -> "RunSpec":
        return cls(
            manifest=data["manifest"],
            image_store=data.get("image_store"),
            text_store=data.get("text_store"),
            strategies=list(data.get("strategies", [s.value for s in FusionStrategy])),
            train_config=TrainConfig.from_dict(data.get("train_config", {})),
            out_dir=out_dir if out_dir is not None else data.get("out_dir", "runs"),
            normalize=bool(data.get("normalize", False)),
            allow_partial=bool(data.get("allow_partial", False)),
            desc_cache=data.get("desc_cache"),
        )


@dataclass
class StrategyResult:
    strategy: FusionStrategy
    test_accuracy: float           # fraction in [0, 1]
    accuracy_percent: str          # half-even, 3 decimals
    trace_file: str                # relative to the run directory
    checkpoint_file: str
    final_train_loss: float

    def to_dict(self) -> dict:
        return {
            "type": "strategy",
            "strategy": self.strategy.value,
            "test_accuracy": self.test_accuracy,
            "accuracy_percent": self.accuracy_percent,
            "trace_file": self.trace_file,
            "checkpoint_file": self.checkpoint_file,
            "final_train_loss": self.final_train_loss,
        }


@dataclass
class RunReport:
    config: dict
    provenance: dict
    results: list[StrategyResult]
    dropped_samples: list[str] = field(default_factory=list)

    def result_for(self, strategy) -> StrategyResult:
        strategy = FusionStrategy.parse(strategy)
        for result in self.results:
            if result.strategy is strategy:
                return result
        raise KeyError(f"no result for strategy {strategy.value!r}")

    def to_text_table(self) -> str:
        rows = [(r.strategy.value, r.accuracy_percent) for r in self.results]
        method_width = max(len("Method"), *(len(m) for m, _ in rows))
        acc_width = max(len("Test Accuracy"), *(len(a) for _, a in rows))
        lines = [f"{'Method'.ljust(method_width)}  {'Test Accuracy'.rjust(acc_width)}"]
        for method, acc in rows:
            lines.append(f"{method.ljust(method_width)}  {acc.rjust(acc_width)}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> None:
        out_dir = Path(out_dir)
        lines = [json.dumps({
            "type": "run",
            "config": self.config,
            "provenance": self.provenance,
            "dropped_samples": self.dropped_samples,
        }, sort_keys=True, ensure_ascii=False)]
        lines += [json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False)
                  for r in self.results]
        (out_dir / REPORT_JSONL).write_text("\n".join(lines) + "\n", encoding="utf-8")
        (out_dir / REPORT_TXT).write_text(self.to_text_table(), encoding="utf-8")

    @classmethod
    def load(cls, run_dir) -> "RunReport":
        path = Path(run_dir) / REPORT_JSONL
        run_obj = None
        results = []
        for line in path.read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            obj = json.loads(line)
            if obj.get("type") == "run":
                run_obj = obj
            elif obj.get("type") == "strategy":
                results.append(StrategyResult(
                    strategy=FusionStrategy.parse(obj["strategy"]),
                    test_accuracy=float(obj["test_accuracy"]),
                    accuracy_percent=str(obj["accuracy_percent"]),
                    trace_file=str(obj["trace_file"]),
                    checkpoint_file=str(obj["checkpoint_file"]),
                    final_train_loss=float(obj["final_train_loss"]),
                ))
        if run_obj is None:
            raise ValueError(f"{path}: missing run record")
        return cls(
            config=run_obj["config"],
            provenance=run_obj["provenance"],
            results=results,
            dropped_samples=list(run_obj.get("dropped_samples", [])),
        )


# ---------------------------------------------------------------------------
# feature assembly


def _l2_normalize_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return matrix / norms


@dataclass
class _SplitFeatures:
    image: Optional[np.ndarray]
    text: Optional[np.ndarray]
    labels: np.ndarray


def _collect_features(manifest: DatasetManifest, split: str,
                      image_store: Optional[EmbeddingStore],
                      text_store: Optional[EmbeddingStore],
                      need_image: bool, need_text: bool,
                      normalize: bool,
                      dropped: list[str]) -> _SplitFeatures:
    samples = manifest.split_samples(split)
    usable: list[SampleRecord] = []
    for sample in samples:
        if need_image and (image_store is None or sample.id not in image_store):
            dropped.append(sample.id)
            continue
        if need_text and (text_store is None or sample.id not in text_store):
            dropped.append(sample.id)
            continue
        usable.append(sample)
    if not usable:
        raise PartialDataError(f"no usable samples in split {split!r}")

    image = None
    if need_image:
        image = np.stack([
            image_store.vector(s.id) for s in usable
        ]).astype(np.float64)
        if normalize:
            image = _l2_normalize_rows(image)
    text = None
    if need_text:
        text = np.stack([
            pool_descriptions(text_store.get(s.id)) for s in usable
        ])
        if normalize:
            text = _l2_normalize_rows(text)
    return _SplitFeatures(image=image, text=text,
                          labels=manifest.label_indices(usable))


def _sha256(path: Optional[Path]) -> Optional[str]:
    if path is None or not Path(path).exists():
        return None
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _cache_provenance(path: Optional[Path]) -> dict:
    if path is None or not Path(path).exists():
        return {}
    cache = DescriptionCache(path)
    prompts = sorted({cache.get(i).prompt for i in cache.ids()})
    models = sorted({cache.get(i).model for i in cache.ids()})
    return {
        "prompt": prompts[0] if len(prompts) == 1 else prompts,
        "description_model": models[0] if len(models) == 1 else models,
        "entries": len(cache),
    }


# ---------------------------------------------------------------------------
# ablation


def run_ablation(spec: RunSpec) -> RunReport:
    """Train and evaluate one probe per strategy; write the run directory.

    All strategies share the manifest, stores, seed, and training
    config.  Missing per-sample embeddings abort the run unless
    ``allow_partial`` is set, in which case the affected samples are
    dropped and listed in the report.
    """
    for path in (spec.manifest, spec.image_store, spec.text_store):
        if path is not None and not Path(path).exists():
            raise FileNotFoundError(f"run input does not exist: {path}")
    if spec.needs_image() and spec.image_store is None:
        raise ValueError("run strategies need an image store, none given")
    if spec.needs_text() and spec.text_store is None:
        raise ValueError("run strategies need a text store, none given")

    manifest = load_manifest(spec.manifest)
    image_store = read_store(spec.image_store) if spec.image_store else None
    text_store = read_store(spec.text_store) if spec.text_store else None
    if image_store is not None and text_store is not None \
            and image_store.dim != text_store.dim:
        raise ValueError(
            f"store dims disagree: image {image_store.dim}, text {text_store.dim}"
        )

    dropped: list[str] = []
    train_split = _collect_features(
        manifest, "train", image_store, text_store,
        spec.needs_image(), spec.needs_text(), spec.normalize, dropped)
    test_split = _collect_features(
        manifest, "test", image_store, text_store,
        spec.needs_image(), spec.needs_text(), spec.normalize, dropped)
    if dropped and not spec.allow_partial:
        raise PartialDataError(
            f"{len(dropped)} samples lack embeddings "
            f"(first: {dropped[:5]}); rerun with allow_partial to drop them"
        )

    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    results: list[StrategyResult] = []
    traces: dict[str, TrainTrace] = {}
    for strategy in spec.strategies:
        X_train = fuse_matrix(train_split.image, train_split.text, strategy)
        X_test = fuse_matrix(test_split.image, test_split.text, strategy)
        model, trace = train(
            X_train, train_split.labels, spec.train_config,
            eval_set=(X_test, test_split.labels),
            class_names=manifest.classes, strategy=strategy,
        )
        test_acc = accuracy(model, X_test, test_split.labels)

        trace_file = f"trace_{strategy.value}.csv"
        checkpoint_file = f"probe_{strategy.value}.ckpt"
        trace.to_csv(out_dir / trace_file)
        save_checkpoint(model, out_dir / checkpoint_file)
        traces[strategy.value] = trace
        results.append(StrategyResult(
            strategy=strategy,
            test_accuracy=test_acc,
            accuracy_percent=format_percent(test_acc),
            trace_file=trace_file,
            checkpoint_file=checkpoint_file,
            final_train_loss=float(trace.train_loss[-1]),
        ))

    emit_curves(traces, out_dir / CURVES_CSV)

    dim = image_store.dim if image_store is not None else text_store.dim
    provenance = {
        "tool_version": __version__,
        "dataset": manifest.name,
        "num_classes": len(manifest.classes),
        "embedding_dim": dim,
        "seed": spec.train_config.seed,
        "manifest_sha256": _sha256(spec.manifest),
        "image_store_sha256": _sha256(spec.image_store),
        "text_store_sha256": _sha256(spec.text_store),
        "desc_cache_sha256": _sha256(spec.desc_cache),
        **_cache_provenance(spec.desc_cache),
    }
    report = RunReport(
        config=spec.to_dict(),
        provenance=provenance,
        results=results,
        dropped_samples=sorted(set(dropped)),
    )
    report.write(out_dir)
    return report


def replay_report(run_dir, out_dir) -> tuple[RunReport, list[str]]:
    """Re-run a report's recorded config and diff the outcome.

    Returns the fresh report and a list of differences; an empty list
    means accuracies, checkpoints, traces, and curves reproduced
    bit-exactly.
    """
    run_dir = Path(run_dir)
    original = RunReport.load(run_dir)
    spec = RunSpec.from_dict(original.config, out_dir=out_dir)
    fresh = run_ablation(spec)

    diffs: list[str] = []
    for old in original.results:
        try:
            new = fresh.result_for(old.strategy)
        except KeyError:
            diffs.append(f"{old.strategy.value}: missing from replay")
            continue
        if new.accuracy_percent != old.accuracy_percent or \
                new.test_accuracy != old.test_accuracy:
            diffs.append(
                f"{old.strategy.value}: accuracy {old.accuracy_percent} "
                f"-> {new.accuracy_percent}"
            )
        for label, rel in (("checkpoint", old.checkpoint_file),
                           ("trace", old.trace_file)):
            before = (run_dir / rel).read_bytes()
            after = (Path(out_dir) / rel).read_bytes()
            if before != after:
                diffs.append(f"{old.strategy.value}: {label} bytes differ")
    before = (run_dir / CURVES_CSV).read_bytes()
    after = (Path(out_dir) / CURVES_CSV).read_bytes()
    if before != after:
        diffs.append("curves bytes differ")
    return fresh, diffs


def emit_curves(traces: Mapping[str, TrainTrace], path) -> None:
    """Merge per-strategy accuracy curves into one CSV for plotting.

    Columns: epoch, then one test-accuracy column per strategy.  Values
    echo the traces exactly (round-tripping float format).  Traces must
    agree on epoch count.
    """
    if not traces:
        raise ValueError("no traces to merge")
    names = list(traces)
    lengths = {name: len(traces[name]) for name in names}
    if len(set(lengths.values())) != 1:
        raise ValueError(f"mismatched epoch counts: {lengths}")
    first = traces[names[0]]
    lines = ["epoch," + ",".join(names)]
    for row, epoch in enumerate(first.epoch):
        cells = [str(int(epoch))]
        cells += [repr(float(traces[name].test_accuracy[row])) for name in names]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings for a desk-scale synthetic dataset.

    Image and description embeddings are class-conditioned Gaussians:
    ``signal * class_prototype + noise * standard_normal``.  Setting a
    channel's signal to zero makes it pure noise, which is how channel
    ablations are exercised without any real encoder.
    """

    classes: int = 2
    dim: int = 8
    train_samples: int = 100
    test_samples: int = 100
    descriptions_per_sample: int = 10
    image_signal: float = 1.0
    text_signal: float = 1.0
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError(f"classes must be >= 2, got {self.classes}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.train_samples < self.classes or self.test_samples < 1:
            raise ValueError("too few samples for the class count")
        if self.descriptions_per_sample < 1:
            raise ValueError("descriptions_per_sample must be >= 1")
        if self.noise < 0 or self.image_signal < 0 or self.text_signal < 0:
            raise ValueError("signal and noise scales must be >= 0")


@dataclass(frozen=True)
class SynthPaths:
    manifest: Path
    image_store: Path
    text_store: Path


def synth_dataset(config: SynthConfig, out_dir) -> SynthPaths:
    """Write a deterministic synthetic manifest plus embedding stores.

    The same config always produces byte-identical files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)

    image_protos = rng.standard_normal((config.classes, config.dim))
    text_protos = rng.standard_normal((config.classes, config.dim))

    class_names = [f"class-{c:02d}" for c in range(config.classes)]
    image_store = EmbeddingStore(config.dim, 1)
    text_store = EmbeddingStore(config.dim, config.descriptions_per_sample)
    samples: list[SampleRecord] = []

    for split, count in (("train", config.train_samples),
                         ("test", config.test_samples)):
        for i in range(count):
            label_idx = i % config.classes
            sample_id = f"synth-{split}-{i:05d}"
            image = (config.image_signal * image_protos[label_idx]
                     + config.noise * rng.standard_normal(config.dim))
            texts = (config.text_signal * text_protos[label_idx]
                     + config.noise * rng.standard_normal(
                         (config.descriptions_per_sample, config.dim)))
            image_store.put(sample_id, image.astype(np.float32))
            text_store.put(sample_id, texts.astype(np.float32))
            samples.append(SampleRecord(
                id=sample_id, split=split, label=class_names[label_idx],
                image_ref=f"synth://{sample_id}",
            ))

    manifest = DatasetManifest(
        name=f"synth-c{config.classes}-d{config.dim}-s{config.seed}",
        classes=class_names,
        samples=samples,
        expected_counts={"train": config.train_samples,
                         "test": config.test_samples},
    )
    paths = SynthPaths(
        manifest=out_dir / "manifest.jsonl",
        image_store=out_dir / "images.femb",
        text_store=out_dir / "texts.femb",
    )
    write_manifest(manifest, paths.manifest)
    write_store(image_store, paths.image_store)
    write_store(text_store, paths.text_store)
    return paths
