"""Command-line entry points.

Subcommands: describe (populate the description cache), embed (write an
embedding store), train (single strategy), ablate (strategy comparison),
report (render or replay a run), synth (generate synthetic data).
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .client import SidecarClient
from .datasets import (DescriptionCache, load_manifest, read_store,
                       write_store)
from .descriptions import (DEFAULT_PROMPT_TEMPLATE, DescriptionSet,
                           PromptSpec, describe_samples)
from .fusion import FusionStrategy
from .gateway import EncoderGateway, RemoteAdapter, StoreAdapter, profile_pair
from .harness import (RunSpec, SynthConfig, replay_report, run_ablation,
                      synth_dataset)
from .probe import TrainConfig


@click.group()
@click.option("--seed", type=int, default=None,
              help="Override the training seed for any subcommand.")
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="JSON run file mirroring an ablation spec.")
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Output directory.")
@click.pass_context
def main(ctx, seed, config_path, out_dir):
    """Fused-embedding linear-probe experiment toolkit."""
    ctx.ensure_object(dict)
    ctx.obj["seed"] = seed
    ctx.obj["config_path"] = config_path
    ctx.obj["out_dir"] = out_dir


def _out_dir(ctx, fallback: str) -> Path:
    out = ctx.obj.get("out_dir")
    return Path(out) if out else Path(fallback)


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--desc-cache", required=True, type=click.Path())
@click.option("--sidecar-url", required=True)
@click.option("--prompt", default=DEFAULT_PROMPT_TEMPLATE, show_default=True)
@click.option("--k", default=10, show_default=True,
              help="Descriptions per image.")
@click.option("--concurrency", default=4, show_default=True)
@click.option("--split", default=None, type=click.Choice(["train", "test"]),
              help="Limit to one split (default: all samples).")
def describe(manifest, desc_cache, sidecar_url, prompt, k, concurrency, split):
    """Fetch per-image descriptions into the cache."""
    mani = load_manifest(manifest)
    samples = mani.split_samples(split) if split else mani.samples
    cache = DescriptionCache(desc_cache, k=k)
    client = SidecarClient(sidecar_url)
    spec = PromptSpec(template=prompt, k=k)
    report = describe_samples(samples, spec, client, cache,
                              concurrency=concurrency)
    click.echo(f"describe: {report.summary()}")
    for sample_id, reason in sorted(report.failed.items()):
        click.echo(f"  failed {sample_id}: {reason}", err=True)
    if not report.ok:
        sys.exit(1)


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--adapter", "adapter_kind", required=True,
              type=click.Choice(["file", "remote"]))
@click.option("--modality", default="image", show_default=True,
              type=click.Choice(["image", "text"]))
@click.option("--profile", "profile_name", default="vit-l-14", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--source", type=click.Path(exists=True), default=None,
              help="Existing store backing the file adapter.")
@click.option("--desc-cache", type=click.Path(exists=True), default=None,
              help="Description cache (required for text modality).")
@click.option("--sidecar-url", default=None,
              help="Sidecar base URL (required for the remote adapter).")
def embed(manifest, adapter_kind, modality, profile_name, out_path, source,
          desc_cache, sidecar_url):
    """Embed one modality for every sample and write a store file."""
    mani = load_manifest(manifest)
    image_profile, text_profile = profile_pair(profile_name)

    if adapter_kind == "file":
        if source is None:
            raise click.UsageError("--source is required with --adapter file")
        store = read_store(source)
        adapter = (StoreAdapter(image_store=store) if modality == "image"
                   else StoreAdapter(text_store=store))
    else:
        if sidecar_url is None:
            raise click.UsageError("--sidecar-url is required with --adapter remote")
        adapter = RemoteAdapter(SidecarClient(sidecar_url))

    gateway = EncoderGateway(adapter, image_profile, text_profile)
    if modality == "image":
        for sample in mani.samples:
            gateway.embed_image(sample)
        out_store = gateway.image_store
    else:
        if desc_cache is None:
            raise click.UsageError("--desc-cache is required for text modality")
        cache = DescriptionCache(desc_cache)
        for sample in mani.samples:
            entry = cache.get(sample.id)
            if entry is None:
                raise click.ClickException(
                    f"no cached descriptions for {sample.id!r}; run describe first"
                )
            gateway.embed_texts(DescriptionSet(
                sample_id=sample.id, texts=entry.texts,
                raw_response=entry.raw_response, padded=entry.padded,
            ))
        out_store = gateway.text_store
    write_store(out_store, out_path)
    click.echo(f"embed: wrote {len(out_store)} records to {out_path}")


def _train_options(fn):
    for option in reversed([
        click.option("--epochs", default=None, type=int),
        click.option("--lr", "learning_rate", default=None, type=float),
        click.option("--optimizer", default=None,
                     type=click.Choice(["adam", "sgd"])),
        click.option("--batch-size", default=None, type=int),
        click.option("--no-shuffle", is_flag=True, default=False),
        click.option("--weight-decay", default=None, type=float),
    ]):
        fn = option(fn)
    return fn


def _build_train_config(ctx, base: TrainConfig, epochs, learning_rate,
                        optimizer, batch_size, no_shuffle, weight_decay
                        ) -> TrainConfig:
    values = base.to_dict()
    overrides = {
        "epochs": epochs,
        "learning_rate": learning_rate,
        "optimizer": optimizer,
        "batch_size": batch_size,
        "weight_decay": weight_decay,
        "seed": ctx.obj.get("seed"),
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    if no_shuffle:
        values["shuffle"] = False
    return TrainConfig.from_dict(values)


@main.command(name="train")
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--embeddings", "image_store_path", type=click.Path(exists=True),
              default=None, help="Image embedding store.")
@click.option("--desc-embeddings", "text_store_path", type=click.Path(exists=True),
              default=None, help="Description embedding store.")
@click.option("--strategy", default="concat", show_default=True)
@click.option("--normalize", is_flag=True, default=False)
@_train_options
@click.pass_context
def train_cmd(ctx, manifest, image_store_path, text_store_path, strategy,
              normalize, **train_flags):
    """Train a single probe and report its test accuracy."""
    strategy = FusionStrategy.parse(strategy)
    config = _build_train_config(ctx, TrainConfig(), **train_flags)
    out_dir = _out_dir(ctx, "runs/train")
    spec = RunSpec(
        manifest=manifest, image_store=image_store_path,
        text_store=text_store_path, strategies=[strategy],
        train_config=config, out_dir=out_dir, normalize=normalize,
    )
    report = run_ablation(spec)
    result = report.result_for(strategy)
    click.echo(f"{strategy.value}: test accuracy {result.accuracy_percent}")


@main.command()
@click.option("--manifest", type=click.Path(exists=True), default=None)
@click.option("--embeddings", "image_store_path", type=click.Path(exists=True),
              default=None)
@click.option("--desc-embeddings", "text_store_path", type=click.Path(exists=True),
              default=None)
@click.option("--desc-cache", type=click.Path(exists=True), default=None,
              help="Description cache, for provenance only.")
@click.option("--strategies", default="image,text,concat,mean",
              show_default=True, help="Comma-separated strategy list.")
@click.option("--normalize", is_flag=True, default=False)
@click.option("--allow-partial", is_flag=True, default=False,
              help="Drop samples with missing embeddings instead of failing.")
@_train_options
@click.pass_context
def ablate(ctx, manifest, image_store_path, text_store_path, desc_cache,
           strategies, normalize, allow_partial, **train_flags):
    """Train one probe per fusion strategy from identical data and seed."""
    config_path = ctx.obj.get("config_path")
    if config_path:
        data = json.loads(Path(config_path).read_text(encoding="utf-8"))
        base = RunSpec.from_dict(data, out_dir=_out_dir(ctx, "runs/ablation"))
    else:
        if manifest is None:
            raise click.UsageError("--manifest is required without --config")
        base = RunSpec(
            manifest=manifest, image_store=image_store_path,
            text_store=text_store_path,
            strategies=[FusionStrategy.parse(s)
                        for s in strategies.split(",") if s],
            out_dir=_out_dir(ctx, "runs/ablation"),
            normalize=normalize, allow_partial=allow_partial,
            desc_cache=desc_cache,
        )
    base.train_config = _build_train_config(ctx, base.train_config, **train_flags)

    report = run_ablation(base)
    click.echo(report.to_text_table(), nl=False)
    if report.dropped_samples:
        click.echo(f"dropped {len(report.dropped_samples)} samples", err=True)
    click.echo(f"run directory: {base.out_dir}")


@main.command()
@click.option("--run", "run_dir", required=True, type=click.Path(exists=True))
@click.option("--replay", "do_replay", is_flag=True, default=False,
              help="Re-run the recorded config and verify bit-exactness.")
@click.pass_context
def report(ctx, run_dir, do_replay):
    """Print a run's result table; optionally verify it reproduces."""
    from .harness import RunReport

    if not do_replay:
        loaded = RunReport.load(run_dir)
        click.echo(loaded.to_text_table(), nl=False)
        return
    out_dir = _out_dir(ctx, str(Path(run_dir).with_name(
        Path(run_dir).name + "-replay")))
    _, diffs = replay_report(run_dir, out_dir)
    if diffs:
        for diff in diffs:
            click.echo(f"MISMATCH {diff}", err=True)
        sys.exit(1)
    click.echo("replay: bit-exact reproduction confirmed")


@main.command()
@click.option("--classes", default=2, show_default=True)
@click.option("--dim", default=8, show_default=True)
@click.option("--train-samples", default=100, show_default=True)
@click.option("--test-samples", default=100, show_default=True)
@click.option("--k", "descriptions_per_sample", default=10, show_default=True)
@click.option("--image-signal", default=1.0, show_default=True)
@click.option("--text-signal", default=1.0, show_default=True)
@click.option("--noise", default=1.0, show_default=True)
@click.pass_context
def synth(ctx, classes, dim, train_samples, test_samples,
          descriptions_per_sample, image_signal, text_signal, noise):
    """Generate a deterministic synthetic manifest plus embedding stores."""
    seed = ctx.obj.get("seed")
    config = SynthConfig(
        classes=classes, dim=dim, train_samples=train_samples,
        test_samples=test_samples,
        descriptions_per_sample=descriptions_per_sample,
        image_signal=image_signal, text_signal=text_signal, noise=noise,
        seed=seed if seed is not None else 0,
    )
    paths = synth_dataset(config, _out_dir(ctx, "runs/synth"))
    click.echo(f"synth: wrote {paths.manifest}, {paths.image_store}, "
               f"{paths.text_store}")


if __name__ == "__main__":
    main()
