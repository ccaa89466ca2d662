"""Sidecar command line: serve, export, frames."""

from __future__ import annotations

import sys

import click

from .app import ServiceConfig, serve
from .backends import make_encoder
from .export import export_embeddings
from .frames import extract_middle_frames


@click.group()
def main():
    """Frozen-encoder inference sidecar."""


@main.command(name="serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8091, show_default=True, type=int)
@click.option("--encoder", default="stub", show_default=True,
              type=click.Choice(["stub", "clip"]))
@click.option("--describer", default="stub", show_default=True,
              type=click.Choice(["stub", "minigpt4"]))
@click.option("--dim", default=768, show_default=True, type=int,
              help="Embedding dim advertised by the stub encoder.")
@click.option("--device", default="cpu", show_default=True)
@click.option("--temperature", default=0.0, show_default=True, type=float)
@click.option("--max-tokens", default=512, show_default=True, type=int)
@click.option("--describer-config", default="", help="Model config path "
              "for the minigpt4 describer.")
def serve_cmd(host, port, encoder, describer, dim, device, temperature,
              max_tokens, describer_config):
    """Run the HTTP service."""
    serve(ServiceConfig(
        host=host, port=port, encoder=encoder, describer=describer,
        dim=dim, device=device, temperature=temperature,
        max_tokens=max_tokens, describer_config=describer_config,
    ))


@main.command(name="export")
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--encoder", default="stub", show_default=True,
              type=click.Choice(["stub", "clip"]))
@click.option("--dim", default=768, show_default=True, type=int)
@click.option("--device", default="cpu", show_default=True)
@click.option("--images-out", type=click.Path(), default=None)
@click.option("--texts-out", type=click.Path(), default=None)
@click.option("--desc-cache", type=click.Path(exists=True), default=None)
@click.option("--image-root", type=click.Path(exists=True), default=None,
              help="Base directory for relative image_ref paths.")
def export_cmd(manifest, encoder, dim, device, images_out, texts_out,
               desc_cache, image_root):
    """Write canonical embedding store files for a manifest."""
    backend = make_encoder(encoder, dim=dim, device=device)
    result = export_embeddings(
        manifest, backend, images_out=images_out, texts_out=texts_out,
        desc_cache=desc_cache, image_root=image_root)
    click.echo(f"export: {result.images_written} image records, "
               f"{result.texts_written} text records, "
               f"{len(result.skipped)} skipped")
    for sample_id in result.skipped:
        click.echo(f"  skipped {sample_id}", err=True)
    if result.images_written == 0 and result.texts_written == 0:
        sys.exit(1)


@main.command(name="frames")
@click.option("--videos", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--suffix", default=".jpg", show_default=True)
def frames_cmd(videos, out, suffix):
    """Extract the middle frame of every video under a directory."""
    result = extract_middle_frames(videos, out, image_suffix=suffix)
    click.echo(f"frames: wrote {len(result.written)}, "
               f"{len(result.failed)} failed")
    for path, reason in sorted(result.failed.items()):
        click.echo(f"  failed {path}: {reason}", err=True)
    if result.failed:
        sys.exit(1)


if __name__ == "__main__":
    main()
