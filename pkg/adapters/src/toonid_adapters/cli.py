"""toonid-extract: run one extraction stage or render AD overlays."""

from __future__ import annotations

import json
import logging
import sys

import click

from .extract import STAGES, ExtractionError, ExtractionJob, extract
from .overlays import OverlayError, render_overlays


@click.command()
@click.option("--stage", required=True,
              type=click.Choice(list(STAGES) + ["render_overlays"]))
@click.option("--media", required=True, type=click.Path(),
              help="Clip directory, image-set root, or frames directory.")
@click.option("--out", required=True, type=click.Path())
@click.option("--config", type=click.Path(), help="JSON model-config block.")
@click.option("--segments-manifest", type=click.Path())
@click.option("--tracks-manifest", type=click.Path())
@click.option("--prompts", type=click.Path(), help="ad_prompts manifest (render_overlays).")
@click.option("-v", "--verbose", is_flag=True)
def main(stage, media, out, config, segments_manifest, tracks_manifest, prompts, verbose):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = {}
    if config:
        with open(config, "r", encoding="utf-8") as fh:
            cfg.update(json.load(fh))
    if segments_manifest:
        cfg["segments_manifest"] = segments_manifest
    if tracks_manifest:
        cfg["tracks_manifest"] = tracks_manifest
    try:
        if stage == "render_overlays":
            if not prompts:
                raise OverlayError("render_overlays needs --prompts")
            written = render_overlays(prompts, media, out)
            click.echo(f"{len(written)} frames")
        else:
            path = extract(ExtractionJob(media=media, stage=stage, out=out, config=cfg))
            click.echo(str(path))
    except (ExtractionError, OverlayError, FileNotFoundError) as exc:
        click.echo(json.dumps({"error": type(exc).__name__, "message": str(exc)}), err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
