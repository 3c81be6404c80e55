"""Command-line entry point: one subcommand per pipeline stage plus `run`."""

from __future__ import annotations

import functools
import json
import logging
import sys

import click

from . import manifests, pipeline
from .errors import EngineError, ManifestError


def _fail(exc: EngineError):
    click.echo(json.dumps(exc.to_json()), err=True)
    sys.exit(1)


def engine_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except EngineError as exc:
            _fail(exc)
        except FileNotFoundError as exc:
            _fail(ManifestError(f"file not found: {exc.filename}", path=str(exc.filename)))

    return wrapper


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")


def _cfg(**kwargs) -> dict:
    """Flag values (click kwargs) -> hyphenated config keys, dropping Nones."""
    cfg = {k.replace("_", "-"): v for k, v in kwargs.items() if v is not None}
    return pipeline.with_defaults(cfg)


@main.command("build-bank")
@click.option("--candidates", required=True, type=click.Path())
@click.option("--interviews", required=True, type=click.Path())
@click.option("--tracks", required=True, type=click.Path())
@click.option("--segments", required=True, type=click.Path())
@click.option("--sync", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--movie-id", default="movie", show_default=True)
@click.option("--filter-threshold", default=0.55, show_default=True)
@click.option("--merge-tau", default=0.7, show_default=True)
@click.option("--vm-th", default=0.6, show_default=True)
@click.option("--sync-th", default=0.3, show_default=True)
@click.option("--voice-cap", default=15, show_default=True)
@engine_errors
def build_bank_cmd(out, **kwargs):
    """Construct the audio-visual character bank from candidate manifests."""
    path = pipeline.stage_build_bank(_cfg(**kwargs), out=out)
    click.echo(str(path))


@main.command("adapt")
@click.option("--bank", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--epochs", default=75, show_default=True)
@click.option("--lr-start", default=6e-4, show_default=True)
@click.option("--lr-end", default=5e-6, show_default=True)
@click.option("--tau", default=0.07, show_default=True)
@click.option("--seed", default=0, show_default=True)
@engine_errors
def adapt_cmd(out, **kwargs):
    """Train the contrastive linear projection over the appearance bank."""
    path = pipeline.stage_adapt(_cfg(**kwargs), out=out)
    click.echo(str(path))


@main.command("recognize-visual")
@click.option("--tracks", required=True, type=click.Path())
@click.option("--bank", required=True, type=click.Path())
@click.option("--projection", type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--k", default=3, show_default=True)
@click.option("--iou-th", default=0.5, show_default=True)
@click.option("--nms-th", default=0.5, show_default=True)
@click.option("--jobs", default=1, show_default=True)
@engine_errors
def recognize_visual_cmd(out, **kwargs):
    """Tripartite track matching, character identification, per-frame NMS."""
    path = pipeline.stage_recognize_visual(_cfg(**kwargs), out=out)
    click.echo(str(path))


def _audio_options(fn):
    for opt in reversed([
        click.option("--segments", required=True, type=click.Path()),
        click.option("--bank", required=True, type=click.Path()),
        click.option("--tracks", required=True, type=click.Path()),
        click.option("--sync", required=True, type=click.Path()),
        click.option("--out", required=True, type=click.Path()),
        click.option("--k", default=3, show_default=True),
        click.option("--lambda", "fusion_lambda", default=1.0, show_default=True),
        click.option("--low-conf", default=0.35, show_default=True),
        click.option("--fps", type=float, default=None),
    ]):
        fn = opt(fn)
    return fn


@main.command("recognize-audio")
@_audio_options
@click.option("--fusion/--no-fusion", default=True, show_default=True,
              help="Apply the visual-enhanced correction to low-confidence labels.")
@engine_errors
def recognize_audio_cmd(out, fusion, fusion_lambda, **kwargs):
    """Speaker recognition against the voice bank, with optional visual fusion."""
    cfg = _cfg(**kwargs)
    cfg["lambda"] = fusion_lambda
    path = pipeline.stage_recognize_audio(cfg, fusion=fusion, out=out)
    click.echo(str(path))


@main.command("fuse")
@_audio_options
@engine_errors
def fuse_cmd(out, fusion_lambda, **kwargs):
    """Alias of recognize-audio with the visual fusion forced on."""
    cfg = _cfg(**kwargs)
    cfg["lambda"] = fusion_lambda
    path = pipeline.stage_recognize_audio(cfg, fusion=True, out=out)
    click.echo(str(path))


@main.command("subtitles")
@click.option("--segments", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@engine_errors
def subtitles_cmd(out, **kwargs):
    """Emit speaker-tagged SRT subtitles from labeled segments."""
    path = pipeline.stage_subtitles(_cfg(**kwargs), out=out)
    click.echo(str(path))


@main.command("ad-prompts")
@click.option("--tracks", required=True, type=click.Path())
@click.option("--intervals", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--vm-th", "vm_retention", default=0.45, show_default=True)
@click.option("--frames", default=8, show_default=True)
@click.option("--fps", type=float, default=None)
@engine_errors
def ad_prompts_cmd(out, vm_retention, **kwargs):
    """Assemble AD prompt packages (overlay geometry + colour legend + prompt)."""
    cfg = _cfg(**kwargs)
    cfg["vm-retention"] = vm_retention
    path = pipeline.stage_ad_prompts(cfg, out=out)
    click.echo(str(path))


@main.command("evaluate")
@click.option("--task", required=True, type=click.Choice(["names", "boxes", "speakers", "der"]))
@click.option("--pred", required=True, type=click.Path())
@click.option("--gt", required=True, type=click.Path())
@click.option("--report", required=True, type=click.Path())
@click.option("--include-overlap/--exclude-overlap", default=True, show_default=True)
@click.option("--collar", default=0.0, show_default=True)
@click.option("--closed-set", is_flag=True, help="Drop GT turns whose speaker is not in --bank.")
@click.option("--drop-singing", is_flag=True, help="Drop GT turns flagged as singing.")
@click.option("--bank", type=click.Path())
@engine_errors
def evaluate_cmd(task, pred, gt, report, include_overlap, collar, closed_set, drop_singing, bank):
    """Score predictions against a ground-truth manifest and write report.json."""
    if task == "names":
        tracks, _, _ = manifests.load_tracks(pred)
        result = pipeline.evaluate_names(tracks, pipeline._load_gt(gt, "gt_names"))
    elif task == "boxes":
        tracks, _, _ = manifests.load_tracks(pred)
        result = pipeline.evaluate_boxes(tracks, pipeline._load_gt(gt, "gt_boxes"))
    elif task == "speakers":
        segments, _, _ = manifests.load_segments(pred)
        result = pipeline.evaluate_speakers(segments, pipeline._load_gt(gt, "gt_speakers"))
    else:
        segments, _, _ = manifests.load_segments(pred)
        roster = None
        if closed_set:
            if not bank:
                raise ManifestError("--closed-set requires --bank")
            bank_obj, _, _ = manifests.load_bank(bank)
            roster = set(bank_obj.names())
        result = pipeline.evaluate_der(segments, pipeline._load_gt(gt, "gt_timeline"),
                                       include_overlap=include_overlap, collar_s=collar,
                                       roster=roster, drop_singing=drop_singing)
    config = {"task": task, "pred": pred, "gt": gt, "include_overlap": include_overlap,
              "collar": collar, "closed_set": closed_set, "drop_singing": drop_singing}
    manifests.write_json_atomic(report, {"task": task, "config": config, **result})
    click.echo(json.dumps({"task": task, "aggregate": result["aggregate"]}))


@main.command("run")
@click.option("--config", type=click.Path(), envvar="TOONID_CONFIG",
              help="Flat JSON config; flags override file values.")
@click.option("--candidates", type=click.Path())
@click.option("--interviews", type=click.Path())
@click.option("--tracks", type=click.Path())
@click.option("--segments", type=click.Path())
@click.option("--sync", type=click.Path())
@click.option("--intervals", type=click.Path())
@click.option("--out-dir", type=click.Path())
@click.option("--movie-id")
@click.option("--seed", type=int)
@click.option("--epochs", type=int)
@click.option("--jobs", type=int)
@click.option("--fps", type=float)
@engine_errors
def run_cmd(config, **overrides):
    """Run the full pipeline from one config file."""
    cfg: dict = {}
    if config:
        try:
            with open(config, "r", encoding="utf-8") as fh:
                cfg.update(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ManifestError(f"cannot read config {config}: {exc}", path=str(config))
    cfg.update({k.replace("_", "-"): v for k, v in overrides.items() if v is not None})
    artifacts = pipeline.run_pipeline(cfg)
    for path in artifacts:
        click.echo(str(path))


if __name__ == "__main__":
    main()
