"""Render AD prompt overlay geometry onto frame images."""

from __future__ import annotations

import json
import logging
from pathlib import Path

from PIL import Image, ImageDraw

log = logging.getLogger(__name__)


class OverlayError(Exception):
    pass


def load_prompt_packages(prompts_path) -> tuple[dict, list[dict]]:
    """Returns (palette {colour_id: (r, g, b)}, package records)."""
    with open(prompts_path, "r", encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    if not records or records[0].get("schema") != "ad_prompts":
        raise OverlayError(f"{prompts_path}: expected an ad_prompts manifest")
    palette = {cid: tuple(rgb) for cid, rgb in records[0]["palette"].items()}
    return palette, records[1:]


def render_overlays(prompts_path, frames_dir, out_dir, line_width: int = 3) -> list[Path]:
    """One annotated image per referenced frame, boxes in legend palette colours.

    Frames without overlays are copied unmodified. Colour ids beyond the base
    palette reuse base RGB values (cycling suffixes are stripped).
    """
    palette, packages = load_prompt_packages(prompts_path)
    frames_dir = Path(frames_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    by_frame: dict[int, list[tuple[dict, str]]] = {}
    for package in packages:
        for frame in package["frame_refs"]:
            by_frame.setdefault(int(frame), [])
        for overlay in package["overlays"]:
            by_frame.setdefault(int(overlay["frame_ref"]), []).append(
                (overlay["box"], overlay["colour_id"]))

    written = []
    for frame, overlays in sorted(by_frame.items()):
        src = frames_dir / f"{frame:05d}.png"
        if not src.exists():
            raise OverlayError(f"missing frame file: {src}")
        image = Image.open(src).convert("RGB")
        draw = ImageDraw.Draw(image)
        for box, colour_id in overlays:
            rgb = palette.get(colour_id) or palette.get(colour_id.rstrip("0123456789"))
            if rgb is None:
                raise OverlayError(f"colour id {colour_id!r} not in the manifest palette")
            draw.rectangle([box["x1"], box["y1"], box["x2"], box["y2"]],
                           outline=tuple(rgb), width=line_width)
        dest = out_dir / src.name
        image.save(dest)
        written.append(dest)
    log.info("rendered %d frames to %s", len(written), out_dir)
    return written
