"""Extraction stages that turn media into engine-ready JSON Lines manifests.

Every stage self-checks its output against the engine's manifest validator
before writing, so a schema violation is caught here rather than downstream.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from toonid.manifests import validate_manifest

from . import backends
from .media import load_clip

log = logging.getLogger(__name__)

STAGES = ("detect_track", "embed_visual", "embed_audio", "transcribe", "diarise", "sync")


class ExtractionError(Exception):
    pass


@dataclass
class ExtractionJob:
    media: str
    stage: str
    out: str
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ExtractionError(f"unknown stage {self.stage!r}; expected one of {STAGES}")

    def opt(self, key, default):
        return self.config.get(key, default)


def extract(job: ExtractionJob) -> Path:
    """Run one extraction stage and write its manifest atomically."""
    records = _STAGE_FNS[job.stage](job)
    obj, header, issues = validate_manifest(records)
    if issues:
        raise ExtractionError(
            f"stage {job.stage} produced an invalid manifest: "
            + "; ".join(str(i) for i in issues[:5]))
    out = Path(job.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out.parent, prefix=out.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec))
                fh.write("\n")
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    log.info("stage %s: wrote %d records to %s", job.stage, len(records) - 1, out)
    return out


def _emb(values) -> dict:
    return {"values": [float(x) for x in values], "normalized": False}


def _visual_dim(job) -> int:
    return backends.visual_dim(int(job.opt("visual_bins", backends.VISUAL_BINS)))


# ---------------------------------------------------------------------------
# detect_track


def stage_detect_track(job: ExtractionJob) -> list[dict]:
    clip = load_clip(job.media)
    detect_kwargs = {
        "intensity_threshold": int(job.opt("intensity_threshold", 20)),
        "min_area": int(job.opt("min_area", 30)),
    }
    bins = int(job.opt("visual_bins", backends.VISUAL_BINS))
    min_len = int(job.opt("min_track_frames", 3))
    shots = backends.shot_boundaries(clip.frames, float(job.opt("shot_diff_threshold", 30.0)))

    records = [{"schema": "tracks", "visual_dim": backends.visual_dim(bins), "fps": clip.fps}]
    for shot_id, shot in enumerate(shots):
        start, stop = shot
        length = stop - start
        seed_frames = [start + int(length * frac) for frac in (1 / 6, 1 / 2, 5 / 6)]
        for seed_index, seed_frame in enumerate(seed_frames):
            seed_boxes = backends.foreground_boxes(clip.frames[seed_frame], **detect_kwargs)
            for i, seed_box in enumerate(seed_boxes):
                covered = backends.track_from_seed(clip.frames, shot, seed_frame, seed_box,
                                                   **detect_kwargs)
                frames = sorted(covered)
                if len(frames) < min_len:
                    continue
                # keep the longest contiguous run around the seed frame
                frames = _contiguous_run(frames, seed_frame)
                boxes = [{"x1": covered[f][0], "y1": covered[f][1],
                          "x2": covered[f][2], "y2": covered[f][3], "frame_index": f}
                         for f in frames]
                sample_at = [frames[int(round(p))]
                             for p in np.linspace(0, len(frames) - 1, 5)]
                feats = []
                for f in sample_at:
                    x1, y1, x2, y2 = (int(round(v)) for v in covered[f])
                    feats.append(_emb(backends.visual_embedding(
                        clip.frames[f, y1:y2, x1:x2], bins=bins)))
                records.append({
                    "track_id": f"s{shot_id}_k{seed_index}_{i}",
                    "shot_id": shot_id,
                    "seed_index": seed_index,
                    "boxes": boxes,
                    "sampled_features": feats,
                    "scores": {},
                    "assigned_character": None,
                })
    return records


def _contiguous_run(frames: list[int], anchor: int) -> list[int]:
    runs = []
    run = [frames[0]]
    for f in frames[1:]:
        if f == run[-1] + 1:
            run.append(f)
        else:
            runs.append(run)
            run = [f]
    runs.append(run)
    for run in runs:
        if run[0] <= anchor <= run[-1]:
            return run
    return max(runs, key=len)


# ---------------------------------------------------------------------------
# embed_visual (character candidate images)


def stage_embed_visual(job: ExtractionJob) -> list[dict]:
    """media is an image-set root: <character>/<profile|web>/*.png."""
    from PIL import Image

    bins = int(job.opt("visual_bins", backends.VISUAL_BINS))
    root = Path(job.media)
    records = [{"schema": "candidates", "visual_dim": backends.visual_dim(bins)}]
    for char_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for tag in ("profile", "web"):
            for image_path in sorted((char_dir / tag).glob("*.png")):
                image = np.asarray(Image.open(image_path).convert("RGB"))
                records.append({
                    "character_name": char_dir.name,
                    "embedding": _emb(backends.visual_embedding(image, bins=bins)),
                    "source_tag": tag,
                })
    return records


# ---------------------------------------------------------------------------
# transcribe / embed_audio / diarise


def stage_transcribe(job: ExtractionJob) -> list[dict]:
    clip = load_clip(job.media)
    dim = int(job.opt("audio_dim", backends.AUDIO_DIM))
    spans = backends.speech_segments(clip.audio, clip.sample_rate,
                                     threshold=float(job.opt("vad_threshold", 0.01)),
                                     min_duration_s=float(job.opt("min_segment_s", 0.1)))
    records = [{"schema": "segments", "audio_dim": dim}]
    for i, (start, end) in enumerate(spans):
        records.append({
            "segment_id": f"seg{i:03d}", "start_s": start, "end_s": end,
            "transcript": "", "embedding": None, "cluster_id": -1,
            "predicted_speaker": None, "audio_confidence": None,
            "visual_confidence": None, "label_source": None,
        })
    return records


def _read_manifest(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def stage_embed_audio(job: ExtractionJob) -> list[dict]:
    segments_path = job.opt("segments_manifest", None)
    if not segments_path:
        raise ExtractionError("embed_audio needs config['segments_manifest']")
    clip = load_clip(job.media)
    dim = int(job.opt("audio_dim", backends.AUDIO_DIM))
    records = _read_manifest(segments_path)
    records[0]["audio_dim"] = dim
    for rec in records[1:]:
        lo = int(rec["start_s"] * clip.sample_rate)
        hi = int(rec["end_s"] * clip.sample_rate)
        rec["embedding"] = _emb(backends.audio_embedding(clip.audio[lo:hi],
                                                         clip.sample_rate, dim=dim))
    return records


def stage_diarise(job: ExtractionJob) -> list[dict]:
    """Greedy cosine clustering of segment embeddings into speaker clusters."""
    segments_path = job.opt("segments_manifest", None)
    if not segments_path:
        raise ExtractionError("diarise needs config['segments_manifest']")
    threshold = float(job.opt("cluster_threshold", 0.9))
    records = _read_manifest(segments_path)
    centroids: list[np.ndarray] = []
    members: list[int] = []
    for rec in records[1:]:
        if not rec.get("embedding"):
            raise ExtractionError(f"segment {rec.get('segment_id')} has no embedding; "
                                  "run embed_audio first")
        v = np.asarray(rec["embedding"]["values"])
        unit = v / (np.linalg.norm(v) or 1.0)
        best, best_cos = None, threshold
        for cid, centroid in enumerate(centroids):
            cos = float(unit @ (centroid / np.linalg.norm(centroid)))
            if cos > best_cos:
                best, best_cos = cid, cos
        if best is None:
            centroids.append(v.copy())
            members.append(1)
            best = len(centroids) - 1
        else:
            centroids[best] = (centroids[best] * members[best] + v) / (members[best] + 1)
            members[best] += 1
        rec["cluster_id"] = best
    return records


# ---------------------------------------------------------------------------
# sync


def stage_sync(job: ExtractionJob) -> list[dict]:
    """Motion-audio agreement maps for seed-0 tracks vs overlapping segments.

    Emits t*1*1 similarity maps (the engine reduces them) except for
    single-frame overlaps, which are emitted as scalar scores.
    """
    tracks_path = job.opt("tracks_manifest", None)
    segments_path = job.opt("segments_manifest", None)
    if not tracks_path or not segments_path:
        raise ExtractionError("sync needs config['tracks_manifest'] and config['segments_manifest']")
    clip = load_clip(job.media)
    tracks = _read_manifest(tracks_path)[1:]
    segments = _read_manifest(segments_path)[1:]

    envelope = np.asarray([float(np.sqrt(np.mean(clip.frame_window(f) ** 2)))
                           if clip.frame_window(f).size else 0.0
                           for f in range(clip.n_frames)])
    env_scale = envelope.max() or 1.0

    records = [{"schema": "sync"}]
    for track in tracks:
        if track.get("seed_index") not in (None, 0):
            continue
        boxes = {b["frame_index"]: (b["x1"], b["y1"], b["x2"], b["y2"])
                 for b in track["boxes"]}
        frames = sorted(boxes)
        t_lo, t_hi = frames[0] / clip.fps, (frames[-1] + 1) / clip.fps
        motion = backends.motion_energy(clip.frames, boxes, frames)
        motion_scale = motion.max() or 1.0
        for seg in segments:
            if not (seg["start_s"] < t_hi and t_lo < seg["end_s"]):
                continue
            overlap = [f for f in frames
                       if seg["start_s"] < (f + 1) / clip.fps and f / clip.fps < seg["end_s"]]
            values = [(motion[frames.index(f)] / motion_scale)
                      * (envelope[f] / env_scale) for f in overlap]
            rec = {"track_ref": track["track_id"], "segment_ref": seg["segment_id"]}
            if len(values) == 1:
                rec["sync_score"] = float(values[0])
            else:
                rec["similarity_map"] = [[[float(v)]] for v in values]
            records.append(rec)
    return records


_STAGE_FNS = {
    "detect_track": stage_detect_track,
    "embed_visual": stage_embed_visual,
    "embed_audio": stage_embed_audio,
    "transcribe": stage_transcribe,
    "diarise": stage_diarise,
    "sync": stage_sync,
}
