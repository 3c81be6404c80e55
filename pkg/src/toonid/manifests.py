"""JSON Lines manifest I/O and invariant validation.

Every manifest file starts with a header record carrying a ``schema`` tag and
the embedding dimensions relevant to that file. Invariant violations are
collected as non-fatal issues with field paths; structurally unparseable input
raises :class:`ManifestError`.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Optional

import numpy as np

from .core import (
    NORM_TOLERANCE,
    BoundingBox,
    CharacterBank,
    CharacterEntry,
    EmbeddingVector,
    SpeechSegment,
    SyncObservation,
    Track,
)
from .errors import ManifestError

VOICE_CAP_DEFAULT = 15


@dataclass(frozen=True)
class Issue:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


# ---------------------------------------------------------------------------
# Raw JSONL plumbing


def read_jsonl(path) -> list[dict]:
    lines = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                lines.append(json.loads(raw))
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}: line {lineno} is not valid JSON: {exc}", path=str(path))
    if not lines:
        raise ManifestError(f"{path}: empty manifest (missing header record)", path=str(path))
    return lines


def write_jsonl_atomic(path, records: Iterable[dict]) -> None:
    """Write records one per line via a temp file + rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec))
                fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json_atomic(path, document: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(document, fh, indent=2)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _require(record: dict, key: str, path: str):
    if key not in record:
        raise ManifestError(f"{path}: missing required field '{key}'")
    return record[key]


# ---------------------------------------------------------------------------
# Embedding encoding


def encode_embedding(vec: EmbeddingVector) -> dict:
    return {"values": [float(x) for x in vec.values], "normalized": bool(vec.normalized)}


def decode_embedding(obj: Any, path: str) -> EmbeddingVector:
    if not isinstance(obj, dict) or "values" not in obj:
        raise ManifestError(f"{path}: embedding must be an object with 'values'")
    try:
        return EmbeddingVector(values=np.asarray(obj["values"], dtype=np.float64),
                               normalized=bool(obj.get("normalized", False)))
    except Exception as exc:
        raise ManifestError(f"{path}: bad embedding: {exc}")


def _check_embedding(vec: EmbeddingVector, dim: Optional[int], path: str, issues: list[Issue]):
    if dim is not None and vec.dim != dim:
        issues.append(Issue(path, f"dimension {vec.dim} != header dimension {dim}"))
    if not np.all(np.isfinite(vec.values)):
        issues.append(Issue(path, "embedding contains non-finite values"))
        return
    if vec.normalized:
        norm = float(np.linalg.norm(vec.values))
        if abs(norm - 1.0) > NORM_TOLERANCE:
            issues.append(Issue(path, f"flagged normalized but L2 norm is {norm:.9g}"))


# ---------------------------------------------------------------------------
# Character bank


def encode_bank(bank: CharacterBank, visual_dim: int, audio_dim: int) -> list[dict]:
    records = [{"schema": "bank", "movie_id": bank.movie_id,
                "visual_dim": visual_dim, "audio_dim": audio_dim}]
    for ch in bank.characters:
        records.append({
            "name": ch.name,
            "appearance_exemplars": [encode_embedding(e) for e in ch.appearance_exemplars],
            "voice_exemplars": [encode_embedding(e) for e in ch.voice_exemplars],
            "profile_embedding": encode_embedding(ch.profile_embedding)
            if ch.profile_embedding is not None else None,
        })
    return records


def parse_bank(records: list[dict]) -> tuple[CharacterBank, dict]:
    header = records[0]
    if header.get("schema") != "bank":
        raise ManifestError(f"header: expected schema 'bank', got {header.get('schema')!r}")
    movie_id = str(_require(header, "movie_id", "header"))
    characters = []
    for i, rec in enumerate(records[1:]):
        path = f"characters[{i}]"
        name = str(_require(rec, "name", path))
        appearance = [decode_embedding(e, f"{path}.appearance_exemplars[{j}]")
                      for j, e in enumerate(rec.get("appearance_exemplars", []))]
        voice = [decode_embedding(e, f"{path}.voice_exemplars[{j}]")
                 for j, e in enumerate(rec.get("voice_exemplars", []))]
        profile = rec.get("profile_embedding")
        profile_vec = decode_embedding(profile, f"{path}.profile_embedding") if profile else None
        characters.append(CharacterEntry(name=name, appearance_exemplars=appearance,
                                         voice_exemplars=voice, profile_embedding=profile_vec))
    return CharacterBank(movie_id=movie_id, characters=characters), header


def validate_bank(bank: CharacterBank, header: dict,
                  voice_cap: int = VOICE_CAP_DEFAULT) -> list[Issue]:
    issues: list[Issue] = []
    if not bank.characters:
        issues.append(Issue("characters", "bank must contain at least one character"))
    visual_dim = header.get("visual_dim")
    audio_dim = header.get("audio_dim")
    seen = set()
    for i, ch in enumerate(bank.characters):
        path = f"characters[{i}]"
        if not ch.name:
            issues.append(Issue(f"{path}.name", "character name must be non-empty"))
        if ch.name in seen:
            issues.append(Issue(f"{path}.name", f"duplicate character name {ch.name!r}"))
        seen.add(ch.name)
        if len(ch.voice_exemplars) > voice_cap:
            issues.append(Issue(f"{path}.voice_exemplars",
                                f"{len(ch.voice_exemplars)} voice exemplars exceed cap {voice_cap}"))
        for j, e in enumerate(ch.appearance_exemplars):
            _check_embedding(e, visual_dim, f"{path}.appearance_exemplars[{j}]", issues)
        for j, e in enumerate(ch.voice_exemplars):
            _check_embedding(e, audio_dim, f"{path}.voice_exemplars[{j}]", issues)
        if ch.profile_embedding is not None:
            _check_embedding(ch.profile_embedding, visual_dim, f"{path}.profile_embedding", issues)
    return issues


def load_bank(path, voice_cap: int = VOICE_CAP_DEFAULT) -> tuple[CharacterBank, dict, list[Issue]]:
    bank, header = parse_bank(read_jsonl(path))
    return bank, header, validate_bank(bank, header, voice_cap=voice_cap)


def save_bank(bank: CharacterBank, path, visual_dim: int, audio_dim: int) -> None:
    write_jsonl_atomic(path, encode_bank(bank, visual_dim, audio_dim))


# ---------------------------------------------------------------------------
# Tracks


def encode_box(box: BoundingBox) -> dict:
    return {"x1": box.x1, "y1": box.y1, "x2": box.x2, "y2": box.y2,
            "frame_index": box.frame_index}


def decode_box(obj: dict, path: str) -> BoundingBox:
    try:
        return BoundingBox(x1=float(_require(obj, "x1", path)), y1=float(_require(obj, "y1", path)),
                           x2=float(_require(obj, "x2", path)), y2=float(_require(obj, "y2", path)),
                           frame_index=int(_require(obj, "frame_index", path)))
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"{path}: bad bounding box: {exc}")


def encode_tracks(tracks: Iterable[Track], visual_dim: int, fps: float) -> list[dict]:
    records = [{"schema": "tracks", "visual_dim": visual_dim, "fps": fps}]
    for t in tracks:
        rec = {
            "track_id": t.track_id,
            "shot_id": t.shot_id,
            "boxes": [encode_box(b) for b in t.boxes],
            "sampled_features": [encode_embedding(f) for f in t.sampled_features],
            "scores": {k: float(v) for k, v in t.scores.items()},
            "assigned_character": t.assigned_character,
        }
        if t.seed_index is not None:
            rec["seed_index"] = t.seed_index
        if t.frame_features is not None:
            rec["frame_features"] = {str(k): encode_embedding(v)
                                     for k, v in sorted(t.frame_features.items())}
        if t.nms_suppressed:
            rec["nms_suppressed"] = list(t.nms_suppressed)
        records.append(rec)
    return records


def parse_tracks(records: list[dict]) -> tuple[list[Track], dict]:
    header = records[0]
    if header.get("schema") != "tracks":
        raise ManifestError(f"header: expected schema 'tracks', got {header.get('schema')!r}")
    tracks = []
    for i, rec in enumerate(records[1:]):
        path = f"tracks[{i}]"
        boxes = [decode_box(b, f"{path}.boxes[{j}]")
                 for j, b in enumerate(_require(rec, "boxes", path))]
        feats = [decode_embedding(e, f"{path}.sampled_features[{j}]")
                 for j, e in enumerate(rec.get("sampled_features", []))]
        frame_features = None
        if rec.get("frame_features") is not None:
            frame_features = {int(k): decode_embedding(v, f"{path}.frame_features[{k}]")
                              for k, v in rec["frame_features"].items()}
        tracks.append(Track(
            track_id=str(_require(rec, "track_id", path)),
            shot_id=int(_require(rec, "shot_id", path)),
            boxes=boxes,
            sampled_features=feats,
            scores={str(k): float(v) for k, v in rec.get("scores", {}).items()},
            assigned_character=rec.get("assigned_character"),
            seed_index=rec.get("seed_index"),
            frame_features=frame_features,
            nms_suppressed=tuple(rec.get("nms_suppressed", [])),
        ))
    return tracks, header


def _check_box(box: BoundingBox, path: str, issues: list[Issue]):
    if not box.x1 < box.x2:
        issues.append(Issue(path, f"x1 ({box.x1:g}) must be < x2 ({box.x2:g})"))
    if not box.y1 < box.y2:
        issues.append(Issue(path, f"y1 ({box.y1:g}) must be < y2 ({box.y2:g})"))
    if box.frame_index < 0:
        issues.append(Issue(path, f"frame_index ({box.frame_index}) must be >= 0"))


def validate_tracks(tracks: list[Track], header: dict,
                    require_sampled: bool = True) -> list[Issue]:
    issues: list[Issue] = []
    if not isinstance(header.get("fps"), (int, float)) or header.get("fps", 0) <= 0:
        issues.append(Issue("header.fps", "fps must be a positive number"))
    visual_dim = header.get("visual_dim")
    seen_ids = set()
    for i, t in enumerate(tracks):
        path = f"tracks[{i}]"
        if t.track_id in seen_ids:
            issues.append(Issue(f"{path}.track_id", f"duplicate track id {t.track_id!r}"))
        seen_ids.add(t.track_id)
        if not t.boxes:
            issues.append(Issue(f"{path}.boxes", "track must cover at least one frame"))
        for j, b in enumerate(t.boxes):
            _check_box(b, f"{path}.boxes[{j}]", issues)
        frames = [b.frame_index for b in t.boxes]
        if frames and frames != list(range(frames[0], frames[0] + len(frames))):
            issues.append(Issue(f"{path}.boxes",
                                "boxes must be ordered by frame_index with one box per frame"))
        if require_sampled and len(t.sampled_features) != 5:
            issues.append(Issue(f"{path}.sampled_features",
                                f"expected exactly 5 sampled features, got {len(t.sampled_features)}"))
        for j, f in enumerate(t.sampled_features):
            _check_embedding(f, visual_dim, f"{path}.sampled_features[{j}]", issues)
        if t.frame_features:
            covered = set(frames)
            for k, f in t.frame_features.items():
                if k not in covered:
                    issues.append(Issue(f"{path}.frame_features[{k}]",
                                        "feature frame outside track coverage"))
                _check_embedding(f, visual_dim, f"{path}.frame_features[{k}]", issues)
        if t.assigned_character is not None:
            if t.assigned_character not in t.scores:
                issues.append(Issue(f"{path}.assigned_character",
                                    f"{t.assigned_character!r} has no score entry"))
            elif t.scores and t.scores[t.assigned_character] < max(t.scores.values()):
                issues.append(Issue(f"{path}.assigned_character",
                                    "assigned character is not the argmax of scores"))
    return issues


def load_tracks(path, require_sampled: bool = True) -> tuple[list[Track], dict, list[Issue]]:
    tracks, header = parse_tracks(read_jsonl(path))
    return tracks, header, validate_tracks(tracks, header, require_sampled=require_sampled)


def save_tracks(tracks: Iterable[Track], path, visual_dim: int, fps: float) -> None:
    write_jsonl_atomic(path, encode_tracks(tracks, visual_dim, fps))


# ---------------------------------------------------------------------------
# Speech segments


def encode_segments(segments: Iterable[SpeechSegment], audio_dim: int) -> list[dict]:
    records = [{"schema": "segments", "audio_dim": audio_dim}]
    for s in segments:
        records.append({
            "segment_id": s.segment_id,
            "start_s": s.start_s,
            "end_s": s.end_s,
            "transcript": s.transcript,
            "embedding": encode_embedding(s.embedding) if s.embedding is not None else None,
            "cluster_id": s.cluster_id,
            "predicted_speaker": s.predicted_speaker,
            "audio_confidence": s.audio_confidence,
            "visual_confidence": s.visual_confidence,
            "label_source": s.label_source,
        })
    return records


def parse_segments(records: list[dict]) -> tuple[list[SpeechSegment], dict]:
    header = records[0]
    if header.get("schema") != "segments":
        raise ManifestError(f"header: expected schema 'segments', got {header.get('schema')!r}")
    segments = []
    for i, rec in enumerate(records[1:]):
        path = f"segments[{i}]"
        emb = rec.get("embedding")
        segments.append(SpeechSegment(
            segment_id=str(_require(rec, "segment_id", path)),
            start_s=float(_require(rec, "start_s", path)),
            end_s=float(_require(rec, "end_s", path)),
            transcript=str(rec.get("transcript", "")),
            embedding=decode_embedding(emb, f"{path}.embedding") if emb else None,
            cluster_id=int(rec.get("cluster_id", -1)),
            predicted_speaker=rec.get("predicted_speaker"),
            audio_confidence=rec.get("audio_confidence"),
            visual_confidence=rec.get("visual_confidence"),
            label_source=rec.get("label_source"),
        ))
    return segments, header


def validate_segments(segments: list[SpeechSegment], header: dict) -> list[Issue]:
    issues: list[Issue] = []
    audio_dim = header.get("audio_dim")
    seen_ids = set()
    for i, s in enumerate(segments):
        path = f"segments[{i}]"
        if s.segment_id in seen_ids:
            issues.append(Issue(f"{path}.segment_id", f"duplicate segment id {s.segment_id!r}"))
        seen_ids.add(s.segment_id)
        if not s.start_s < s.end_s:
            issues.append(Issue(path, f"start_s ({s.start_s:g}) must be < end_s ({s.end_s:g})"))
        if s.embedding is not None:
            _check_embedding(s.embedding, audio_dim, f"{path}.embedding", issues)
        if s.label_source is not None and s.label_source not in ("audio", "visual"):
            issues.append(Issue(f"{path}.label_source",
                                f"must be 'audio' or 'visual', got {s.label_source!r}"))
        if (s.predicted_speaker is not None and s.label_source == "audio"
                and s.audio_confidence is None):
            issues.append(Issue(f"{path}.audio_confidence",
                                "required when the audio path sets predicted_speaker"))
        if s.audio_confidence is not None and not 0.0 <= s.audio_confidence <= 1.0:
            issues.append(Issue(f"{path}.audio_confidence",
                                f"must be in [0,1], got {s.audio_confidence:g}"))
    return issues


def load_segments(path) -> tuple[list[SpeechSegment], dict, list[Issue]]:
    segments, header = parse_segments(read_jsonl(path))
    return segments, header, validate_segments(segments, header)


def save_segments(segments: Iterable[SpeechSegment], path, audio_dim: int) -> None:
    write_jsonl_atomic(path, encode_segments(segments, audio_dim))


# ---------------------------------------------------------------------------
# Sync observations


def encode_sync(observations: Iterable[SyncObservation]) -> list[dict]:
    records = [{"schema": "sync"}]
    for o in observations:
        rec = {"track_ref": o.track_ref, "segment_ref": o.segment_ref}
        if o.sync_score is not None:
            rec["sync_score"] = float(o.sync_score)
        if o.similarity_map is not None:
            rec["similarity_map"] = o.similarity_map.tolist()
        records.append(rec)
    return records


def parse_sync(records: list[dict]) -> tuple[list[SyncObservation], dict]:
    header = records[0]
    if header.get("schema") != "sync":
        raise ManifestError(f"header: expected schema 'sync', got {header.get('schema')!r}")
    observations = []
    for i, rec in enumerate(records[1:]):
        path = f"sync[{i}]"
        sim = rec.get("similarity_map")
        sim_arr = None
        if sim is not None:
            try:
                sim_arr = np.asarray(sim, dtype=np.float64)
            except ValueError as exc:
                raise ManifestError(f"{path}.similarity_map: not a rectangular grid: {exc}")
        observations.append(SyncObservation(
            track_ref=str(_require(rec, "track_ref", path)),
            segment_ref=str(_require(rec, "segment_ref", path)),
            sync_score=rec.get("sync_score"),
            similarity_map=sim_arr,
        ))
    return observations, header


def validate_sync(observations: list[SyncObservation], header: dict) -> list[Issue]:
    issues: list[Issue] = []
    for i, o in enumerate(observations):
        path = f"sync[{i}]"
        has_score = o.sync_score is not None
        has_map = o.similarity_map is not None
        if has_score == has_map:
            issues.append(Issue(path, "exactly one of sync_score / similarity_map must be present"))
        if has_map:
            if o.similarity_map.ndim != 3 or min(o.similarity_map.shape) < 1:
                issues.append(Issue(f"{path}.similarity_map",
                                    f"expected a t*h*w grid, got shape {list(o.similarity_map.shape)}"))
            elif not np.all(np.isfinite(o.similarity_map)):
                issues.append(Issue(f"{path}.similarity_map", "grid contains non-finite values"))
    return issues


def load_sync(path) -> tuple[list[SyncObservation], dict, list[Issue]]:
    observations, header = parse_sync(read_jsonl(path))
    return observations, header, validate_sync(observations, header)


def save_sync(observations: Iterable[SyncObservation], path) -> None:
    write_jsonl_atomic(path, encode_sync(observations))


# ---------------------------------------------------------------------------
# Bank-builder inputs: candidate images and interview diariser clusters


def parse_candidates(records: list[dict]):
    from .bank import CandidateImageRecord

    header = records[0]
    if header.get("schema") != "candidates":
        raise ManifestError(f"header: expected schema 'candidates', got {header.get('schema')!r}")
    candidates = []
    for i, rec in enumerate(records[1:]):
        path = f"candidates[{i}]"
        name = str(_require(rec, "character_name", path))
        if not name:
            raise ManifestError(f"{path}: character_name must be non-empty")
        candidates.append(CandidateImageRecord(
            character_name=name,
            embedding=decode_embedding(_require(rec, "embedding", path), f"{path}.embedding"),
            source_tag=str(rec.get("source_tag", "web")),
        ))
    return candidates, header


def validate_candidates(candidates, header: dict) -> list[Issue]:
    issues: list[Issue] = []
    visual_dim = header.get("visual_dim")
    roster = {c.character_name for c in candidates if c.source_tag == "profile"}
    for i, c in enumerate(candidates):
        path = f"candidates[{i}]"
        if c.source_tag not in ("profile", "web"):
            issues.append(Issue(f"{path}.source_tag",
                                f"must be 'profile' or 'web', got {c.source_tag!r}"))
        if c.character_name not in roster:
            issues.append(Issue(f"{path}.character_name",
                                f"{c.character_name!r} has no profile record in the roster"))
        _check_embedding(c.embedding, visual_dim, f"{path}.embedding", issues)
    return issues


def parse_interview_clusters(records: list[dict]):
    from .bank import SpeakerCluster

    header = records[0]
    if header.get("schema") != "interview_clusters":
        raise ManifestError("header: expected schema 'interview_clusters', "
                            f"got {header.get('schema')!r}")
    by_char: dict[str, list] = {}
    for i, rec in enumerate(records[1:]):
        path = f"interview_clusters[{i}]"
        name = str(_require(rec, "character_name", path))
        embs = [decode_embedding(e, f"{path}.segment_embeddings[{j}]")
                for j, e in enumerate(rec.get("segment_embeddings", []))]
        if not embs:
            raise ManifestError(f"{path}: cluster has no segment embeddings")
        centroid = rec.get("centroid")
        if centroid is not None:
            cluster = SpeakerCluster(cluster_id=int(rec.get("cluster_id", i)),
                                     segment_embeddings=embs,
                                     centroid=decode_embedding(centroid, f"{path}.centroid"))
        else:
            cluster = SpeakerCluster.from_segments(int(rec.get("cluster_id", i)), embs)
        by_char.setdefault(name, []).append(cluster)
    return by_char, header


def validate_interview_clusters(by_char, header: dict) -> list[Issue]:
    issues: list[Issue] = []
    audio_dim = header.get("audio_dim")
    for name, clusters in by_char.items():
        for cluster in clusters:
            path = f"interview_clusters[{name!r}][{cluster.cluster_id}]"
            for j, e in enumerate(cluster.segment_embeddings):
                _check_embedding(e, audio_dim, f"{path}.segment_embeddings[{j}]", issues)
            mean = np.mean(np.stack([e.values for e in cluster.segment_embeddings]), axis=0)
            norm = float(np.linalg.norm(mean))
            if norm < 1e-12:
                issues.append(Issue(f"{path}.centroid", "member mean degenerates to zero"))
            elif not np.allclose(cluster.centroid.values, mean / norm, atol=1e-6):
                issues.append(Issue(f"{path}.centroid",
                                    "centroid is not the renormalized member mean"))
    return issues


# ---------------------------------------------------------------------------
# Generic dispatch (the public validate_manifest entry point)

_PARSERS = {
    "bank": (parse_bank, validate_bank),
    "tracks": (parse_tracks, validate_tracks),
    "segments": (parse_segments, validate_segments),
    "sync": (parse_sync, validate_sync),
    "candidates": (parse_candidates, validate_candidates),
    "interview_clusters": (parse_interview_clusters, validate_interview_clusters),
}


def validate_manifest(records: list[dict]):
    """Parse + validate a manifest given its records (header first).

    Returns ``(validated_object, header, issues)``; raises ManifestError when
    the document cannot be interpreted at all.
    """
    if not records:
        raise ManifestError("empty manifest (missing header record)")
    schema = records[0].get("schema")
    if schema not in _PARSERS:
        raise ManifestError(f"header: unknown schema {schema!r}")
    parser, validator = _PARSERS[schema]
    obj, header = parser(records)
    return obj, header, validator(obj, header)


def validate_manifest_file(path):
    return validate_manifest(read_jsonl(path))
