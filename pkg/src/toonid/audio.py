"""Speaker recognition against the voice bank with visual-enhanced correction."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    CharacterBank,
    EmbeddingVector,
    SpeechSegment,
    SyncObservation,
    Track,
    VectorLike,
    as_array,
    cosine_similarity,
    stack_unit_rows,
)
from .errors import EmptyInputError

log = logging.getLogger(__name__)

UNKNOWN_SPEAKER = "unknown"
DEFAULT_TOP_K = 3
DEFAULT_LAMBDA = 1.0
DEFAULT_LOW_CONF = 0.35


@dataclass(frozen=True)
class ClusterAssignment:
    cluster_id: int
    assigned_character: str
    s_am: float


@dataclass(frozen=True)
class FusionConfig:
    fusion_lambda: float = DEFAULT_LAMBDA
    low_conf_threshold: float = DEFAULT_LOW_CONF

    def __post_init__(self):
        if self.fusion_lambda <= 0:
            raise ValueError(f"lambda must be > 0, got {self.fusion_lambda}")
        if not 0.0 <= self.low_conf_threshold <= 1.0:
            raise ValueError(f"low_conf_threshold must be in [0,1], got {self.low_conf_threshold}")


def cluster_centroid(segments: Sequence[SpeechSegment]) -> EmbeddingVector:
    """Arithmetic mean of member embeddings, L2-normalized."""
    if not segments:
        raise EmptyInputError("cannot compute the centroid of an empty cluster")
    embeddings = [s.embedding for s in segments]
    if any(e is None for e in embeddings):
        raise EmptyInputError("cluster contains segments without embeddings")
    mean = np.mean(np.stack([e.values for e in embeddings]), axis=0)
    norm = float(np.linalg.norm(mean))
    if norm < 1e-12:
        raise EmptyInputError("cluster centroid degenerates to the zero vector")
    return EmbeddingVector(mean / norm, normalized=True)


def audio_match(centroid: VectorLike, bank: CharacterBank, k: int = DEFAULT_TOP_K,
                cluster_id: int = -1) -> ClusterAssignment:
    """Assign a cluster to the character with the best top-k average voice similarity."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    c = as_array(centroid)
    c = c / np.linalg.norm(c)
    scores: dict[str, float] = {}
    for ch in bank.characters:
        if not ch.voice_exemplars:
            continue
        exemplars = stack_unit_rows(ch.voice_exemplars)
        sims = np.sort(exemplars @ c)
        kk = min(k, sims.shape[0])
        scores[ch.name] = float(sims[-kk:].mean())
    if not scores:
        raise EmptyInputError("no character in the bank has voice exemplars")
    best = max(scores.values())
    assigned = min(name for name, s in scores.items() if s == best)
    return ClusterAssignment(cluster_id=cluster_id, assigned_character=assigned, s_am=best)


def segment_confidence(segment: SpeechSegment, centroid: VectorLike, s_am: float) -> float:
    """c_a = s_am scaled by the segment-to-centroid cosine, clamped into [0, inf) at each step."""
    cos = cosine_similarity(segment.embedding, centroid)
    return max(0.0, s_am * max(0.0, cos))


def sync_score_reduce(similarity_map: np.ndarray) -> float:
    """Reduce a t*h*w similarity grid: max over space, mean over time."""
    grid = np.asarray(similarity_map, dtype=np.float64)
    if grid.ndim != 3 or grid.size == 0:
        raise EmptyInputError(f"expected a non-empty t*h*w grid, got shape {list(grid.shape)}")
    if not np.all(np.isfinite(grid)):
        raise ValueError("similarity map contains non-finite values")
    return float(grid.reshape(grid.shape[0], -1).max(axis=1).mean())


def resolve_sync_score(obs: SyncObservation) -> float:
    return obs.sync_score if obs.sync_score is not None else sync_score_reduce(obs.similarity_map)


def visual_enhanced_update(segment: SpeechSegment,
                           overlapping: Sequence[tuple[Track, float]],
                           cfg: FusionConfig) -> SpeechSegment:
    """Replace a low-confidence audio label when visual evidence outweighs it.

    Only fires when c_a < low_conf_threshold. The best overlapping track by
    c_v = s_sync * s_vm wins; the label flips iff lambda * c_v > c_a.
    """
    c_a = segment.audio_confidence
    if c_a is None or c_a >= cfg.low_conf_threshold:
        return segment
    best_track, best_cv = None, None
    for track, s_sync in overlapping:
        if track.assigned_character is None:
            continue
        s_vm = track.scores.get(track.assigned_character)
        if s_vm is None:
            continue
        c_v = s_sync * s_vm
        if best_cv is None or c_v > best_cv:
            best_track, best_cv = track, c_v
    if best_track is None:
        return segment
    if cfg.fusion_lambda * best_cv > c_a:
        return segment.evolve(predicted_speaker=best_track.assigned_character,
                              visual_confidence=best_cv, label_source="visual")
    return segment


def overlapping_tracks(segment: SpeechSegment, tracks: Sequence[Track], fps: float,
                       sync_scores: dict[tuple[str, str], float]) -> list[tuple[Track, float]]:
    """Tracks whose frame time range intersects the segment and that have a sync score."""
    out = []
    for t in tracks:
        lo, hi = t.time_range(fps)
        if lo < segment.end_s and segment.start_s < hi:
            key = (t.track_id, segment.segment_id)
            if key in sync_scores:
                out.append((t, sync_scores[key]))
    return out


def diarise(segments: Sequence[SpeechSegment], bank: CharacterBank, tracks: Sequence[Track],
            sync_obs: Sequence[SyncObservation], cfg: FusionConfig, fps: float,
            k: int = DEFAULT_TOP_K, fusion: bool = True) -> list[SpeechSegment]:
    """Label every segment: cluster-level audio matching, then per-segment visual correction.

    When the bank holds no voice exemplars at all, segments are labeled
    "unknown" with zero confidence and the visual path alone can relabel them.
    """
    bank_has_voices = any(ch.voice_exemplars for ch in bank.characters)
    sync_scores = {(o.track_ref, o.segment_ref): resolve_sync_score(o) for o in sync_obs}

    clusters: dict[int, list[int]] = {}
    for i, s in enumerate(segments):
        clusters.setdefault(s.cluster_id, []).append(i)

    labeled: list[Optional[SpeechSegment]] = [None] * len(segments)
    for cluster_id in sorted(clusters):
        idxs = clusters[cluster_id]
        members = [segments[i] for i in idxs]
        if bank_has_voices:
            centroid = cluster_centroid(members)
            assignment = audio_match(centroid, bank, k=k, cluster_id=cluster_id)
            for i in idxs:
                c_a = segment_confidence(segments[i], centroid, assignment.s_am)
                labeled[i] = segments[i].evolve(
                    predicted_speaker=assignment.assigned_character,
                    audio_confidence=c_a, label_source="audio")
        else:
            for i in idxs:
                labeled[i] = segments[i].evolve(predicted_speaker=UNKNOWN_SPEAKER,
                                                audio_confidence=0.0, label_source="audio")

    if fusion:
        for i, seg in enumerate(labeled):
            overlap = overlapping_tracks(seg, tracks, fps, sync_scores)
            labeled[i] = visual_enhanced_update(seg, overlap, cfg)
    return labeled
