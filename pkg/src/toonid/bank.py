"""Character bank construction: appearance filtering and voice exemplar selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .audio import resolve_sync_score
from .core import (
    CharacterBank,
    CharacterEntry,
    EmbeddingVector,
    SpeechSegment,
    SyncObservation,
    Track,
    VectorLike,
    cosine_similarity,
)
from .errors import DanglingReferenceError, EmptyInputError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CandidateImageRecord:
    character_name: str
    embedding: EmbeddingVector
    source_tag: str  # "profile" | "web"


@dataclass(frozen=True, eq=False)
class SpeakerCluster:
    """A diariser cluster with its member segment embeddings and mean centroid."""

    cluster_id: int
    segment_embeddings: tuple
    centroid: EmbeddingVector

    def __post_init__(self):
        object.__setattr__(self, "segment_embeddings", tuple(self.segment_embeddings))

    @classmethod
    def from_segments(cls, cluster_id: int, embeddings: Sequence[EmbeddingVector]) -> "SpeakerCluster":
        mean = np.mean(np.stack([e.values for e in embeddings]), axis=0)
        norm = float(np.linalg.norm(mean))
        if norm < 1e-12:
            raise EmptyInputError("cluster centroid degenerates to the zero vector",
                                  cluster_id=cluster_id)
        return cls(cluster_id=cluster_id, segment_embeddings=tuple(embeddings),
                   centroid=EmbeddingVector(mean / norm, normalized=True))


def filter_candidates(profile: VectorLike, candidates: Sequence[CandidateImageRecord],
                      threshold: float) -> list[CandidateImageRecord]:
    """Keep candidates whose cosine similarity to the profile strictly exceeds the threshold."""
    if not -1.0 < threshold <= 1.0:
        raise ValueError(f"threshold must be in (-1, 1], got {threshold}")
    return [c for c in candidates if cosine_similarity(profile, c.embedding) > threshold]


def merge_speaker_clusters(clusters: Sequence[SpeakerCluster], tau: float) -> list[list[SpeakerCluster]]:
    """Greedy first-fit merge of diariser clusters by centroid similarity.

    Clusters are visited in input order; each joins the first existing group
    containing a member with cosine similarity > tau, otherwise opens a new
    group. Order-sensitive by design; callers must fix the iteration order.
    """
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    groups: list[list[SpeakerCluster]] = []
    for z in clusters:
        assigned = False
        for group in groups:
            max_similarity = max(cosine_similarity(z.centroid, c.centroid) for c in group)
            if max_similarity > tau:
                group.append(z)
                assigned = True
                break
        if not assigned:
            groups.append([z])
    return groups


def select_interview_exemplars(merged_groups: Sequence[Sequence[SpeakerCluster]]) -> list[EmbeddingVector]:
    """Segment embeddings of the group holding the most segments (ties: earliest-opened)."""
    if not merged_groups:
        raise EmptyInputError("no merged cluster groups to select from")
    sizes = [sum(len(c.segment_embeddings) for c in group) for group in merged_groups]
    best = int(np.argmax(sizes))  # argmax returns the first maximum: earliest-opened wins ties
    exemplars: list[EmbeddingVector] = []
    for cluster in merged_groups[best]:
        exemplars.extend(cluster.segment_embeddings)
    return exemplars


@dataclass(frozen=True)
class InMovieSelection:
    """A speech segment selected as an in-movie voice exemplar for one character."""

    segment_ref: str
    s_vm: float
    s_sync: float

    @property
    def rank_score(self) -> float:
        return self.s_vm * self.s_sync


def select_in_movie_exemplars(tracks: Sequence[Track], sync_obs: Sequence[SyncObservation],
                              vm_threshold: float, sync_threshold: float,
                              segment_ids: Optional[set] = None,
                              ignore_unknown_tracks: bool = False) -> dict[str, list[InMovieSelection]]:
    """Pick speech segments gated by visual match and sync score (both strict >).

    A segment is selected for character X when a sync observation pairs it with
    a track assigned X whose winning score exceeds ``vm_threshold`` and whose
    sync score exceeds ``sync_threshold``. A segment paired with several tracks
    of the same character keeps its highest-ranked pairing. With
    ``ignore_unknown_tracks`` observations for tracks dropped during matching
    are skipped instead of raising.
    """
    by_id = {t.track_id: t for t in tracks}
    selected: dict[str, dict[str, InMovieSelection]] = {}
    for obs in sync_obs:
        if obs.track_ref not in by_id:
            if ignore_unknown_tracks:
                log.debug("skipping sync observation for unknown track %r", obs.track_ref)
                continue
            raise DanglingReferenceError("sync observation references unknown track",
                                         track_ref=obs.track_ref)
        if segment_ids is not None and obs.segment_ref not in segment_ids:
            raise DanglingReferenceError("sync observation references unknown segment",
                                         segment_ref=obs.segment_ref)
        track = by_id[obs.track_ref]
        if track.assigned_character is None:
            continue
        s_vm = track.scores.get(track.assigned_character)
        if s_vm is None:
            continue
        s_sync = resolve_sync_score(obs)
        if s_vm > vm_threshold and s_sync > sync_threshold:
            sel = InMovieSelection(segment_ref=obs.segment_ref, s_vm=s_vm, s_sync=s_sync)
            per_char = selected.setdefault(track.assigned_character, {})
            prev = per_char.get(obs.segment_ref)
            if prev is None or sel.rank_score > prev.rank_score:
                per_char[obs.segment_ref] = sel
    return {name: list(refs.values()) for name, refs in selected.items()}


def assemble_voice_bank(bank: CharacterBank,
                        in_movie: Mapping[str, Sequence[InMovieSelection]],
                        interview: Mapping[str, Sequence[EmbeddingVector]],
                        segments_by_id: Mapping[str, SpeechSegment],
                        cap: int) -> CharacterBank:
    """Fill each character's voice exemplars: best in-movie first, interview as backfill.

    In-movie selections are ranked by s_vm * s_sync descending and truncated to
    the cap; interview exemplars are appended in input order until the cap or
    exhaustion. Characters absent from both sources keep an empty list.
    """
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    updated = []
    for ch in bank.characters:
        exemplars: list[EmbeddingVector] = []
        selections = sorted(in_movie.get(ch.name, ()), key=lambda s: -s.rank_score)
        for sel in selections[:cap]:
            segment = segments_by_id.get(sel.segment_ref)
            if segment is None or segment.embedding is None:
                raise DanglingReferenceError("in-movie selection references unknown segment",
                                             segment_ref=sel.segment_ref)
            exemplars.append(segment.embedding)
        for vec in interview.get(ch.name, ()):
            if len(exemplars) >= cap:
                break
            exemplars.append(vec)
        if not exemplars:
            log.warning("character %r has no voice exemplars from any source", ch.name)
        updated.append(CharacterEntry(name=ch.name,
                                      appearance_exemplars=ch.appearance_exemplars,
                                      voice_exemplars=exemplars,
                                      profile_embedding=ch.profile_embedding))
    return bank.with_characters(updated)
