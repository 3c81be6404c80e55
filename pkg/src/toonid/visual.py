"""Visual character recognition: seed-track matching, identification, and NMS."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .adapt import ProjectionMatrix, project_rows
from .core import BoundingBox, CharacterBank, Track, sample_indices, stack_unit_rows
from .errors import EmptyInputError

N_SEEDS = 3
N_SAMPLED_FRAMES = 5
DEFAULT_TOP_K = 3


@dataclass(frozen=True)
class SeedTrackSet:
    seed_index: int
    tracks: tuple

    def __post_init__(self):
        object.__setattr__(self, "tracks", tuple(self.tracks))


@dataclass(frozen=True)
class MatchedTrackGroup:
    members: tuple  # one track per seed, exactly 3
    score: float  # min pairwise track IoU at match time


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area() + b.area() - inter
    return inter / union if union > 0 else 0.0


def track_iou(a: Track, b: Track) -> float:
    """Mean per-frame box IoU over frames covered by both tracks; 0 if disjoint."""
    lo = max(a.first_frame, b.first_frame)
    hi = min(a.last_frame, b.last_frame)
    if lo > hi:
        return 0.0
    total = sum(box_iou(a.box_at(f), b.box_at(f)) for f in range(lo, hi + 1))
    return total / (hi - lo + 1)


def tripartite_match(sets: Sequence[SeedTrackSet], iou_threshold: float) -> list[MatchedTrackGroup]:
    """Greedy best-first matching of one track per seed by min pairwise track IoU.

    All cross-seed triples are scored, then accepted in descending score order
    while none of the three members is already used and the score clears the
    threshold (>=). Leftover tracks are dropped as likely outliers.
    """
    if len(sets) != N_SEEDS:
        raise ValueError(f"expected exactly {N_SEEDS} seed track sets, got {len(sets)}")
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    s0, s1, s2 = (s.tracks for s in sets)
    scored = []
    for (i, a), (j, b), (k, c) in itertools.product(
            enumerate(s0), enumerate(s1), enumerate(s2)):
        score = min(track_iou(a, b), track_iou(a, c), track_iou(b, c))
        if score >= iou_threshold:
            scored.append((score, i, j, k))
    scored.sort(key=lambda t: (-t[0], t[1], t[2], t[3]))
    used = [set(), set(), set()]
    groups = []
    for score, i, j, k in scored:
        if i in used[0] or j in used[1] or k in used[2]:
            continue
        used[0].add(i)
        used[1].add(j)
        used[2].add(k)
        groups.append(MatchedTrackGroup(members=(s0[i], s1[j], s2[k]), score=score))
    return groups


def _median_box(boxes: Sequence[BoundingBox], frame: int) -> BoundingBox:
    return BoundingBox(
        x1=float(np.median([b.x1 for b in boxes])),
        y1=float(np.median([b.y1 for b in boxes])),
        x2=float(np.median([b.x2 for b in boxes])),
        y2=float(np.median([b.y2 for b in boxes])),
        frame_index=frame,
    )


def merge_group(group: MatchedTrackGroup, track_id: Optional[str] = None) -> Track:
    """Collapse a matched group into one track.

    Coverage is the union of member coverage (contiguous because members
    pairwise overlap); each frame's box is the coordinate-wise median of the
    members present there. Features come from the seed-0 member: resampled at
    5 uniform frames when it carries per-frame features, passed through
    otherwise. The merged track keeps the seed-0 member's id so that sync
    observations recorded upstream against seed-0 tracks stay resolvable.
    """
    members = group.members
    first = min(m.first_frame for m in members)
    last = max(m.last_frame for m in members)
    boxes = []
    for frame in range(first, last + 1):
        present = [m.box_at(frame) for m in members]
        present = [b for b in present if b is not None]
        boxes.append(_median_box(present, frame))

    seed0 = members[0]
    if seed0.frame_features:
        available = sorted(seed0.frame_features)
        frames = [first + i for i in sample_indices(last - first + 1, N_SAMPLED_FRAMES)]
        feats = []
        for f in frames:
            nearest = min(available, key=lambda k: (abs(k - f), k))
            feats.append(seed0.frame_features[nearest])
    else:
        feats = list(seed0.sampled_features)

    return Track(
        track_id=track_id if track_id is not None else seed0.track_id,
        shot_id=seed0.shot_id,
        boxes=boxes,
        sampled_features=feats,
        scores={},
        assigned_character=None,
    )


def visual_match(track: Track, bank: CharacterBank, k: int = DEFAULT_TOP_K,
                 projection: Optional[ProjectionMatrix] = None) -> tuple[dict[str, float], str, float]:
    """Score a track against every character's appearance exemplars.

    Per character and sampled feature, the top-min(k, n) cosine similarities
    against the exemplars are averaged; the character score is the max over
    the 5 sampled features. Returns (scores, assigned name, winning score);
    ties break lexicographically.
    """
    if len(track.sampled_features) != N_SAMPLED_FRAMES:
        raise ValueError(f"track {track.track_id!r} has {len(track.sampled_features)} sampled "
                         f"features; exactly {N_SAMPLED_FRAMES} required")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    feats = project_rows(projection, stack_unit_rows(track.sampled_features))
    scores: dict[str, float] = {}
    for ch in bank.characters:
        if not ch.appearance_exemplars:
            continue
        exemplars = project_rows(projection, stack_unit_rows(ch.appearance_exemplars))
        sims = feats @ exemplars.T  # (5, n_exemplars)
        kk = min(k, sims.shape[1])
        top = np.sort(sims, axis=1)[:, -kk:]
        scores[ch.name] = float(np.max(top.mean(axis=1)))
    if not scores:
        raise EmptyInputError("no character in the bank has appearance exemplars")
    best = max(scores.values())
    assigned = min(name for name, s in scores.items() if s == best)
    return scores, assigned, best


def frame_nms(detections: Sequence[tuple[BoundingBox, float]],
              iou_threshold: float) -> list[tuple[BoundingBox, float]]:
    """Greedy NMS over one frame's detections; score ties keep input order."""
    order = sorted(range(len(detections)), key=lambda i: -detections[i][1])
    retained: list[tuple[BoundingBox, float]] = []
    for i in order:
        box, score = detections[i]
        if all(box_iou(box, kept) < iou_threshold for kept, _ in retained):
            retained.append((box, score))
    return retained


def recognize_tracks(raw_tracks: Sequence[Track], bank: CharacterBank, k: int = DEFAULT_TOP_K,
                     iou_threshold: float = 0.5, nms_threshold: float = 0.5,
                     projection: Optional[ProjectionMatrix] = None,
                     jobs: int = 1) -> list[Track]:
    """Full visual stage: per-shot tripartite matching, identification, per-frame NMS.

    Input tracks must carry seed_index (0..2); shots are processed in ascending
    shot order. When no track in the manifest has a seed index, the tracks are
    taken as pre-merged candidates and matching is skipped.
    """
    shots = sorted({t.shot_id for t in raw_tracks})
    seeded = any(t.seed_index is not None for t in raw_tracks)

    def process_shot(shot_id: int) -> list[Track]:
        in_shot = [t for t in raw_tracks if t.shot_id == shot_id]
        if not seeded:
            candidates = in_shot
        else:
            sets = [SeedTrackSet(seed_index=s,
                                 tracks=[t for t in in_shot if t.seed_index == s])
                    for s in range(N_SEEDS)]
            groups = tripartite_match(sets, iou_threshold)
            candidates = [merge_group(g) for g in groups]
        labeled = []
        for t in candidates:
            scores, assigned, _ = visual_match(t, bank, k=k, projection=projection)
            labeled.append(Track(track_id=t.track_id, shot_id=t.shot_id, boxes=t.boxes,
                                 sampled_features=t.sampled_features, scores=scores,
                                 assigned_character=assigned))
        return labeled

    if jobs > 1 and len(shots) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_shot = list(pool.map(process_shot, shots))
    else:
        per_shot = [process_shot(s) for s in shots]
    labeled = [t for shot_tracks in per_shot for t in shot_tracks]

    # Per-frame NMS across labeled tracks; a suppressed (track, frame) pair is
    # recorded rather than cut out, preserving track contiguity.
    by_frame: dict[int, list[tuple[int, BoundingBox, float]]] = {}
    for idx, t in enumerate(labeled):
        score = t.scores.get(t.assigned_character, 0.0) if t.assigned_character else 0.0
        for b in t.boxes:
            by_frame.setdefault(b.frame_index, []).append((idx, b, score))
    suppressed: dict[int, list[int]] = {i: [] for i in range(len(labeled))}
    for frame, entries in by_frame.items():
        kept = frame_nms([(b, s) for _, b, s in entries], nms_threshold)
        kept_boxes = {id(b) for b, _ in kept}
        # frame_nms returns the exact input objects, so identity lookup is safe
        for idx, b, _ in entries:
            if id(b) not in kept_boxes:
                suppressed[idx].append(frame)

    return [Track(track_id=t.track_id, shot_id=t.shot_id, boxes=t.boxes,
                  sampled_features=t.sampled_features, scores=t.scores,
                  assigned_character=t.assigned_character,
                  nms_suppressed=tuple(sorted(suppressed[i])))
            for i, t in enumerate(labeled)]


def frame_detections(tracks: Sequence[Track]) -> dict[int, list[tuple[BoundingBox, float, str]]]:
    """Per-frame (box, score, character) detections from labeled tracks, minus NMS-suppressed."""
    out: dict[int, list[tuple[BoundingBox, float, str]]] = {}
    for t in tracks:
        if t.assigned_character is None:
            continue
        score = t.scores.get(t.assigned_character, 0.0)
        skip = set(t.nms_suppressed)
        for b in t.boxes:
            if b.frame_index in skip:
                continue
            out.setdefault(b.frame_index, []).append((b, score, t.assigned_character))
    return out
