"""Shared domain types and embedding arithmetic.

Embeddings are stored exactly as loaded (unnormalized unless the producer says
otherwise); every matching operation normalizes internally, so double
normalization is harmless and forgetting it is impossible.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DimensionMismatchError, ZeroVectorError

NORM_TOLERANCE = 1e-6
ZERO_NORM_EPS = 1e-12

VectorLike = Union["EmbeddingVector", np.ndarray, Sequence[float]]


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    """Fixed-length real vector; `normalized` is producer metadata only."""

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ZeroVectorError("embedding must be a non-empty 1-D vector", shape=list(arr.shape))
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def unit(self) -> np.ndarray:
        """L2-normalized copy of the raw values."""
        norm = float(np.linalg.norm(self.values))
        if norm < ZERO_NORM_EPS:
            raise ZeroVectorError("cannot normalize a zero vector")
        return self.values / norm


def as_array(v: VectorLike) -> np.ndarray:
    if isinstance(v, EmbeddingVector):
        return v.values
    return np.asarray(v, dtype=np.float64)


def cosine_similarity(a: VectorLike, b: VectorLike) -> float:
    """Cosine of the angle between two vectors, in [-1, 1] (unclamped)."""
    va, vb = as_array(a), as_array(b)
    if va.shape != vb.shape:
        raise DimensionMismatchError(
            "vectors have different dimensions", dim_a=int(va.shape[0]), dim_b=int(vb.shape[0])
        )
    na, nb = float(np.linalg.norm(va)), float(np.linalg.norm(vb))
    if na < ZERO_NORM_EPS or nb < ZERO_NORM_EPS:
        raise ZeroVectorError("cosine similarity undefined for zero vectors")
    return float(np.dot(va, vb) / (na * nb))


def stack_unit_rows(vectors: Sequence[VectorLike]) -> np.ndarray:
    """Rows L2-normalized into a matrix; the workhorse for batched cosine."""
    mat = np.stack([as_array(v) for v in vectors]).astype(np.float64)
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms < ZERO_NORM_EPS):
        raise ZeroVectorError("zero vector in batch", index=int(np.argmin(norms)))
    return mat / norms[:, None]


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float
    frame_index: int

    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


@dataclass(frozen=True, eq=False)
class CharacterEntry:
    name: str
    appearance_exemplars: tuple = ()
    voice_exemplars: tuple = ()
    profile_embedding: Optional[EmbeddingVector] = None

    def __post_init__(self):
        object.__setattr__(self, "appearance_exemplars", tuple(self.appearance_exemplars))
        object.__setattr__(self, "voice_exemplars", tuple(self.voice_exemplars))


@dataclass(frozen=True, eq=False)
class CharacterBank:
    movie_id: str
    characters: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "characters", tuple(self.characters))

    def names(self) -> list[str]:
        return [c.name for c in self.characters]

    def get(self, name: str) -> CharacterEntry:
        for c in self.characters:
            if c.name == name:
                return c
        raise KeyError(name)

    def with_characters(self, characters: Sequence[CharacterEntry]) -> "CharacterBank":
        return CharacterBank(movie_id=self.movie_id, characters=tuple(characters))


@dataclass(frozen=True, eq=False)
class Track:
    """Per-shot box sequence over a contiguous frame range, one box per frame."""

    track_id: str
    shot_id: int
    boxes: tuple = ()
    sampled_features: tuple = ()
    scores: dict = field(default_factory=dict)
    assigned_character: Optional[str] = None
    seed_index: Optional[int] = None
    frame_features: Optional[dict] = None  # frame_index -> EmbeddingVector, adapter-supplied
    nms_suppressed: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        object.__setattr__(self, "sampled_features", tuple(self.sampled_features))
        object.__setattr__(self, "nms_suppressed", tuple(self.nms_suppressed))

    @property
    def first_frame(self) -> int:
        return self.boxes[0].frame_index

    @property
    def last_frame(self) -> int:
        return self.boxes[-1].frame_index

    def box_at(self, frame_index: int) -> Optional[BoundingBox]:
        offset = frame_index - self.first_frame
        if 0 <= offset < len(self.boxes):
            return self.boxes[offset]
        return None

    def time_range(self, fps: float) -> tuple[float, float]:
        """Covered interval in seconds; frame f spans [f/fps, (f+1)/fps)."""
        return self.first_frame / fps, (self.last_frame + 1) / fps


@dataclass(frozen=True, eq=False)
class SpeechSegment:
    segment_id: str
    start_s: float
    end_s: float
    transcript: str
    embedding: Optional[EmbeddingVector] = None
    cluster_id: int = -1
    predicted_speaker: Optional[str] = None
    audio_confidence: Optional[float] = None
    visual_confidence: Optional[float] = None
    label_source: Optional[str] = None  # "audio" | "visual"

    def evolve(self, **changes) -> "SpeechSegment":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class SyncObservation:
    """A (track, segment) pair carrying either a reduced score or a raw map."""

    track_ref: str
    segment_ref: str
    sync_score: Optional[float] = None
    similarity_map: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.similarity_map is not None:
            object.__setattr__(
                self, "similarity_map", np.asarray(self.similarity_map, dtype=np.float64)
            )


def sample_indices(count: int, n_samples: int) -> list[int]:
    """n_samples uniformly spaced indices over range(count), endpoints included."""
    if count <= 0:
        raise ZeroVectorError("cannot sample from an empty range")
    if n_samples == 1:
        return [0]
    positions = np.linspace(0, count - 1, n_samples)
    return [int(round(p)) for p in positions]
