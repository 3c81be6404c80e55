"""toonid: audio-visual character recognition engine for animated movies."""

from .core import (
    BoundingBox,
    CharacterBank,
    CharacterEntry,
    EmbeddingVector,
    SpeechSegment,
    SyncObservation,
    Track,
    cosine_similarity,
)
from .manifests import validate_manifest, validate_manifest_file

__all__ = [
    "BoundingBox",
    "CharacterBank",
    "CharacterEntry",
    "EmbeddingVector",
    "SpeechSegment",
    "SyncObservation",
    "Track",
    "cosine_similarity",
    "validate_manifest",
    "validate_manifest_file",
]

__version__ = "0.1.0"
