"""Downstream artifacts: speaker-tagged subtitles and AD prompt packages."""

from __future__ import annotations

import json
import math
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

from .audio import UNKNOWN_SPEAKER
from .core import SpeechSegment, Track
from .errors import ResponseFormatError, TransportError

DEFAULT_VM_RETENTION = 0.45
DEFAULT_FRAME_COUNT = 8

# Fixed overlay palette; colour ids double as prompt vocabulary and index the
# RGB values used by the overlay renderer. Wraps around with numeric suffixes
# if a package ever needs more distinct characters.
PALETTE: list[tuple[str, tuple[int, int, int]]] = [
    ("red", (230, 25, 75)),
    ("green", (60, 180, 75)),
    ("blue", (0, 130, 200)),
    ("yellow", (255, 225, 25)),
    ("orange", (245, 130, 48)),
    ("purple", (145, 30, 180)),
    ("cyan", (70, 240, 240)),
    ("magenta", (240, 50, 230)),
    ("lime", (210, 245, 60)),
    ("pink", (250, 190, 212)),
]


def palette_colour(index: int) -> tuple[str, tuple[int, int, int]]:
    name, rgb = PALETTE[index % len(PALETTE)]
    cycle = index // len(PALETTE)
    return (name if cycle == 0 else f"{name}{cycle}", rgb)


def palette_table() -> dict[str, list[int]]:
    return {name: list(rgb) for name, rgb in PALETTE}


# ---------------------------------------------------------------------------
# Subtitles


@dataclass(frozen=True)
class SubtitleEntry:
    index: int
    start_s: float
    end_s: float
    speaker: str
    text: str


@dataclass(frozen=True)
class SubtitleDocument:
    entries: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    def to_srt(self) -> str:
        blocks = []
        for e in self.entries:
            blocks.append(f"{e.index}\n"
                          f"{srt_timestamp(e.start_s)} --> {srt_timestamp(e.end_s)}\n"
                          f"[{e.speaker}] {e.text}\n")
        return "\n".join(blocks)


def srt_timestamp(seconds: float) -> str:
    if seconds < 0:
        raise ValueError(f"negative timestamp: {seconds}")
    total_ms = int(round(seconds * 1000))
    ms = total_ms % 1000
    s = (total_ms // 1000) % 60
    m = (total_ms // 60000) % 60
    h = total_ms // 3600000
    return f"{h:02d}:{m:02d}:{s:02d},{ms:03d}"


def build_subtitles(segments: Sequence[SpeechSegment]) -> SubtitleDocument:
    """One cue per labeled segment, sorted by start time, 1-indexed.

    Overlapping same-speaker segments stay separate cues; unlabeled segments
    are tagged "unknown".
    """
    ordered = sorted(segments, key=lambda s: s.start_s)
    entries = [SubtitleEntry(index=i, start_s=s.start_s, end_s=s.end_s,
                             speaker=s.predicted_speaker or UNKNOWN_SPEAKER,
                             text=s.transcript)
               for i, s in enumerate(ordered, start=1)]
    return SubtitleDocument(entries=entries)


# ---------------------------------------------------------------------------
# AD prompt packages


@dataclass(frozen=True)
class ADPromptPackage:
    interval: tuple[float, float]
    frame_refs: tuple
    overlays: tuple  # ((frame_ref, BoundingBox, colour_id), ...)
    colour_legend: dict  # colour_id -> character name
    prompt_text: str
    interval_id: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "frame_refs", tuple(self.frame_refs))
        object.__setattr__(self, "overlays", tuple(self.overlays))


def _prompt_text(legend: dict[str, str]) -> str:
    if not legend:
        return ("No identified characters appear in this interval. "
                "Describe the salient visual content of the frames.")
    pairs = "; ".join(f"{colour} = {name}" for colour, name in legend.items())
    return (f"Each character is marked by a uniquely coloured bounding box: {pairs}. "
            "Describe what happens in the frames, referring to each character by name.")


def assemble_ad_prompt(interval: tuple[float, float], tracks: Sequence[Track],
                       vm_retention: float = DEFAULT_VM_RETENTION,
                       frame_count: int = DEFAULT_FRAME_COUNT, fps: float = 23.98,
                       interval_id: Optional[str] = None) -> ADPromptPackage:
    """Build the overlay geometry + colour legend + text prompt for one AD interval.

    Frames are sampled uniformly over the interval (endpoints included when
    frame_count > 1). A track contributes overlays when its winning score
    strictly exceeds the retention threshold; colours are assigned by order of
    first appearance, so identical inputs give byte-identical packages.
    """
    start_s, end_s = interval
    if not start_s < end_s:
        raise ValueError(f"empty interval: ({start_s}, {end_s})")
    if frame_count < 1:
        raise ValueError(f"frame_count must be >= 1, got {frame_count}")
    if frame_count == 1:
        times = [start_s]
    else:
        step = (end_s - start_s) / (frame_count - 1)
        times = [start_s + i * step for i in range(frame_count)]
    frame_refs = [int(math.floor(t * fps + 1e-9)) for t in times]

    retained = []
    for t in tracks:
        if t.assigned_character is None:
            continue
        s_vm = t.scores.get(t.assigned_character)
        if s_vm is None or not s_vm > vm_retention:
            continue
        lo, hi = t.time_range(fps)
        if lo < end_s and start_s < hi:
            retained.append(t)

    overlays = []
    legend: dict[str, str] = {}
    colour_of: dict[str, str] = {}
    seen_frames = set()
    for frame in frame_refs:
        if frame in seen_frames:
            continue
        seen_frames.add(frame)
        for t in retained:
            if frame in t.nms_suppressed:
                continue
            box = t.box_at(frame)
            if box is None:
                continue
            name = t.assigned_character
            if name not in colour_of:
                colour_id, _ = palette_colour(len(colour_of))
                colour_of[name] = colour_id
                legend[colour_id] = name
            overlays.append((frame, box, colour_of[name]))

    return ADPromptPackage(interval=(start_s, end_s), frame_refs=frame_refs,
                           overlays=overlays, colour_legend=legend,
                           prompt_text=_prompt_text(legend), interval_id=interval_id)


def encode_prompt_packages(packages: Sequence[ADPromptPackage]) -> list[dict]:
    records = [{"schema": "ad_prompts", "palette": palette_table()}]
    for p in packages:
        records.append({
            "interval_id": p.interval_id,
            "interval": [p.interval[0], p.interval[1]],
            "frame_refs": list(p.frame_refs),
            "overlays": [{"frame_ref": f,
                          "box": {"x1": b.x1, "y1": b.y1, "x2": b.x2, "y2": b.y2,
                                  "frame_index": b.frame_index},
                          "colour_id": c} for f, b, c in p.overlays],
            "colour_legend": p.colour_legend,
            "prompt_text": p.prompt_text,
        })
    return records


# ---------------------------------------------------------------------------
# Generation client boundary


@dataclass(frozen=True)
class GenerationRequest:
    request_id: str
    package: ADPromptPackage


@dataclass(frozen=True)
class GenerationResponse:
    request_id: str
    text: str
    model_tag: str


class GenerationClient(Protocol):
    retries: int

    def generate(self, request: GenerationRequest) -> GenerationResponse: ...


@dataclass
class MockGenerationClient:
    """Offline stand-in: echoes the legend so callers can assert the contract."""

    model_tag: str = "mock"
    retries: int = 0

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        names = ", ".join(request.package.colour_legend.values())
        text = f"Scene with {names}." if names else "Scene with no identified characters."
        return GenerationResponse(request_id=request.request_id, text=text,
                                  model_tag=self.model_tag)


@dataclass
class HttpGenerationClient:
    """Minimal JSON-over-HTTP client for an external description generator."""

    endpoint: str
    timeout_s: float = 30.0
    retries: int = 2

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        payload = json.dumps({
            "request_id": request.request_id,
            "prompt_text": request.package.prompt_text,
            "colour_legend": request.package.colour_legend,
            "frame_refs": list(request.package.frame_refs),
            "interval": list(request.package.interval),
        }).encode("utf-8")
        req = urllib.request.Request(self.endpoint, data=payload,
                                     headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                body = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise TransportError(f"generation endpoint failed: {exc}", endpoint=self.endpoint)
        try:
            return GenerationResponse(request_id=str(body["request_id"]),
                                      text=str(body["text"]),
                                      model_tag=str(body.get("model_tag", "unknown")))
        except (KeyError, TypeError) as exc:
            raise ResponseFormatError(f"malformed generation response: {exc}")


def client_from_env(env: dict) -> GenerationClient:
    """Build a client from TOONID_GEN_* variables; no endpoint means the mock."""
    endpoint = env.get("TOONID_GEN_ENDPOINT")
    if not endpoint:
        return MockGenerationClient()
    return HttpGenerationClient(endpoint=endpoint,
                                timeout_s=float(env.get("TOONID_GEN_TIMEOUT_S", "30")),
                                retries=int(env.get("TOONID_GEN_RETRIES", "2")))


def submit_generation(request: GenerationRequest, client: GenerationClient) -> GenerationResponse:
    """Call the client with retry-on-transport-failure; validate the id round trip."""
    attempts = max(0, int(getattr(client, "retries", 0))) + 1
    last: Optional[TransportError] = None
    for _ in range(attempts):
        try:
            response = client.generate(request)
            break
        except TransportError as exc:
            last = exc
    else:
        raise last
    if response.request_id != request.request_id:
        raise ResponseFormatError("response does not reference the request id",
                                  expected=request.request_id, got=response.request_id)
    return response


def submit_generation_batch(requests: Sequence[GenerationRequest], client: GenerationClient,
                            max_in_flight: int = 4) -> list[GenerationResponse]:
    """Submit many requests with bounded concurrency; responses in request order."""
    if max_in_flight < 1:
        raise ValueError(f"max_in_flight must be >= 1, got {max_in_flight}")
    if max_in_flight == 1 or len(requests) <= 1:
        return [submit_generation(r, client) for r in requests]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(lambda r: submit_generation(r, client), requests))
