"""Builtin deterministic feature backends.

These stand in for the heavyweight pretrained models a production deployment
would wrap (open-vocabulary detector, segmentation tracker, vision and speaker
encoders, sync network). They compute real features from pixels and samples
with plain signal processing, so the emitted manifests are meaningful on
synthetic footage and the backend seam is the single place to swap in real
models.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

VISUAL_BINS = 8  # per channel; embedding dim = 3 * bins + 3 (mean colour)
MEAN_COLOUR_WEIGHT = 3.0  # balances the stable mean against the sharper histograms
AUDIO_DIM = 16


def visual_dim(bins: int = VISUAL_BINS) -> int:
    return 3 * bins + 3


def visual_embedding(image: np.ndarray, bins: int = VISUAL_BINS,
                     background_threshold: int = 20) -> np.ndarray:
    """Colour signature of one crop: soft per-channel histograms + mean colour.

    Near-black pixels count as background and are excluded so the signature
    tracks the character colours, not the matte. Soft binning plus the mean
    colour keep small shade shifts from swinging the cosine.
    """
    if image.size == 0:
        return np.zeros(visual_dim(bins))
    flat = image.reshape(-1, 3)
    fg = flat[flat.max(axis=1) > background_threshold]
    if fg.size == 0:
        fg = flat
    parts = []
    for c in range(3):
        pos = fg[:, c].astype(np.float64) / 256.0 * bins - 0.5
        lo = np.floor(pos).astype(int)
        frac = pos - lo
        hist = np.zeros(bins)
        np.add.at(hist, np.clip(lo, 0, bins - 1), 1.0 - frac)
        np.add.at(hist, np.clip(lo + 1, 0, bins - 1), frac)
        parts.append(hist / hist.sum())
    parts.append(fg.mean(axis=0) / 255.0 * MEAN_COLOUR_WEIGHT)
    return np.concatenate(parts)


def audio_embedding(samples: np.ndarray, sample_rate: int, dim: int = AUDIO_DIM) -> np.ndarray:
    """Log band energies over a log-spaced frequency grid (Hann-windowed)."""
    if samples.size < 2:
        return np.zeros(dim)
    spectrum = np.abs(np.fft.rfft(samples * np.hanning(samples.size)))
    freqs = np.fft.rfftfreq(samples.size, d=1.0 / sample_rate)
    edges = np.logspace(np.log10(50.0), np.log10(sample_rate / 2.0), dim + 1)
    bands = np.zeros(dim)
    for i in range(dim):
        mask = (freqs >= edges[i]) & (freqs < edges[i + 1])
        bands[i] = spectrum[mask].sum()
    return np.log1p(bands)


def foreground_boxes(frame: np.ndarray, intensity_threshold: int = 20,
                     min_area: int = 30) -> list[tuple[float, float, float, float]]:
    """Boxes of connected non-background components, x1/y1/x2/y2 in pixels."""
    mask = (frame.max(axis=2) > intensity_threshold)
    labels, count = ndimage.label(mask)
    boxes = []
    for obj in ndimage.find_objects(labels):
        if obj is None:
            continue
        ys, xs = obj
        area = (ys.stop - ys.start) * (xs.stop - xs.start)
        if area >= min_area:
            boxes.append((float(xs.start), float(ys.start), float(xs.stop), float(ys.stop)))
    return sorted(boxes)


def shot_boundaries(frames: np.ndarray, diff_threshold: float = 30.0) -> list[tuple[int, int]]:
    """Contiguous shot ranges from mean absolute frame differences."""
    n = frames.shape[0]
    cuts = [0]
    for f in range(1, n):
        diff = np.abs(frames[f].astype(np.int16) - frames[f - 1].astype(np.int16)).mean()
        if diff > diff_threshold:
            cuts.append(f)
    cuts.append(n)
    return [(cuts[i], cuts[i + 1]) for i in range(len(cuts) - 1)]


def box_iou(a, b) -> float:
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def track_from_seed(frames: np.ndarray, shot: tuple[int, int], seed_frame: int,
                    seed_box, iou_threshold: float = 0.2, **detect_kwargs) -> dict:
    """Propagate one seed box bidirectionally over a shot by greedy IoU match.

    Returns {frame_index: box}; stops in either direction once no component
    overlaps the last box.
    """
    start, stop = shot
    covered = {seed_frame: seed_box}
    for direction in (1, -1):
        last = seed_box
        f = seed_frame + direction
        while start <= f < stop:
            candidates = foreground_boxes(frames[f], **detect_kwargs)
            best, best_iou = None, iou_threshold
            for c in candidates:
                iou = box_iou(last, c)
                if iou > best_iou:
                    best, best_iou = c, iou
            if best is None:
                break
            covered[f] = best
            last = best
            f += direction
    return covered


def rms_envelope(samples: np.ndarray, sample_rate: int, window_s: float = 0.02,
                 hop_s: float = 0.01) -> tuple[np.ndarray, float]:
    """Windowed RMS energy; returns (values, hop seconds)."""
    window = max(1, int(window_s * sample_rate))
    hop = max(1, int(hop_s * sample_rate))
    if samples.size < window:
        return np.zeros(0), hop / sample_rate
    starts = np.arange(0, samples.size - window + 1, hop)
    values = np.asarray([np.sqrt(np.mean(samples[s:s + window] ** 2)) for s in starts])
    return values, hop / sample_rate


def speech_segments(samples: np.ndarray, sample_rate: int, threshold: float = 0.01,
                    min_duration_s: float = 0.1) -> list[tuple[float, float]]:
    """Energy VAD: merged runs of windows whose RMS clears the threshold."""
    values, hop = rms_envelope(samples, sample_rate)
    segments = []
    run_start = None
    for i, v in enumerate(values):
        if v > threshold and run_start is None:
            run_start = i * hop
        elif v <= threshold and run_start is not None:
            segments.append((run_start, i * hop))
            run_start = None
    if run_start is not None:
        segments.append((run_start, values.size * hop))
    return [(s, e) for s, e in segments if e - s >= min_duration_s]


def motion_energy(frames: np.ndarray, boxes: dict, frame_range) -> np.ndarray:
    """Mean absolute inter-frame difference inside a track's box, per frame."""
    values = []
    for f in frame_range:
        box = boxes.get(f)
        if box is None or f == 0:
            values.append(0.0)
            continue
        x1, y1, x2, y2 = (int(round(v)) for v in box)
        crop_now = frames[f, y1:y2, x1:x2].astype(np.int16)
        crop_prev = frames[f - 1, y1:y2, x1:x2].astype(np.int16)
        if crop_now.size == 0:
            values.append(0.0)
            continue
        values.append(float(np.abs(crop_now - crop_prev).mean()))
    return np.asarray(values)
