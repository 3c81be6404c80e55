"""Clip-directory loading: PNG frame sequence plus a mono WAV soundtrack.

A clip is a directory containing ``frames/%05d.png``, ``audio.wav`` and a
``clip.json`` with at least {"fps": float}.
"""

from __future__ import annotations

import json
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


@dataclass
class Clip:
    frames: np.ndarray  # (n, h, w, 3) uint8
    audio: np.ndarray  # float samples in [-1, 1]
    sample_rate: int
    fps: float

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    def frame_window(self, frame_index: int) -> np.ndarray:
        """Audio samples covering one video frame."""
        lo = int(frame_index / self.fps * self.sample_rate)
        hi = int((frame_index + 1) / self.fps * self.sample_rate)
        return self.audio[lo:hi]


def frame_path(clip_dir, frame_index: int) -> Path:
    return Path(clip_dir) / "frames" / f"{frame_index:05d}.png"


def load_clip(clip_dir) -> Clip:
    clip_dir = Path(clip_dir)
    meta = json.loads((clip_dir / "clip.json").read_text())
    frame_files = sorted((clip_dir / "frames").glob("*.png"))
    if not frame_files:
        raise FileNotFoundError(f"no frames found under {clip_dir / 'frames'}")
    frames = np.stack([np.asarray(Image.open(f).convert("RGB")) for f in frame_files])
    audio, sample_rate = read_wav(clip_dir / "audio.wav")
    return Clip(frames=frames, audio=audio, sample_rate=sample_rate,
                fps=float(meta["fps"]))


def read_wav(path) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as wav:
        assert wav.getsampwidth() == 2, "expected 16-bit PCM"
        rate = wav.getframerate()
        raw = wav.readframes(wav.getnframes())
    data = np.frombuffer(raw, dtype=np.int16).astype(np.float64) / 32768.0
    with wave.open(str(path), "rb") as wav:
        if wav.getnchannels() > 1:
            data = data.reshape(-1, wav.getnchannels()).mean(axis=1)
    return data, rate


def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    pcm = np.clip(samples, -1.0, 1.0)
    pcm = (pcm * 32767.0).astype(np.int16)
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(sample_rate)
        wav.writeframes(pcm.tobytes())
