import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from toonid_adapters.media import write_wav

FPS = 24.0
SAMPLE_RATE = 16000
W, H = 160, 120

RED = (200, 30, 30)
BLUE = (30, 30, 200)
GREEN = (30, 200, 30)


def _square(frame, x, y, size, colour):
    frame[y:y + size, x:x + size] = colour


def make_clip(root: Path, silent=False) -> Path:
    """Two-second clip: shot 0 has a moving red and a static blue square on
    black; shot 1 has a green square on dark grey (scene change forces a cut).
    Audio carries two tone bursts aligned with the shots."""
    root = Path(root)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    n_frames = 48
    for f in range(n_frames):
        frame = np.zeros((H, W, 3), dtype=np.uint8)
        if f < 24:
            _square(frame, 20 + 2 * f, 40, 30, RED)
            _square(frame, 110, 30, 30, BLUE)
        else:
            frame[:] = 10
            _square(frame, 60, 30 + (f - 24), 30, GREEN)
        Image.fromarray(frame).save(root / "frames" / f"{f:05d}.png")

    samples = np.zeros(int(2.0 * SAMPLE_RATE))
    if not silent:
        t = np.arange(samples.size) / SAMPLE_RATE
        burst1 = (t >= 0.2) & (t < 0.8)
        burst2 = (t >= 1.2) & (t < 1.7)
        samples[burst1] = 0.4 * np.sin(2 * np.pi * 440 * t[burst1])
        samples[burst2] = 0.4 * np.sin(2 * np.pi * 880 * t[burst2])
    write_wav(root / "audio.wav", samples, SAMPLE_RATE)
    (root / "clip.json").write_text(json.dumps({"fps": FPS, "sample_rate": SAMPLE_RATE}))
    return root


def make_image_set(root: Path) -> Path:
    """Candidate images for two 'characters' distinguished by colour."""
    rng = np.random.default_rng(5)
    root = Path(root)
    for name, colour in (("Red", RED), ("Blue", BLUE)):
        for tag, count in (("profile", 1), ("web", 3)):
            d = root / name / tag
            d.mkdir(parents=True, exist_ok=True)
            for i in range(count):
                img = np.zeros((40, 40, 3), dtype=np.uint8)
                shade = np.clip(np.asarray(colour) + rng.integers(-20, 21, size=3), 0, 255)
                img[4:36, 4:36] = shade
                Image.fromarray(img).save(d / f"{i}.png")
    return root


@pytest.fixture(scope="session")
def clip_dir(tmp_path_factory):
    return make_clip(tmp_path_factory.mktemp("clip"))


@pytest.fixture(scope="session")
def image_set(tmp_path_factory):
    return make_image_set(tmp_path_factory.mktemp("images"))


DETECT_CONFIG = {"shot_diff_threshold": 5.0, "min_area": 100}
