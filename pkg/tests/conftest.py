import numpy as np
import pytest

from toonid.core import BoundingBox, EmbeddingVector


@pytest.fixture(autouse=True)
def _fixed_numpy_seed():
    # keep accidental global-RNG use from making tests flaky
    np.random.seed(12345)


def ev(*values, normalized=False) -> EmbeddingVector:
    return EmbeddingVector(np.asarray(values, dtype=np.float64), normalized=normalized)


def box(x1, y1, x2, y2, frame=0) -> BoundingBox:
    return BoundingBox(x1=x1, y1=y1, x2=x2, y2=y2, frame_index=frame)
