import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from toonid.core import EmbeddingVector, cosine_similarity, sample_indices
from toonid.errors import DimensionMismatchError, ZeroVectorError

from conftest import ev

finite_floats = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)
nonzero_vectors = st.lists(finite_floats, min_size=1, max_size=8).filter(
    lambda v: np.linalg.norm(v) > 1e-6)


def test_identical_vectors():
    assert cosine_similarity(ev(1, 0, 0), ev(1, 0, 0)) == 1.0


def test_orthogonal_vectors():
    assert cosine_similarity(ev(1, 0), ev(0, 1)) == 0.0


def test_derived_value():
    assert cosine_similarity(ev(1, 1), ev(1, 0)) == pytest.approx(0.70710678, abs=1e-5)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        cosine_similarity(ev(1, 0), ev(1, 0, 0))


def test_zero_vector():
    with pytest.raises(ZeroVectorError):
        cosine_similarity(ev(0, 0), ev(1, 0))


def test_symmetry():
    a, b = ev(0.3, -0.2, 0.9), ev(1.0, 2.0, -0.5)
    assert cosine_similarity(a, b) == cosine_similarity(b, a)


@given(nonzero_vectors)
def test_self_similarity_is_one(values):
    assert abs(cosine_similarity(values, values) - 1.0) < 1e-9


@given(nonzero_vectors, st.floats(min_value=1e-3, max_value=1e3))
def test_positive_scale_invariance(values, scale):
    other = np.arange(1, len(values) + 1, dtype=float)
    base = cosine_similarity(values, other)
    scaled = cosine_similarity(np.asarray(values) * scale, other)
    assert math.isclose(base, scaled, rel_tol=0, abs_tol=1e-9)


def test_embedding_rejects_empty():
    with pytest.raises(ZeroVectorError):
        EmbeddingVector(np.asarray([], dtype=float))


def test_unit_normalizes():
    u = ev(3, 4).unit()
    assert np.allclose(u, [0.6, 0.8])


@pytest.mark.parametrize("count,n,expected", [
    (10, 5, [0, 2, 4, 7, 9]),
    (5, 5, [0, 1, 2, 3, 4]),
    (1, 5, [0, 0, 0, 0, 0]),
    (2, 5, [0, 0, 0, 1, 1]),
    (7, 1, [0]),
])
def test_sample_indices(count, n, expected):
    assert sample_indices(count, n) == expected
