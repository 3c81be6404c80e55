import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from toonid.adapt import (
    ProjectionMatrix,
    TrainConfig,
    apply_projection,
    batch_loss_and_grad,
    cosine_annealing_lr,
    infonce_loss,
    loss_gradient,
    sample_epoch_batches,
    train_projection,
)
from toonid.core import CharacterBank, CharacterEntry, EmbeddingVector
from toonid.errors import DegenerateProjectionError, DimensionMismatchError, EmptyInputError

from conftest import ev


def bank_of(counts, dim=4, seed=0):
    rng = np.random.default_rng(seed)
    chars = []
    for p, n in enumerate(counts):
        exemplars = [EmbeddingVector(rng.normal(size=dim)) for _ in range(n)]
        chars.append(CharacterEntry(f"c{p}", appearance_exemplars=exemplars))
    return CharacterBank("toy", characters=chars)


class TestInfonceLoss:
    def test_uniform_logits_closed_form(self):
        # anchor orthogonal to positive and all negatives: every logit is 0
        a, p = ev(1, 0, 0), ev(0, 1, 0)
        negatives = [ev(0, 1, 0)] * 9
        assert infonce_loss(a, p, negatives, 0.07) == pytest.approx(math.log(10), abs=1e-12)

    def test_saturated_separation(self):
        a = ev(1, 0)
        assert infonce_loss(a, ev(1, 0), [ev(-1, 0)] * 3, 0.07) < 1e-10

    def test_nonnegative_and_uniform_value(self):
        rng = np.random.default_rng(1)
        for n in range(1, 8):
            a = EmbeddingVector(rng.normal(size=5))
            p = EmbeddingVector(rng.normal(size=5))
            loss = infonce_loss(a, p, [p] * n, 0.07)
            assert loss == pytest.approx(math.log(1 + n), abs=1e-12)

    def test_monotone_in_positive_similarity(self):
        negatives = [ev(0, 1), ev(0.5, 0.5)]
        losses = [infonce_loss(ev(1, 0), ev(math.cos(t), math.sin(t)), negatives, 0.07)
                  for t in (1.2, 0.8, 0.4, 0.0)]
        assert losses == sorted(losses, reverse=True)

    def test_requires_negatives(self):
        with pytest.raises(EmptyInputError):
            infonce_loss(ev(1, 0), ev(1, 0), [], 0.07)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            infonce_loss(ev(1, 0), ev(1, 0, 0), [ev(0, 1)], 0.07)


class TestSampleEpochBatches:
    def test_shapes(self):
        samples = sample_epoch_batches(bank_of([2, 2]), 0)
        assert len(samples) == 2
        for s in samples:
            assert s.anchor_index != s.positive_index
            assert len(s.negative_indices) == 1

    def test_ten_characters_gives_nine_negatives(self):
        samples = sample_epoch_batches(bank_of([3] * 10), 0)
        assert all(len(s.negative_indices) == 9 for s in samples)

    def test_deterministic(self):
        a = sample_epoch_batches(bank_of([4, 3, 5]), 99)
        b = sample_epoch_batches(bank_of([4, 3, 5]), 99)
        assert [(s.anchor_index, s.positive_index, s.negative_indices) for s in a] == \
               [(s.anchor_index, s.positive_index, s.negative_indices) for s in b]

    def test_too_few_exemplars_names_character(self):
        with pytest.raises(EmptyInputError) as exc:
            sample_epoch_batches(bank_of([2, 1]), 0)
        assert "c1" in str(exc.value)

    def test_negatives_cover_every_other_character(self):
        samples = sample_epoch_batches(bank_of([2, 2, 2, 2]), 5)
        for p, s in enumerate(samples):
            assert [name for name, _ in s.negative_indices] == \
                   [f"c{q}" for q in range(4) if q != p]


def finite_difference(weights, batch, temperature, step=1e-5):
    fd = np.zeros_like(weights)
    for i in range(weights.shape[0]):
        for j in range(weights.shape[1]):
            w_plus = weights.copy()
            w_plus[i, j] += step
            w_minus = weights.copy()
            w_minus[i, j] -= step
            lp, _ = batch_loss_and_grad(w_plus, batch, temperature)
            lm, _ = batch_loss_and_grad(w_minus, batch, temperature)
            fd[i, j] = (lp - lm) / (2 * step)
    return fd


def max_relative_error(g, fd):
    denom = np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-6)
    return float(np.max(np.abs(g - fd) / denom))


class TestLossGradient:
    def test_identity_matches_finite_differences(self):
        bank = bank_of([3, 3], dim=4, seed=2)
        batch = sample_epoch_batches(bank, 0)
        W = ProjectionMatrix.identity(4)
        g = loss_gradient(W, batch, 0.07)
        fd = finite_difference(W.weights, batch, 0.07)
        assert max_relative_error(g, fd) < 1e-4

    def test_random_instances(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            dim = int(rng.integers(4, 17))
            bank = bank_of([int(rng.integers(2, 5)) for _ in range(int(rng.integers(2, 5)))],
                           dim=dim, seed=int(rng.integers(1 << 30)))
            batch = sample_epoch_batches(bank, int(rng.integers(1 << 30)))
            weights = np.eye(dim) + rng.normal(scale=0.3, size=(dim, dim))
            g = loss_gradient(ProjectionMatrix(weights), batch, 0.07)
            fd = finite_difference(weights, batch, 0.07)
            assert max_relative_error(g, fd) < 1e-4

    def test_degenerate_projection_rejected(self):
        bank = bank_of([2, 2])
        batch = sample_epoch_batches(bank, 0)
        with pytest.raises(DegenerateProjectionError):
            loss_gradient(ProjectionMatrix(np.zeros((4, 4))), batch, 0.07)


class TestSchedule:
    @given(st.integers(min_value=1, max_value=500))
    def test_endpoints(self, epochs):
        assert cosine_annealing_lr(0, epochs, 6e-4, 5e-6) == pytest.approx(6e-4)
        assert cosine_annealing_lr(epochs, epochs, 6e-4, 5e-6) == pytest.approx(5e-6)

    def test_monotone_nonincreasing(self):
        values = [cosine_annealing_lr(e, 75, 6e-4, 5e-6) for e in range(76)]
        assert all(a >= b for a, b in zip(values, values[1:]))


class TestTrainProjection:
    def test_zero_epochs_is_identity(self):
        result = train_projection(bank_of([2, 2]), TrainConfig(epochs=0))
        assert np.array_equal(result.projection.weights, np.eye(4))
        assert result.losses == []

    def test_defaults_match_contract(self):
        cfg = TrainConfig()
        assert (cfg.epochs, cfg.lr_start, cfg.lr_end, cfg.temperature) == (75, 6e-4, 5e-6, 0.07)

    def test_fixed_seed_bitwise_reproducible(self):
        cfg = TrainConfig(epochs=10, lr_start=1e-2, lr_end=1e-3, seed=7)
        w1 = train_projection(bank_of([3, 3, 3]), cfg).projection.weights
        w2 = train_projection(bank_of([3, 3, 3]), cfg).projection.weights
        assert np.array_equal(w1, w2)

    def test_separable_bank_achieves_margin(self):
        # strong shared component makes characters entangled at identity;
        # a linear map can remove it
        rng = np.random.default_rng(42)
        chars = []
        for p in range(3):
            exemplars = []
            for _ in range(6):
                v = np.zeros(4)
                v[0] = 5.0
                v[1 + p] = 1.0
                v += rng.normal(scale=0.3, size=4)
                exemplars.append(EmbeddingVector(v))
            chars.append(CharacterEntry(f"c{p}", appearance_exemplars=exemplars))
        bank = CharacterBank("toy", characters=chars)

        def margin(projection):
            from toonid.adapt import project_rows

            mats = [project_rows(projection,
                                 np.stack([e.values for e in ch.appearance_exemplars]))
                    for ch in bank.characters]
            intra = min((m @ m.T)[np.triu_indices(m.shape[0], 1)].min() for m in mats)
            inter = max((mats[i] @ mats[j].T).max()
                        for i in range(3) for j in range(i + 1, 3))
            return intra, inter

        intra0, inter0 = margin(None)
        assert intra0 < inter0  # entangled before training
        result = train_projection(bank, TrainConfig(epochs=300, lr_start=0.5, lr_end=0.01,
                                                    temperature=0.07, seed=3))
        intra1, inter1 = margin(result.projection)
        assert intra1 > inter1

    def test_loss_curve_logged(self):
        result = train_projection(bank_of([3, 3]), TrainConfig(epochs=5, lr_start=1e-2,
                                                               lr_end=1e-3))
        assert len(result.losses) == 5


class TestApplyProjection:
    def test_identity_keeps_unit_vector(self):
        out = apply_projection(ProjectionMatrix.identity(2), ev(1, 0))
        assert np.allclose(out.values, [1, 0])

    def test_scale_invariance(self):
        out = apply_projection(ProjectionMatrix(2 * np.eye(2)), ev(0.6, 0.8))
        assert np.allclose(out.values, [0.6, 0.8])

    def test_rotation(self):
        rot = ProjectionMatrix(np.array([[0.0, -1.0], [1.0, 0.0]]))
        out = apply_projection(rot, ev(1, 0))
        assert np.allclose(out.values, [0, 1])

    def test_degenerate(self):
        with pytest.raises(DegenerateProjectionError):
            apply_projection(ProjectionMatrix(np.zeros((2, 2))), ev(1, 0))

    def test_json_roundtrip(self):
        m = ProjectionMatrix(np.arange(6, dtype=float).reshape(2, 3))
        back = ProjectionMatrix.from_json(m.to_json())
        assert np.array_equal(back.weights, m.weights)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=-1)
    with pytest.raises(ValueError):
        TrainConfig(lr_start=1e-6, lr_end=1e-4)
    with pytest.raises(ValueError):
        TrainConfig(temperature=0.0)
