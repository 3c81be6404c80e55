"""Linear-projection adaptation of visual embeddings with a contrastive objective.

Instead of fine-tuning an encoder, a square linear map W is trained over the
exported features; every embedding is projected (x -> Wx) and L2-normalized
before any similarity is computed. W starts at identity so zero epochs is a
no-op.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import CharacterBank, EmbeddingVector, VectorLike, as_array
from .errors import (
    DegenerateProjectionError,
    DimensionMismatchError,
    EmptyInputError,
    ZeroVectorError,
)

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.07
DEFAULT_EPOCHS = 75
DEFAULT_LR_START = 6e-4
DEFAULT_LR_END = 5e-6


@dataclass(frozen=True, eq=False)
class ProjectionMatrix:
    weights: np.ndarray  # (d_out, d_in)

    def __post_init__(self):
        arr = np.asarray(self.weights, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"weights must be a 2-D matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("weights contain non-finite entries")
        object.__setattr__(self, "weights", arr)

    @property
    def d_out(self) -> int:
        return int(self.weights.shape[0])

    @property
    def d_in(self) -> int:
        return int(self.weights.shape[1])

    @classmethod
    def identity(cls, dim: int) -> "ProjectionMatrix":
        return cls(np.eye(dim))

    def to_json(self, losses: Optional[Sequence[float]] = None) -> dict:
        doc = {"d_out": self.d_out, "d_in": self.d_in,
               "weights": [float(x) for x in self.weights.reshape(-1)]}
        if losses is not None:
            doc["losses"] = [float(x) for x in losses]
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "ProjectionMatrix":
        d_out, d_in = int(doc["d_out"]), int(doc["d_in"])
        weights = np.asarray(doc["weights"], dtype=np.float64).reshape(d_out, d_in)
        return cls(weights)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = DEFAULT_EPOCHS
    lr_start: float = DEFAULT_LR_START
    lr_end: float = DEFAULT_LR_END
    temperature: float = DEFAULT_TEMPERATURE
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if not self.lr_start >= self.lr_end > 0:
            raise ValueError(f"need lr_start >= lr_end > 0, got {self.lr_start}, {self.lr_end}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")


def _unit(v: np.ndarray, what: str) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm < 1e-12:
        raise ZeroVectorError(f"{what} is a zero vector")
    return v / norm


def infonce_loss(anchor: VectorLike, positive: VectorLike, negatives: Sequence[VectorLike],
                 temperature: float = DEFAULT_TEMPERATURE) -> float:
    """Contrastive loss of one positive pair against a set of negatives.

    Inputs are L2-normalized internally; returns
    -log[exp(<a,p>/t) / (exp(<a,p>/t) + sum_q exp(<a,n_q>/t))].
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    if not negatives:
        raise EmptyInputError("at least one negative is required")
    a = _unit(as_array(anchor), "anchor")
    others = [as_array(positive)] + [as_array(n) for n in negatives]
    for v in others:
        if v.shape != a.shape:
            raise DimensionMismatchError("embedding dimensions differ",
                                         dim_a=a.shape[0], dim_b=v.shape[0])
    mat = np.stack([_unit(v, "embedding") for v in others])
    logits = mat @ a / temperature
    # stable logsumexp: loss = logsumexp(logits) - logits[0]
    m = float(np.max(logits))
    return float(m + np.log(np.sum(np.exp(logits - m))) - logits[0])


@dataclass(frozen=True)
class ContrastiveSample:
    """One character's positive pair plus one negative per other character."""

    character: str
    anchor_index: int
    positive_index: int
    negative_indices: tuple  # ((character_name, exemplar_index), ...)
    anchor: np.ndarray
    positive: np.ndarray
    negatives: np.ndarray  # (n_neg, d)


def sample_epoch_batches(bank: CharacterBank, rng_seed: int) -> list[ContrastiveSample]:
    """One contrastive sample per character, deterministic in the seed.

    Every character needs at least two appearance exemplars (positives must be
    a distinct pair, and each character also serves as a negative pool).
    """
    for ch in bank.characters:
        if len(ch.appearance_exemplars) < 2:
            raise EmptyInputError(
                f"character {ch.name!r} has {len(ch.appearance_exemplars)} appearance "
                "exemplars; at least 2 are required", character=ch.name)
    rng = np.random.default_rng(rng_seed)
    samples = []
    for p, ch in enumerate(bank.characters):
        n = len(ch.appearance_exemplars)
        i = int(rng.integers(n))
        j = int(rng.integers(n - 1))
        if j >= i:
            j += 1
        negative_indices = []
        negatives = []
        for q, other in enumerate(bank.characters):
            if q == p:
                continue
            idx = int(rng.integers(len(other.appearance_exemplars)))
            negative_indices.append((other.name, idx))
            negatives.append(other.appearance_exemplars[idx].values)
        samples.append(ContrastiveSample(
            character=ch.name,
            anchor_index=i,
            positive_index=j,
            negative_indices=tuple(negative_indices),
            anchor=ch.appearance_exemplars[i].values,
            positive=ch.appearance_exemplars[j].values,
            negatives=np.stack(negatives),
        ))
    return samples


def _sample_loss_and_grad(W: np.ndarray, sample: ContrastiveSample,
                          temperature: float) -> tuple[float, np.ndarray]:
    x = sample.anchor
    others = np.vstack([sample.positive[None, :], sample.negatives])  # (m, d_in)

    u_x = W @ x
    r_x = float(np.linalg.norm(u_x))
    proj = others @ W.T  # (m, d_out)
    r = np.linalg.norm(proj, axis=1)
    if r_x < 1e-12 or np.any(r < 1e-12):
        raise DegenerateProjectionError("projected embedding collapsed below 1e-12",
                                        character=sample.character)
    a = u_x / r_x
    V = proj / r[:, None]

    dots = V @ a
    logits = dots / temperature
    m = float(np.max(logits))
    z = np.exp(logits - m)
    sigma = z / z.sum()
    loss = float(m + np.log(z.sum()) - logits[0])

    coef = sigma.copy()
    coef[0] -= 1.0
    coef /= temperature  # d(loss)/d(dots)

    # anchor side: outer over x of sum_j coef_j (v_j - dots_j * a) / r_x
    lhs = (coef @ V - float(coef @ dots) * a) / r_x
    grad = np.outer(lhs, x)
    # other side: sum_j coef_j outer((a - dots_j v_j) / r_j, y_j)
    rows = (coef / r)[:, None] * (a[None, :] - dots[:, None] * V)
    grad += rows.T @ others
    return loss, grad


def loss_gradient(W: ProjectionMatrix, batch: Sequence[ContrastiveSample],
                  temperature: float) -> np.ndarray:
    """Analytic gradient of the summed batch loss with respect to W."""
    _, grad = batch_loss_and_grad(W.weights, batch, temperature)
    return grad


def batch_loss_and_grad(weights: np.ndarray, batch: Sequence[ContrastiveSample],
                        temperature: float) -> tuple[float, np.ndarray]:
    total = 0.0
    grad = np.zeros_like(weights)
    for sample in batch:
        loss, g = _sample_loss_and_grad(weights, sample, temperature)
        total += loss
        grad += g
    return total, grad


def cosine_annealing_lr(epoch: int, epochs: int, lr_start: float, lr_end: float) -> float:
    """Learning rate at a given epoch: lr_start at 0, lr_end at `epochs`."""
    if epochs == 0:
        return lr_start
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + np.cos(np.pi * epoch / epochs))


@dataclass
class TrainResult:
    projection: ProjectionMatrix
    losses: list = field(default_factory=list)


def train_projection(bank: CharacterBank, cfg: TrainConfig) -> TrainResult:
    """Plain gradient descent on the contrastive objective, identity-initialized.

    Single-threaded and bitwise deterministic for a fixed seed; negatives are
    re-sampled each epoch from one seed stream.
    """
    dims = {e.dim for ch in bank.characters for e in ch.appearance_exemplars}
    if not dims:
        raise EmptyInputError("bank has no appearance exemplars to train on")
    if len(dims) != 1:
        raise DimensionMismatchError("inconsistent appearance dimensions", dims=sorted(dims))
    dim = dims.pop()
    W = np.eye(dim)
    losses: list[float] = []
    if cfg.epochs == 0:
        return TrainResult(projection=ProjectionMatrix(W), losses=losses)

    master = np.random.default_rng(cfg.seed)
    epoch_seeds = master.integers(0, 2**63, size=cfg.epochs)
    for epoch in range(cfg.epochs):
        batch = sample_epoch_batches(bank, int(epoch_seeds[epoch]))
        loss, grad = batch_loss_and_grad(W, batch, cfg.temperature)
        if not np.isfinite(loss):
            raise DegenerateProjectionError(f"non-finite training loss at epoch {epoch}",
                                            epoch=epoch)
        lr = cosine_annealing_lr(epoch, cfg.epochs, cfg.lr_start, cfg.lr_end)
        W = W - lr * grad
        losses.append(loss)
        log.debug("epoch %d: loss=%.6f lr=%.3g", epoch, loss, lr)
    return TrainResult(projection=ProjectionMatrix(W), losses=losses)


def apply_projection(W: ProjectionMatrix, v: VectorLike) -> EmbeddingVector:
    """Project then L2-normalize one vector."""
    arr = as_array(v)
    if arr.shape[0] != W.d_in:
        raise DimensionMismatchError("vector does not match projection input dimension",
                                     dim_vector=int(arr.shape[0]), dim_in=W.d_in)
    out = W.weights @ arr
    norm = float(np.linalg.norm(out))
    if norm < 1e-12:
        raise DegenerateProjectionError("projected vector collapsed below 1e-12")
    return EmbeddingVector(out / norm, normalized=True)


def project_rows(W: Optional[ProjectionMatrix], mat: np.ndarray) -> np.ndarray:
    """Project a row matrix (or pass through) and L2-normalize each row."""
    out = mat if W is None else mat @ W.weights.T
    norms = np.linalg.norm(out, axis=1)
    if np.any(norms < 1e-12):
        raise DegenerateProjectionError("projected vector collapsed below 1e-12")
    return out / norms[:, None]
