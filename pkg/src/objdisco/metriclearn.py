"""Triplet-loss metric learning of an L2-normalized linear embedding head.

The head maps a frozen descriptor ``f`` to ``e(f) = (W f + b) / ||W f + b||``. The
loss of a triplet is ``max(||e(a) - e(p)|| - ||e(a) - e(n)|| + M, 0)`` and a batch
loss is the sum over its triplets. Gradients are derived analytically through the
hinge, the distances and the normalization; optimization is plain Adam with a
stepwise decayed learning rate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from objdisco.association import mine_triplets
from objdisco.config import EMBEDDING_DIM, TrainConfig
from objdisco.errors import DegenerateEmbeddingError
from objdisco.models.domain import (
    AdamState,
    EmbeddingModel,
    Frame,
    MatchPair,
    ProposalRef,
    Triplet,
)
from objdisco.utils import derive_seed

logger = logging.getLogger(__name__)

Gradient = Tuple[np.ndarray, np.ndarray]

_NORM_FLOOR = 1e-12


def init_model(input_dim: int, seed: int, output_dim: int = EMBEDDING_DIM) -> EmbeddingModel:
    """Draw ``W ~ U(-1/sqrt(d), 1/sqrt(d))`` and set ``b = 0``."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(input_dim)
    W = rng.uniform(-bound, bound, size=(output_dim, input_dim))
    return EmbeddingModel(W, np.zeros(output_dim))


def _forward(model: EmbeddingModel, features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    Z = np.asarray(features, dtype=np.float64) @ model.W.T + model.b
    norms = np.linalg.norm(Z, axis=1)
    if np.any(norms <= _NORM_FLOOR):
        raise DegenerateEmbeddingError("projection collapsed to the zero vector")
    return Z / norms[:, None], norms


def embed_batch(model: EmbeddingModel, features: np.ndarray) -> np.ndarray:
    """Embed ``(N, d)`` features into ``(N, dim)`` unit vectors."""
    features = np.asarray(features, dtype=np.float64).reshape(-1, model.input_dim)
    if features.shape[0] == 0:
        return np.zeros((0, model.output_dim))
    return _forward(model, features)[0]


def embed(model: EmbeddingModel, feature) -> np.ndarray:
    """Embed one feature vector.

    Raises:
        DegenerateEmbeddingError: If ``||W f + b|| <= 1e-12``.
    """
    return embed_batch(model, np.asarray(feature).reshape(1, -1))[0]


def raw_embedding(features: np.ndarray) -> np.ndarray:
    """Identity embedding: the L2-normalized raw descriptors."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] == 0:
        return features.copy()
    norms = np.linalg.norm(features, axis=1)
    if np.any(norms <= _NORM_FLOOR):
        raise DegenerateEmbeddingError("zero descriptor cannot be normalized")
    return features / norms[:, None]


def _unit_rows(diff: np.ndarray, norms: np.ndarray) -> np.ndarray:
    out = np.zeros_like(diff)
    nonzero = norms > 0
    out[nonzero] = diff[nonzero] / norms[nonzero, None]
    return out


def _normalize_backward(E: np.ndarray, norms: np.ndarray, grad_E: np.ndarray) -> np.ndarray:
    radial = np.sum(E * grad_E, axis=1, keepdims=True)
    return (grad_E - E * radial) / norms[:, None]


def loss_and_gradient(
    model: EmbeddingModel,
    anchors: np.ndarray,
    positives: np.ndarray,
    negatives: np.ndarray,
    margin: float,
) -> Tuple[float, Gradient]:
    """Summed triplet loss of a batch and its exact gradient w.r.t. ``(W, b)``.

    Triplets whose hinge is not strictly positive contribute nothing (zero
    subgradient at the kink), and a zero distance contributes a zero subgradient.
    """
    Ea, na = _forward(model, anchors)
    Ep, np_ = _forward(model, positives)
    En, nn = _forward(model, negatives)
    diff_ap = Ea - Ep
    diff_an = Ea - En
    d_ap = np.linalg.norm(diff_ap, axis=1)
    d_an = np.linalg.norm(diff_an, axis=1)
    hinge = d_ap - d_an + margin
    active = hinge > 0
    loss = float(np.sum(hinge[active]))

    grad_W = np.zeros_like(model.W)
    grad_b = np.zeros_like(model.b)
    if not np.any(active):
        return loss, (grad_W, grad_b)

    w = active.astype(np.float64)[:, None]
    u_ap = _unit_rows(diff_ap, d_ap)
    u_an = _unit_rows(diff_an, d_an)
    gZa = _normalize_backward(Ea, na, w * (u_ap - u_an))
    gZp = _normalize_backward(Ep, np_, -w * u_ap)
    gZn = _normalize_backward(En, nn, w * u_an)
    grad_W = gZa.T @ anchors + gZp.T @ positives + gZn.T @ negatives
    grad_b = gZa.sum(axis=0) + gZp.sum(axis=0) + gZn.sum(axis=0)
    return loss, (grad_W, grad_b)


def triplet_loss(model: EmbeddingModel, a, p, n, margin: float = 1.0) -> float:
    """Hinge triplet loss of a single ``(anchor, positive, negative)`` feature triple."""
    loss, _ = loss_and_gradient(
        model,
        np.asarray(a, dtype=np.float64).reshape(1, -1),
        np.asarray(p, dtype=np.float64).reshape(1, -1),
        np.asarray(n, dtype=np.float64).reshape(1, -1),
        margin,
    )
    return loss


def loss_gradient(
    model: EmbeddingModel,
    anchors: np.ndarray,
    positives: np.ndarray,
    negatives: np.ndarray,
    margin: float = 1.0,
) -> Gradient:
    """Gradient of the summed batch loss, shaped like ``(W, b)``."""
    if len(anchors) == 0:
        raise ValueError("loss_gradient needs a nonempty batch")
    return loss_and_gradient(model, anchors, positives, negatives, margin)[1]


def effective_learning_rate(config: TrainConfig, step: int) -> float:
    """``lr * decay ** floor(step / decay_interval)``."""
    return config.learning_rate * config.decay ** (step // config.decay_interval)


def adam_step(
    model: EmbeddingModel, state: AdamState, grad: Gradient, lr_effective: float
) -> Tuple[EmbeddingModel, AdamState]:
    """Apply one bias-corrected Adam update; inputs are left untouched."""
    grad_W, grad_b = grad
    if grad_W.shape != model.W.shape or grad_b.shape != model.b.shape:
        raise ValueError("gradient shape does not match the model")
    b1, b2 = state.beta1, state.beta2
    step = state.step + 1
    m_W = b1 * state.m_W + (1 - b1) * grad_W
    m_b = b1 * state.m_b + (1 - b1) * grad_b
    v_W = b2 * state.v_W + (1 - b2) * grad_W**2
    v_b = b2 * state.v_b + (1 - b2) * grad_b**2
    c1 = 1 - b1**step
    c2 = 1 - b2**step
    W = model.W - lr_effective * (m_W / c1) / (np.sqrt(v_W / c2) + state.eps)
    b = model.b - lr_effective * (m_b / c1) / (np.sqrt(v_b / c2) + state.eps)
    new_state = AdamState(m_W, m_b, v_W, v_b, step, b1, b2, state.eps)
    return EmbeddingModel(W, b), new_state


@dataclass(frozen=True)
class LossRecord:
    """One applied optimization step."""

    step: int
    lr_effective: float
    loss: float
    triplets_in_batch: int


@dataclass
class TrainResult:
    """Final model, per-step loss trace and the number of empty batches skipped."""

    model: EmbeddingModel
    trace: List[LossRecord] = field(default_factory=list)
    skipped_steps: int = 0


class TripletSource:
    """Matches plus frames; re-mines negatives once per epoch with a derived seed."""

    def __init__(
        self,
        matches: Sequence[MatchPair],
        frames: Sequence[Frame],
        seed: int,
        negatives_per_pair: int = 1,
    ):
        self.matches = list(matches)
        self.frames: Dict[str, Frame] = {f.id: f for f in frames}
        self.seed = seed
        self.negatives_per_pair = negatives_per_pair
        self._cache: Tuple[int, List[Triplet]] | None = None

    def __bool__(self) -> bool:
        return bool(self.matches)

    def epoch(self, index: int) -> List[Triplet]:
        """Triplets of epoch ``index``; the latest epoch is cached."""
        if self._cache is None or self._cache[0] != index:
            triplets = mine_triplets(
                self.matches,
                self.frames,
                derive_seed(self.seed, "epoch", index),
                self.negatives_per_pair,
            )
            self._cache = (index, triplets)
        return self._cache[1]


class _FeatureIndex:
    def __init__(self, frames: Sequence[Frame]):
        rows: Dict[ProposalRef, int] = {}
        feats: List[np.ndarray] = []
        for frame in sorted(frames, key=lambda f: f.id):
            for i, proposal in enumerate(frame.proposals):
                rows[(frame.id, i)] = len(feats)
                feats.append(proposal.feature)
        self.rows = rows
        self.features = np.stack(feats) if feats else np.zeros((0, 0))


def _location_neighborhoods(
    frames: Sequence[Frame], radius: float
) -> Tuple[List[str], np.ndarray]:
    centers: Dict[str, np.ndarray] = {}
    for frame in frames:
        centers.setdefault(frame.location_id, frame.pose.center)
    locations = sorted(centers)
    xyz = np.stack([centers[loc] for loc in locations])
    dist = np.linalg.norm(xyz[:, None, :] - xyz[None, :, :], axis=2)
    return locations, dist <= radius + 1e-9


def train(
    frames: Sequence[Frame],
    source: TripletSource,
    config: TrainConfig,
    batch_radius: float,
) -> TrainResult:
    """Optimize the embedding head one sampled neighborhood at a time.

    Each step samples a location uniformly, keeps the triplets whose anchor and
    positive frames both lie within ``batch_radius`` of it, and applies one Adam
    update on their summed loss. Steps with no triplet are skipped and counted.
    An epoch is one step per location; negatives are re-mined every epoch.
    """
    if not source:
        raise ValueError("the triplet source is empty")
    index = _FeatureIndex(frames)
    model = init_model(
        index.features.shape[1], derive_seed(config.seed, "init"), config.embedding_dim
    )
    result = TrainResult(model=model.copy())
    if config.steps == 0:
        return result

    frame_location = {f.id: f.location_id for f in frames}
    locations, hood = _location_neighborhoods(frames, batch_radius)
    loc_index = {loc: i for i, loc in enumerate(locations)}
    rng = np.random.default_rng(derive_seed(config.seed, "locations"))
    state = AdamState.zeros_like(model)

    cached_epoch = -1
    rows_a = rows_p = rows_n = loc_a = loc_p = np.zeros(0, dtype=np.int64)
    for step in range(config.steps):
        epoch = step // len(locations)
        if epoch != cached_epoch:
            triplets = source.epoch(epoch)
            rows_a, rows_p, rows_n, loc_a, loc_p = _triplet_arrays(
                triplets, index.rows, frame_location, loc_index
            )
            cached_epoch = epoch
        center = int(rng.integers(len(locations)))
        selected = hood[center][loc_a] & hood[center][loc_p]
        count = int(np.count_nonzero(selected))
        if count == 0:
            result.skipped_steps += 1
            continue
        lr = effective_learning_rate(config, step)
        loss, grad = loss_and_gradient(
            model,
            index.features[rows_a[selected]],
            index.features[rows_p[selected]],
            index.features[rows_n[selected]],
            config.margin,
        )
        model, state = adam_step(model, state, grad, lr)
        result.trace.append(LossRecord(step, lr, loss, count))
        if (step + 1) % 500 == 0:
            logger.info("train step=%d loss=%.4f triplets=%d lr=%.2e", step + 1, loss, count, lr)

    result.model = model
    if result.skipped_steps:
        logger.warning("train skipped_steps=%d (no triplets in batch)", result.skipped_steps)
    return result


def _triplet_arrays(
    triplets: Sequence[Triplet],
    rows: Mapping[ProposalRef, int],
    frame_location: Mapping[str, str],
    loc_index: Mapping[str, int],
) -> Tuple[np.ndarray, ...]:
    n = len(triplets)
    out = [np.empty(n, dtype=np.int64) for _ in range(5)]
    for k, t in enumerate(triplets):
        out[0][k] = rows[t.anchor]
        out[1][k] = rows[t.positive]
        out[2][k] = rows[t.negative]
        out[3][k] = loc_index[frame_location[t.anchor[0]]]
        out[4][k] = loc_index[frame_location[t.positive[0]]]
    return tuple(out)
