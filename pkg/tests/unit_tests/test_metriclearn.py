import numpy as np
import pytest

from objdisco.association import NeighborhoodSpec, build_matches
from objdisco.config import TrainConfig
from objdisco.errors import DegenerateEmbeddingError
from objdisco.metriclearn import (
    TripletSource,
    adam_step,
    effective_learning_rate,
    embed,
    embed_batch,
    init_model,
    loss_and_gradient,
    loss_gradient,
    raw_embedding,
    train,
    triplet_loss,
)
from objdisco.models import AdamState, EmbeddingModel
from objdisco.utils import derive_seed

from .conftest import plane_scene

D = 4


@pytest.fixture
def padded_identity() -> EmbeddingModel:
    W = np.zeros((128, D))
    W[:D, :D] = np.eye(D)
    return EmbeddingModel(W, np.zeros(128))


def basis(i: int) -> np.ndarray:
    return np.eye(D)[i]


def test_embed_padded_identity(padded_identity) -> None:
    e = embed(padded_identity, basis(2))
    assert e.shape == (128,)
    assert np.linalg.norm(e) == pytest.approx(1.0)
    assert e[2] == pytest.approx(1.0)


def test_embed_rejects_collapsed_projection() -> None:
    model = EmbeddingModel(np.zeros((8, D)), np.zeros(8))
    with pytest.raises(DegenerateEmbeddingError):
        embed(model, basis(0))


def test_embed_batch_rows_are_unit() -> None:
    model = init_model(D, seed=1, output_dim=16)
    features = np.random.default_rng(1).normal(size=(20, D))
    norms = np.linalg.norm(embed_batch(model, features), axis=1)
    np.testing.assert_allclose(norms, 1.0)


def test_raw_embedding_normalizes() -> None:
    out = raw_embedding(np.array([[3.0, 4.0], [0.0, 2.0]]))
    np.testing.assert_allclose(out, [[0.6, 0.8], [0.0, 1.0]])


def test_triplet_loss_examples(padded_identity) -> None:
    assert triplet_loss(padded_identity, basis(0), basis(0), basis(1), margin=1.0) == 0.0
    assert triplet_loss(padded_identity, basis(0), basis(1), basis(0), margin=1.0) == pytest.approx(
        np.sqrt(2) + 1
    )
    assert triplet_loss(padded_identity, basis(3), basis(3), basis(3), margin=0.7) == pytest.approx(0.7)


def test_gradient_matches_finite_differences() -> None:
    rng = np.random.default_rng(42)
    model = init_model(5, seed=7, output_dim=6)
    model = EmbeddingModel(model.W, rng.normal(scale=0.1, size=6))
    A, P, N = (rng.normal(size=(4, 5)) for _ in range(3))
    margin = 3.0  # keeps every hinge active
    _, (gW, gb) = loss_and_gradient(model, A, P, N, margin)

    eps = 1e-6

    def loss_at(W, b) -> float:
        return loss_and_gradient(EmbeddingModel(W, b), A, P, N, margin)[0]

    num_W = np.zeros_like(model.W)
    for idx in np.ndindex(model.W.shape):
        plus, minus = model.W.copy(), model.W.copy()
        plus[idx] += eps
        minus[idx] -= eps
        num_W[idx] = (loss_at(plus, model.b) - loss_at(minus, model.b)) / (2 * eps)
    num_b = np.zeros_like(model.b)
    for i in range(model.b.shape[0]):
        plus, minus = model.b.copy(), model.b.copy()
        plus[i] += eps
        minus[i] -= eps
        num_b[i] = (loss_at(model.W, plus) - loss_at(model.W, minus)) / (2 * eps)

    np.testing.assert_allclose(gW, num_W, rtol=1e-4, atol=1e-7)
    np.testing.assert_allclose(gb, num_b, rtol=1e-4, atol=1e-7)


def numerical_gradient(model: EmbeddingModel, A, P, N, margin: float, eps: float = 1e-6):
    def loss_at(W, b) -> float:
        return loss_and_gradient(EmbeddingModel(W, b), A, P, N, margin)[0]

    num_W = np.zeros_like(model.W)
    for idx in np.ndindex(model.W.shape):
        plus, minus = model.W.copy(), model.W.copy()
        plus[idx] += eps
        minus[idx] -= eps
        num_W[idx] = (loss_at(plus, model.b) - loss_at(minus, model.b)) / (2 * eps)
    num_b = np.zeros_like(model.b)
    for i in range(model.b.shape[0]):
        plus, minus = model.b.copy(), model.b.copy()
        plus[i] += eps
        minus[i] -= eps
        num_b[i] = (loss_at(model.W, plus) - loss_at(model.W, minus)) / (2 * eps)
    return num_W, num_b


@pytest.mark.parametrize("seed", range(20))
def test_gradient_with_mixed_hinges(seed: int) -> None:
    rng = np.random.default_rng(seed)
    d = int(rng.integers(3, 9))
    model = init_model(d, seed=seed, output_dim=6)
    model = EmbeddingModel(model.W, rng.normal(scale=0.02, size=6))
    anchors = rng.normal(size=(6, d))
    # Triplets 0-2: random positive, negative next to the anchor, so the hinge is active.
    # Triplets 3-5: positive next to the anchor, negative opposite, so the hinge is inactive.
    P = np.concatenate([rng.normal(size=(3, d)), anchors[3:] + 0.1 * rng.normal(size=(3, d))])
    N = np.concatenate([anchors[:3] + 0.1 * rng.normal(size=(3, d)), -anchors[3:]])
    margin = 0.5

    hinges = [triplet_loss(model, a, p, n, margin) for a, p, n in zip(anchors, P, N)]
    assert all(h > 0 for h in hinges[:3])
    assert all(h == 0.0 for h in hinges[3:])

    _, (gW, gb) = loss_and_gradient(model, anchors, P, N, margin)
    num_W, num_b = numerical_gradient(model, anchors, P, N, margin)
    np.testing.assert_allclose(gW, num_W, rtol=1e-4, atol=1e-7)
    np.testing.assert_allclose(gb, num_b, rtol=1e-4, atol=1e-7)


def test_inactive_hinges_give_zero_gradient(padded_identity) -> None:
    A = np.stack([basis(0), basis(2)])
    P = A.copy()
    N = np.stack([basis(1), basis(3)])
    gW, gb = loss_gradient(padded_identity, A, P, N, margin=1.0)
    assert not np.any(gW)
    assert not np.any(gb)


def test_loss_gradient_rejects_empty_batch(padded_identity) -> None:
    empty = np.zeros((0, D))
    with pytest.raises(ValueError):
        loss_gradient(padded_identity, empty, empty, empty)


def test_adam_zero_gradient_keeps_model() -> None:
    model = init_model(D, seed=0, output_dim=8)
    state = AdamState.zeros_like(model)
    zero = (np.zeros_like(model.W), np.zeros_like(model.b))
    new_model, new_state = adam_step(model, state, zero, 1e-3)
    np.testing.assert_array_equal(new_model.W, model.W)
    np.testing.assert_array_equal(new_model.b, model.b)
    assert new_state.step == 1


def test_adam_zero_gradient_decays_moments() -> None:
    model = init_model(D, seed=0, output_dim=8)
    state = AdamState.zeros_like(model)
    state.m_W[:] = 1.0
    state.v_W[:] = 1.0
    zero = (np.zeros_like(model.W), np.zeros_like(model.b))
    _, new_state = adam_step(model, state, zero, 1e-3)
    np.testing.assert_allclose(new_state.m_W, 0.9)
    np.testing.assert_allclose(new_state.v_W, 0.999)
    np.testing.assert_array_equal(state.m_W, 1.0)


def test_adam_constant_gradient_moves_by_learning_rate() -> None:
    rng = np.random.default_rng(3)
    model = init_model(D, seed=0, output_dim=8)

    def away_from_zero(shape):
        return rng.uniform(0.5, 2.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)

    grad = (away_from_zero(model.W.shape), away_from_zero(model.b.shape))
    state = AdamState.zeros_like(model)
    lr, steps = 1e-3, 50
    current = model
    for _ in range(steps):
        current, state = adam_step(current, state, grad, lr)
    np.testing.assert_allclose(current.W - model.W, -steps * lr * np.sign(grad[0]), rtol=1e-4)
    np.testing.assert_allclose(current.b - model.b, -steps * lr * np.sign(grad[1]), rtol=1e-4)


def test_learning_rate_decay() -> None:
    config = TrainConfig(learning_rate=1e-3, decay=0.94, decay_interval=1000)
    assert effective_learning_rate(config, 0) == pytest.approx(1e-3)
    assert effective_learning_rate(config, 999) == pytest.approx(1e-3)
    assert effective_learning_rate(config, 1000) == pytest.approx(1e-3 * 0.94)
    assert effective_learning_rate(config, 2500) == pytest.approx(1e-3 * 0.94**2)


def _source(frames, seed: int = 0) -> TripletSource:
    matches = build_matches(frames, NeighborhoodSpec(radius=1.0))
    return TripletSource(matches, frames, seed)


def test_train_zero_steps_returns_initial_model() -> None:
    frames = plane_scene([0.0, 0.1, 0.2])
    config = TrainConfig(steps=0, embedding_dim=8, seed=4)
    result = train(frames, _source(frames), config, batch_radius=1.0)
    expected = init_model(6, derive_seed(4, "init"), 8)
    np.testing.assert_array_equal(result.model.W, expected.W)
    np.testing.assert_array_equal(result.model.b, expected.b)
    assert result.trace == []


def test_train_is_deterministic() -> None:
    frames = plane_scene([0.0, 0.1, 0.2, -0.1])
    config = TrainConfig(steps=12, embedding_dim=8, learning_rate=1e-2, seed=9)
    first = train(frames, _source(frames), config, batch_radius=1.0)
    second = train(frames, _source(frames), config, batch_radius=1.0)
    assert first.trace == second.trace
    np.testing.assert_array_equal(first.model.W, second.model.W)
    assert len(first.trace) == 12
    assert first.skipped_steps == 0


def test_train_counts_empty_batches() -> None:
    frames = plane_scene([0.0, 0.1])
    config = TrainConfig(steps=6, embedding_dim=8, seed=1)
    # A zero radius leaves every neighborhood with a single frame, so no triplet fits.
    result = train(frames, _source(frames), config, batch_radius=0.0)
    assert result.skipped_steps == 6
    assert result.trace == []


def test_train_rejects_empty_source() -> None:
    frames = plane_scene([0.0])
    with pytest.raises(ValueError):
        train(frames, TripletSource([], frames, 0), TrainConfig(steps=3), batch_radius=1.0)
