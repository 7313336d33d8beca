"""Low-rank adapters: neutrality, reversibility, and reconstruction gains."""

import numpy as np
import pytest
import torch

from latentdrag import (
    AdapterConfig,
    AdapterWeights,
    LatentCode,
    SyntheticBackend,
    apply_adapters,
    finetune_identity,
    load_adapters,
    reconstruction_error,
    save_adapters,
)
from latentdrag.adaptation import AdaptationError
from latentdrag.backends.base import BackendError

from synthetic_tasks import blob_image


@pytest.fixture(scope="module")
def backend():
    return SyntheticBackend(height=16, width=16)


@pytest.fixture(scope="module")
def image():
    return blob_image(16, 16, 8, 7, sigma=2.0)


def test_default_rank_is_sixteen():
    assert AdapterConfig().rank == 16


def test_zero_training_steps_leave_deltas_zero(backend, image):
    weights, curve = finetune_identity(image, backend, AdapterConfig(train_steps=0))
    assert curve == []
    for delta in weights.kernel_deltas(backend.kernel_shapes()).values():
        assert torch.count_nonzero(delta) == 0
    adapted = apply_adapters(backend, weights)
    z = backend.encode_image(image)
    for layer in ("mid", "late"):
        assert torch.equal(
            adapted.extract_features(z, layer).data,
            backend.extract_features(z, layer).data,
        )


def test_zero_factor_adapters_are_noops(backend, image):
    weights = AdapterWeights.zero(rank=4, shapes=backend.kernel_shapes())
    adapted = apply_adapters(backend, weights)
    z = backend.encode_image(image)
    assert torch.equal(
        adapted.extract_features(z, "late").data,
        backend.extract_features(z, "late").data,
    )


def test_apply_then_remove_is_residue_free(backend, image):
    weights, _ = finetune_identity(image, backend, AdapterConfig(train_steps=10))
    adapted = apply_adapters(backend, weights)
    z = backend.encode_image(image)
    before = backend.extract_features(z, "mid").data.clone()
    _ = adapted.extract_features(z, "mid")
    after = backend.extract_features(z, "mid").data
    assert torch.equal(before, after)


def test_nonzero_deltas_change_features(backend, image):
    weights, _ = finetune_identity(image, backend, AdapterConfig(train_steps=10))
    adapted = apply_adapters(backend, weights)
    z = backend.encode_image(image)
    diff = (
        adapted.extract_features(z, "mid").data - backend.extract_features(z, "mid").data
    )
    assert diff.abs().max() > 0


def test_locality_only_targeted_layers_change(backend, image):
    shapes = backend.kernel_shapes()
    zero = AdapterWeights.zero(rank=2, shapes={"conv3": shapes["conv3"]})
    deltas = dict(zero.deltas)
    deltas["conv3"] = (
        torch.full_like(deltas["conv3"][0], 0.1),
        torch.full_like(deltas["conv3"][1], 0.1),
    )
    weights = AdapterWeights(
        rank=2, target_layer_ids=("conv3",), deltas=deltas, train_steps=0
    )
    adapted = apply_adapters(backend, weights)
    z = backend.encode_image(image)
    # conv3 feeds only the noise head, not the declared feature layers
    for layer in ("mid", "late"):
        assert torch.equal(
            adapted.extract_features(z, layer).data,
            backend.extract_features(z, layer).data,
        )
    assert not torch.equal(
        adapted.predict_noise(z.data, 5), backend.predict_noise(z.data, 5)
    )


def test_reconstruction_error_strictly_lower(backend, image):
    weights, _ = finetune_identity(image, backend, AdapterConfig(train_steps=50))
    base = reconstruction_error(backend, image)
    adapted = reconstruction_error(apply_adapters(backend, weights), image)
    assert adapted < base


def test_training_curve_mostly_monotone(backend, image):
    _, curve = finetune_identity(image, backend, AdapterConfig(train_steps=50))
    assert len(curve) == 50
    decreases = sum(1 for a, b in zip(curve, curve[1:]) if b < a)
    assert decreases / (len(curve) - 1) >= 0.9


def test_rank_mismatch_rejected():
    with pytest.raises(AdaptationError, match="rank"):
        AdapterWeights(
            rank=4,
            target_layer_ids=("conv1",),
            deltas={"conv1": (torch.zeros(8, 3), torch.zeros(3, 27))},
            train_steps=0,
        )


def test_unknown_layer_rejected(backend):
    weights = AdapterWeights(
        rank=2,
        target_layer_ids=("conv9",),
        deltas={"conv9": (torch.zeros(8, 2), torch.zeros(2, 27))},
        train_steps=0,
    )
    with pytest.raises(BackendError, match="unknown layer"):
        apply_adapters(backend, weights)


def test_serialization_roundtrip(tmp_path, backend, image):
    weights, _ = finetune_identity(image, backend, AdapterConfig(train_steps=5))
    path = tmp_path / "adapters.npz"
    save_adapters(weights, path)
    loaded = load_adapters(path)
    assert loaded.rank == weights.rank
    assert loaded.target_layer_ids == weights.target_layer_ids
    assert loaded.train_steps == weights.train_steps
    for layer in weights.target_layer_ids:
        assert torch.equal(loaded.deltas[layer][0], weights.deltas[layer][0])
        assert torch.equal(loaded.deltas[layer][1], weights.deltas[layer][1])
