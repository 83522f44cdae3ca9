import numpy as np
import pytest
import torch

from tripletsr import nets
from tripletsr.embeddings import (
    EmbeddingExtractor,
    distance,
    load_extractor,
    normalize,
    resolve_weights_path,
    squared_distance,
)
from tripletsr.errors import ExtractorLoadError

from oracles import central_difference


def test_normalize_closed_form():
    out = normalize(np.array([3.0, 4.0]), alpha=1.0)
    assert np.allclose(out, [0.6, 0.8], atol=1e-12)


def test_normalize_idempotent(rng):
    v = rng.normal(size=32)
    once = normalize(v, 1.0)
    twice = normalize(once, 1.0)
    assert np.allclose(once, twice, atol=1e-12)
    assert abs(np.linalg.norm(once) - 1.0) < 1e-6


def test_normalize_alpha_scales(rng):
    v = rng.normal(size=8)
    assert abs(np.linalg.norm(normalize(v, 2.5)) - 2.5) < 1e-9


def test_normalize_zero_vector_rejected():
    with pytest.raises(ValueError, match="zero vector"):
        normalize(np.zeros(4))


def test_distance_closed_forms():
    assert distance(np.ones(5), np.ones(5)) == 0.0
    assert distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(
        np.sqrt(2.0), abs=1e-12
    )


def test_distance_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension mismatch"):
        distance(np.zeros(3), np.zeros(4))


def test_distance_metric_properties(rng):
    for _ in range(200):
        a, b, c = rng.normal(size=(3, 16))
        dab = distance(a, b)
        assert dab >= 0.0
        assert dab == distance(b, a)
        assert distance(a, c) <= dab + distance(b, c) + 1e-12
    assert squared_distance(a, b) == pytest.approx(dab**2, rel=1e-12)


def test_toy_extractor_contract():
    ex = load_extractor("toy_deterministic")
    assert ex.embed_dim == 64
    assert ex.frozen
    img = np.full((112, 112, 3), 0.5)
    v1 = ex.embed(img)
    v2 = ex.embed(img)
    assert np.array_equal(v1, v2)
    assert v1.shape == (64,)


def test_toy_extractor_distinguishes_constants():
    ex = load_extractor("toy_deterministic")
    v0 = ex.embed(np.zeros((112, 112, 3)))
    v1 = ex.embed(np.ones((112, 112, 3)))
    assert distance(v0, v1) > 0.0


def test_toy_extractor_stable_across_loads():
    a = load_extractor("toy_deterministic")
    b = load_extractor("toy_deterministic")
    assert a.weight_hash() == b.weight_hash()


def test_backends_have_distinct_weights():
    hashes = {load_extractor(b).weight_hash()
              for b in ("toy_deterministic", "toy_angular", "toy_exploding")}
    assert len(hashes) == 3


def test_angular_backend_is_unit_norm(rng):
    ex = load_extractor("toy_angular")
    v = ex.embed(rng.uniform(size=(112, 112, 3)))
    assert abs(np.linalg.norm(v) - 1.0) < 1e-5


def test_wrong_input_shape_rejected():
    ex = load_extractor("toy_deterministic")
    with pytest.raises(ValueError, match="expected"):
        ex.embed(np.zeros((56, 56, 3)))
    with pytest.raises(ValueError, match="expected"):
        ex.embed_torch(torch.zeros(1, 3, 56, 56))


def test_unknown_backend_rejected():
    with pytest.raises(ValueError, match="unknown extractor backend"):
        load_extractor("resnet_surprise")


def test_missing_pretrained_weights_error_names_path(tmp_path, monkeypatch):
    monkeypatch.setenv("TRIPLETSR_WEIGHTS", str(tmp_path))
    expected = resolve_weights_path("facenet_pretrained", None)
    with pytest.raises(ExtractorLoadError) as err:
        load_extractor("facenet_pretrained")
    assert str(expected) in str(err.value)


def test_pretrained_container_roundtrip(tmp_path):
    # a tiny declared architecture exercises the full container load path
    layers = [
        {"kind": "conv", "in": 3, "out": 4, "kernel": 3, "stride": 1, "padding": 1},
        {"kind": "act", "fn": "tanh"},
        {"kind": "adaptive_avgpool", "size": 2},
        {"kind": "flatten"},
        {"kind": "linear", "in": 16, "out": 8},
    ]
    net = nets.build_net(layers)
    nets.seeded_init(net, seed=42)
    path = tmp_path / "facenet_pretrained.npz"
    nets.save_container(path, layers, net, {"embed_dim": 8, "input_size": 112})
    ex = load_extractor("facenet_pretrained", path)
    assert ex.embed_dim == 8
    img = np.random.default_rng(0).uniform(size=(112, 112, 3))
    direct = net(torch.from_numpy(img.transpose(2, 0, 1)).float().unsqueeze(0))
    assert np.allclose(ex.embed(img), direct.detach().squeeze(0).numpy(), atol=1e-6)


def test_container_checksum_mismatch_rejected(tmp_path):
    layers = [
        {"kind": "flatten"},
        {"kind": "linear", "in": 112 * 112 * 3, "out": 4},
    ]
    net = nets.build_net(layers)
    nets.seeded_init(net, seed=1)
    path = tmp_path / "arcface_pretrained.npz"
    nets.save_container(path, layers, net, {"embed_dim": 4})
    # corrupt one array, keep the manifest checksum stale
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    arrays["1.bias"] = arrays["1.bias"] + 1.0
    np.savez(path, **arrays)
    with pytest.raises(ExtractorLoadError, match="checksum"):
        load_extractor("arcface_pretrained", path)


def test_embed_gradient_matches_finite_difference():
    ex = load_extractor("toy_deterministic").to_double()
    rng = np.random.default_rng(6)
    base = rng.uniform(0.2, 0.8, size=(112, 112, 3))

    x = torch.from_numpy(base.transpose(2, 0, 1)).double().unsqueeze(0)
    x.requires_grad_(True)
    (ex.embed_torch(x) ** 2).sum().backward()

    def value_at(pixel_value, y=30, xx=40, ch=1):
        img = base.copy()
        img[y, xx, ch] = pixel_value
        t = torch.from_numpy(img.transpose(2, 0, 1)).double().unsqueeze(0)
        return float((ex.embed_torch(t) ** 2).sum())

    numeric = central_difference(value_at, base[30, 40, 1], eps=1e-5)
    analytic = float(x.grad[0, 1, 30, 40])
    assert abs(numeric - analytic) / max(abs(numeric), 1e-12) < 1e-3


def test_weights_frozen_through_use(rng):
    ex = load_extractor("toy_deterministic")
    before = ex.weight_hash()
    for _ in range(3):
        ex.embed(rng.uniform(size=(112, 112, 3)))
    x = torch.rand(2, 3, 112, 112)
    x.requires_grad_(True)
    ex.embed_torch(x).sum().backward()  # input grads flow, weights untouched
    assert x.grad is not None
    assert ex.weight_hash() == before
