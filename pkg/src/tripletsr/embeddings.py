"""Frozen, differentiable face-embedding extractors.

Backends:

* ``toy_deterministic`` — a small fixed-seed conv stack (embed_dim 64) so
  the full pipeline runs without external weights.
* ``toy_angular`` — same trunk with a unit-hypersphere output, the
  desk-scale stand-in for angular recognition models.
* ``toy_exploding`` — diagnostic backend whose huge output scale makes
  generator gradients blow up; used to exercise divergence handling.
* ``facenet_pretrained`` / ``arcface_pretrained`` — externally trained
  weight containers resolved from an explicit path or
  ``$TRIPLETSR_WEIGHTS/<backend>.npz`` (default ``./weights``).

Extractor weights are frozen: they never change during training, while
gradients still flow to the image input.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path

import numpy as np
import torch

from . import nets
from .errors import ExtractorLoadError

log = logging.getLogger(__name__)

WEIGHTS_DIR_ENV = "TRIPLETSR_WEIGHTS"
DEFAULT_WEIGHTS_DIR = "weights"
INPUT_SIZE = 112
TOY_EMBED_DIM = 64
_TOY_SEED = 1749

PRETRAINED_BACKENDS = ("facenet_pretrained", "arcface_pretrained")
TOY_BACKENDS = ("toy_deterministic", "toy_angular", "toy_exploding")
BACKENDS = PRETRAINED_BACKENDS + TOY_BACKENDS


def normalize(v: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    """Return alpha * v / ||v||2; rejects the zero vector."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ValueError("cannot normalize the zero vector")
    return alpha * v / norm


def distance(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance between two embedding vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def squared_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.sum((a - b) ** 2))


class EmbeddingExtractor:
    """A frozen embedding network with numpy and differentiable entry points."""

    def __init__(
        self,
        backend: str,
        net: torch.nn.Module,
        embed_dim: int,
        input_size: int = INPUT_SIZE,
    ):
        self.backend = backend
        self.embed_dim = embed_dim
        self.input_size = input_size
        self.frozen = True
        self._net = net.eval()
        for p in self._net.parameters():
            p.requires_grad_(False)

    def embed_torch(self, batch: torch.Tensor) -> torch.Tensor:
        """Embed a (B, 3, S, S) batch; gradients flow to the input."""
        if batch.ndim != 4 or batch.shape[1] != 3 or batch.shape[2:] != (
            self.input_size,
            self.input_size,
        ):
            raise ValueError(
                f"expected (B, 3, {self.input_size}, {self.input_size}) input, "
                f"got {tuple(batch.shape)}"
            )
        return self._net(batch)

    def embed(self, image: np.ndarray) -> np.ndarray:
        """Embed one H x W x 3 image in [0, 1]; returns a float64 vector."""
        img = np.asarray(image, dtype=np.float64)
        if img.shape != (self.input_size, self.input_size, 3):
            raise ValueError(
                f"expected ({self.input_size}, {self.input_size}, 3) image, "
                f"got {img.shape}"
            )
        with torch.no_grad():
            batch = torch.from_numpy(img.transpose(2, 0, 1)).float().unsqueeze(0)
            out = self.embed_torch(batch)
        return out.squeeze(0).double().numpy()

    def embed_batch(self, images: "list[np.ndarray]") -> np.ndarray:
        with torch.no_grad():
            batch = torch.stack(
                [
                    torch.from_numpy(np.asarray(im).transpose(2, 0, 1)).float()
                    for im in images
                ]
            )
            out = self.embed_torch(batch)
        return out.double().numpy()

    def weight_hash(self) -> str:
        return nets.state_hash(self._net)

    def to_double(self) -> "EmbeddingExtractor":
        """Float64 copy of this extractor (used by gradient checks)."""
        import copy

        clone = copy.deepcopy(self._net).double()
        return EmbeddingExtractor(self.backend, clone, self.embed_dim, self.input_size)


def _toy_trunk_layers() -> list[dict]:
    # centered input + odd activations + zero biases keep the embedding
    # cloud from collapsing onto one dominant shared direction, so
    # normalized pair distances land on a FaceNet-like [0, 1.4] scale
    return [
        {"kind": "center", "offset": 0.5, "scale": 2.0},
        {"kind": "conv", "in": 3, "out": 16, "kernel": 3, "stride": 1, "padding": 1},
        {"kind": "act", "fn": "tanh"},
        {"kind": "avgpool", "kernel": 2},
        {"kind": "conv", "in": 16, "out": 32, "kernel": 3, "stride": 1, "padding": 1},
        {"kind": "act", "fn": "tanh"},
        {"kind": "avgpool", "kernel": 2},
        {"kind": "conv", "in": 32, "out": 64, "kernel": 3, "stride": 1, "padding": 1},
        {"kind": "act", "fn": "tanh"},
        {"kind": "adaptive_avgpool", "size": 4},
        {"kind": "flatten"},
        {"kind": "linear", "in": 64 * 16, "out": TOY_EMBED_DIM},
    ]


def _build_toy(backend: str) -> EmbeddingExtractor:
    layers = _toy_trunk_layers()
    if backend == "toy_angular":
        layers = layers + [{"kind": "l2norm"}]
        seed, gain = _TOY_SEED + 1, 4.0
    elif backend == "toy_exploding":
        layers = layers + [{"kind": "scale", "value": 1.0e4}]
        seed, gain = _TOY_SEED + 2, 4.0
    else:
        seed, gain = _TOY_SEED, 1.0
    net = nets.build_net(layers)
    nets.seeded_init(net, seed=seed, gain=gain, bias_std=0.0)
    return EmbeddingExtractor(backend, net, TOY_EMBED_DIM)


def resolve_weights_path(backend: str, weights_path: "str | Path | None") -> Path:
    if weights_path is not None:
        return Path(weights_path)
    base = Path(os.environ.get(WEIGHTS_DIR_ENV, DEFAULT_WEIGHTS_DIR))
    return base / f"{backend}.npz"


def load_extractor(
    backend: str, weights_path: "str | Path | None" = None
) -> EmbeddingExtractor:
    """Load a frozen extractor by backend name.

    Toy backends need no file. Pretrained backends read a weight container
    whose manifest declares the architecture; a missing file raises an
    explicit error naming the expected path.
    """
    if backend in TOY_BACKENDS:
        return _build_toy(backend)
    if backend not in PRETRAINED_BACKENDS:
        raise ValueError(f"unknown extractor backend {backend!r}; options: {BACKENDS}")
    path = resolve_weights_path(backend, weights_path)
    if not path.exists():
        raise ExtractorLoadError(
            f"{backend} weights not found at {path} "
            f"(set ${WEIGHTS_DIR_ENV} or pass an explicit path)"
        )
    _, net, manifest = nets.load_container(path)
    embed_dim = int(manifest.get("embed_dim", 512))
    input_size = int(manifest.get("input_size", INPUT_SIZE))
    log.info("loaded %s from %s (embed_dim=%d)", backend, path, embed_dim)
    return EmbeddingExtractor(backend, net, embed_dim, input_size)
