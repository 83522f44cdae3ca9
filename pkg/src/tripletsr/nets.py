"""Small sequential network builder and the named-array weight container.

Embedding extractors and perceptual feature stacks are declared as a list
of layer dicts so that externally trained weights can be shipped as a
single ``.npz`` container holding the architecture manifest, the arrays,
and a checksum.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import ExtractorLoadError


class L2Normalize(nn.Module):
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x / x.norm(dim=-1, keepdim=True).clamp_min(1e-12)


class CenterInput(nn.Module):
    """Affine input map (x - offset) * scale; keeps [0,1] pixels signed."""

    def __init__(self, offset: float = 0.5, scale: float = 2.0):
        super().__init__()
        self.offset = float(offset)
        self.scale = float(scale)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return (x - self.offset) * self.scale

    def extra_repr(self) -> str:
        return f"offset={self.offset}, scale={self.scale}"


class Scale(nn.Module):
    def __init__(self, value: float):
        super().__init__()
        self.value = float(value)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.value

    def extra_repr(self) -> str:
        return f"value={self.value}"


_ACTIVATIONS = {
    "tanh": nn.Tanh,
    "relu": nn.ReLU,
    "lrelu": lambda: nn.LeakyReLU(0.2),
}


def build_net(layers: list[dict]) -> nn.Sequential:
    """Build an nn.Sequential from a layer-spec list.

    Supported kinds: center, conv, act, avgpool, adaptive_avgpool, flatten,
    linear, l2norm, scale.
    """
    modules: list[nn.Module] = []
    for spec in layers:
        kind = spec["kind"]
        if kind == "center":
            modules.append(
                CenterInput(spec.get("offset", 0.5), spec.get("scale", 2.0))
            )
        elif kind == "conv":
            modules.append(
                nn.Conv2d(
                    spec["in"],
                    spec["out"],
                    spec.get("kernel", 3),
                    stride=spec.get("stride", 1),
                    padding=spec.get("padding", 1),
                )
            )
        elif kind == "act":
            fn = spec.get("fn", "relu")
            if fn not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {fn!r}")
            modules.append(_ACTIVATIONS[fn]())
        elif kind == "avgpool":
            modules.append(nn.AvgPool2d(spec.get("kernel", 2)))
        elif kind == "adaptive_avgpool":
            modules.append(nn.AdaptiveAvgPool2d(spec["size"]))
        elif kind == "flatten":
            modules.append(nn.Flatten())
        elif kind == "linear":
            modules.append(nn.Linear(spec["in"], spec["out"]))
        elif kind == "l2norm":
            modules.append(L2Normalize())
        elif kind == "scale":
            modules.append(Scale(spec["value"]))
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    return nn.Sequential(*modules)


def seeded_init(
    net: nn.Module, seed: int, gain: float = 1.0, bias_std: float = 0.01
) -> None:
    """Deterministic He-style normal init driven by a local generator."""
    gen = torch.Generator().manual_seed(seed)
    for module in net.modules():
        if isinstance(module, (nn.Conv2d, nn.Linear)):
            fan_in = module.weight.shape[1:].numel()
            std = gain * (2.0 / fan_in) ** 0.5
            with torch.no_grad():
                module.weight.normal_(0.0, std, generator=gen)
                if module.bias is not None:
                    if bias_std > 0:
                        module.bias.normal_(0.0, bias_std, generator=gen)
                    else:
                        module.bias.zero_()


def state_hash(module: nn.Module) -> str:
    """SHA-256 over parameter and buffer names plus raw bytes."""
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def _arrays_checksum(arrays: dict[str, np.ndarray]) -> str:
    digest = hashlib.sha256()
    for name in sorted(arrays):
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(arrays[name]).tobytes())
    return digest.hexdigest()


def save_container(
    path: "str | Path", layers: list[dict], net: nn.Module, meta: dict
) -> None:
    """Write a weight container: architecture manifest + arrays + checksum."""
    arrays = {
        name: tensor.detach().cpu().numpy()
        for name, tensor in net.state_dict().items()
    }
    manifest = dict(meta)
    manifest["layers"] = layers
    manifest["sha256"] = _arrays_checksum(arrays)
    np.savez(path, __manifest__=np.frombuffer(
        json.dumps(manifest).encode(), dtype=np.uint8
    ), **arrays)


def load_container(path: "str | Path") -> tuple[list[dict], nn.Sequential, dict]:
    """Load a weight container; verifies checksum and rebuilds the network."""
    path = Path(path)
    if not path.exists():
        raise ExtractorLoadError(f"weight container not found: {path}")
    with np.load(path) as data:
        if "__manifest__" not in data:
            raise ExtractorLoadError(f"{path} has no architecture manifest")
        manifest = json.loads(bytes(data["__manifest__"]).decode())
        arrays = {k: data[k] for k in data.files if k != "__manifest__"}
    expected = manifest.get("sha256")
    actual = _arrays_checksum(arrays)
    if expected != actual:
        raise ExtractorLoadError(
            f"{path}: checksum mismatch (manifest {expected}, arrays {actual})"
        )
    net = build_net(manifest["layers"])
    state = {k: torch.from_numpy(v) for k, v in arrays.items()}
    try:
        net.load_state_dict(state)
    except RuntimeError as exc:
        raise ExtractorLoadError(f"{path}: architecture/weights mismatch: {exc}") from exc
    return manifest["layers"], net, manifest
