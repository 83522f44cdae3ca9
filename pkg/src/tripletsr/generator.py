"""Trainable super-resolution generator: residual-in-residual dense blocks
with learned x2/x4/x8 upsampling (sub-pixel shuffle or transposed conv).

Checkpoints are ``.npz`` containers holding every named weight array plus a
JSON header (config, seed); load/save round-trips bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError

UPSAMPLE_KINDS = ("subpixel", "transposed")
RESIDUAL_SCALE = 0.2
# dense-block convolutions start small so the trunk is near-identity at init;
# the output conv starts smaller still so the upsampled-input skip dominates
INIT_SCALE = 0.1
INIT_SCALE_LAST = 0.003
# the learned correction is bounded to +/- RESIDUAL_BOUND around the skip,
# which keeps outputs face-like through rough stretches of training
RESIDUAL_BOUND = 0.25


@dataclass
class GeneratorConfig:
    n_rrdb: int = 16
    base_channels: int = 64
    growth_channels: int = 32
    scale: int = 4
    upsample_kind: str = "subpixel"

    def validate(self) -> None:
        if self.scale not in (2, 4, 8):
            raise ConfigError(f"scale must be 2, 4 or 8, got {self.scale}")
        if self.n_rrdb < 1:
            raise ConfigError(f"n_rrdb must be >= 1, got {self.n_rrdb}")
        if self.base_channels < 1 or self.growth_channels < 1:
            raise ConfigError("channel counts must be >= 1")
        if self.upsample_kind not in UPSAMPLE_KINDS:
            raise ConfigError(
                f"upsample_kind must be one of {UPSAMPLE_KINDS}, got {self.upsample_kind!r}"
            )

    @classmethod
    def toy(cls, scale: int = 4, upsample_kind: str = "subpixel") -> "GeneratorConfig":
        """Desk-scale config: small enough for CPU test runs."""
        return cls(n_rrdb=2, base_channels=16, growth_channels=8, scale=scale,
                   upsample_kind=upsample_kind)


def subpixel_upsample(features: torch.Tensor, s: int) -> torch.Tensor:
    """Pixel shuffle: (..., C*s^2, H, W) -> (..., C, s*H, s*W).

    out[c, y, x] = in[c*s^2 + (y mod s)*s + (x mod s), y // s, x // s]
    """
    if s < 1:
        raise ValueError(f"scale must be >= 1, got {s}")
    t = torch.as_tensor(features)
    channels = t.shape[-3]
    if channels % (s * s) != 0:
        raise ValueError(f"channels ({channels}) not divisible by s^2 ({s * s})")
    return F.pixel_shuffle(t, s)


def subpixel_inverse(features: torch.Tensor, s: int) -> torch.Tensor:
    """Inverse shuffle; composes with subpixel_upsample to the identity."""
    if s < 1:
        raise ValueError(f"scale must be >= 1, got {s}")
    t = torch.as_tensor(features)
    if t.shape[-2] % s or t.shape[-1] % s:
        raise ValueError(f"spatial dims {tuple(t.shape[-2:])} not divisible by {s}")
    return F.pixel_unshuffle(t, s)


def transposed_upsample(
    features: torch.Tensor, weight: torch.Tensor, s: int = 2, bias=None
) -> torch.Tensor:
    """Zero-insertion (stride s) followed by convolution with `weight`.

    Kernel size must equal s + 2*padding so the output is exactly s x the
    input spatially; this uses kernel 2s with padding s//2.
    """
    if s != 2:
        raise ValueError(f"transposed upsampling supports stride 2 per stage, got {s}")
    k = weight.shape[-1]
    if k != 2 * s:
        raise ValueError(f"expected kernel size {2 * s}, got {k}")
    return F.conv_transpose2d(
        torch.as_tensor(features), weight, bias=bias, stride=s, padding=s // 2
    )


class DenseBlock(nn.Module):
    """Five-conv dense block; output residually added with a small scale."""

    def __init__(self, channels: int, growth: int):
        super().__init__()
        self.convs = nn.ModuleList(
            [nn.Conv2d(channels + i * growth, growth, 3, 1, 1) for i in range(4)]
        )
        self.conv_out = nn.Conv2d(channels + 4 * growth, channels, 3, 1, 1)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = [x]
        for conv in self.convs:
            feats.append(self.act(conv(torch.cat(feats, dim=1))))
        out = self.conv_out(torch.cat(feats, dim=1))
        return x + RESIDUAL_SCALE * out


class RRDB(nn.Module):
    """Residual-in-residual dense block (three dense blocks)."""

    def __init__(self, channels: int, growth: int):
        super().__init__()
        self.blocks = nn.ModuleList(DenseBlock(channels, growth) for _ in range(3))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = x
        for block in self.blocks:
            out = block(out)
        return x + RESIDUAL_SCALE * out


class SubpixelStage(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels * 4, 3, 1, 1)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.act(subpixel_upsample(self.conv(x), 2))


class TransposedStage(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.ConvTranspose2d(channels, channels, 4, stride=2, padding=1)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.act(self.conv(x))


class Generator(nn.Module):
    """Residual dense SR generator; output spatial dims = scale x input.

    The learned path predicts a bounded correction on top of a fixed
    bicubic upsample of the input, so a freshly initialized generator
    already behaves like an interpolation upsampler and can never drift
    arbitrarily far from one.
    """

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        config.validate()
        self.config = config
        nf, gc = config.base_channels, config.growth_channels
        self.conv_first = nn.Conv2d(3, nf, 3, 1, 1)
        self.body = nn.ModuleList(RRDB(nf, gc) for _ in range(config.n_rrdb))
        self.trunk_conv = nn.Conv2d(nf, nf, 3, 1, 1)
        n_stages = {2: 1, 4: 2, 8: 3}[config.scale]
        stage = SubpixelStage if config.upsample_kind == "subpixel" else TransposedStage
        self.upsampler = nn.ModuleList(stage(nf) for _ in range(n_stages))
        self.conv_hr = nn.Conv2d(nf, nf, 3, 1, 1)
        self.conv_last = nn.Conv2d(nf, 3, 3, 1, 1)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skip = F.interpolate(
            x, scale_factor=self.config.scale, mode="bicubic", align_corners=False
        )
        fea = self.conv_first(x)
        trunk = fea
        for block in self.body:
            trunk = block(trunk)
        fea = fea + self.trunk_conv(trunk)
        for stage in self.upsampler:
            fea = stage(fea)
        residual = self.conv_last(self.act(self.conv_hr(fea)))
        return skip + RESIDUAL_BOUND * torch.tanh(residual)


def init_generator(config: GeneratorConfig, seed: int) -> Generator:
    """Deterministically initialized generator.

    He-normal weights from a local seeded RNG. Dense-block convolutions and
    the output convolution are scaled down, so the initial forward pass is
    dominated by the upsampled-input pathway.
    """
    config.validate()
    gen = Generator(config)
    rng = torch.Generator().manual_seed(seed)
    for name, module in gen.named_modules():
        if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
            fan_in = module.weight.shape[1:].numel()
            if name == "conv_last":
                scale = INIT_SCALE_LAST
            elif ".blocks" in name:
                scale = INIT_SCALE
            else:
                scale = 1.0
            std = scale * (2.0 / fan_in) ** 0.5
            with torch.no_grad():
                module.weight.normal_(0.0, std, generator=rng)
                if module.bias is not None:
                    module.bias.zero_()
    return gen


def super_resolve(gen: Generator, image: np.ndarray, clamp: bool = True) -> np.ndarray:
    """Inference helper: H x W x 3 numpy in, (scale*H, scale*W, 3) numpy out.

    Output is clamped to [0, 1]; training paths call the module directly so
    raw values keep flowing to the losses.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got {img.shape}")
    with torch.no_grad():
        batch = torch.from_numpy(img.transpose(2, 0, 1)).float().unsqueeze(0)
        out = gen(batch).squeeze(0)
    arr = out.permute(1, 2, 0).double().numpy()
    return np.clip(arr, 0.0, 1.0) if clamp else arr


def save_checkpoint(path: "str | Path", gen: Generator, seed: int,
                    extra: "dict | None" = None) -> None:
    """Write generator weights and config header to an .npz container."""
    header = {"config": asdict(gen.config), "seed": seed}
    if extra:
        header.update(extra)
    arrays = {
        name: tensor.detach().cpu().numpy()
        for name, tensor in gen.state_dict().items()
    }
    np.savez(
        path,
        __header__=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
        **arrays,
    )


def load_checkpoint(path: "str | Path") -> tuple[Generator, int]:
    """Rebuild a generator from a checkpoint; weights match bit-exactly."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path) as data:
        header = json.loads(bytes(data["__header__"]).decode())
        arrays = {k: data[k] for k in data.files if k != "__header__"}
    config = GeneratorConfig(**header["config"])
    gen = Generator(config)
    gen.load_state_dict({k: torch.from_numpy(v) for k, v in arrays.items()})
    return gen, int(header.get("seed", 0))
