"""Training losses: triplet, contrastive, perceptual, MSE, and the
weighted combination, plus online semi-hard triplet mining.

Loss functions accept torch tensors (gradients flow) or anything
``torch.as_tensor`` understands. Embedding arguments may be single vectors
``(d,)`` or batches ``(B, d)``; batched losses are averaged.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import nets
from .errors import ConfigError, ExtractorLoadError

log = logging.getLogger(__name__)

MINING_MODES = ("off", "online_semi_hard")
PIXEL_LOSSES = ("perceptual", "mse", "none")


@dataclass
class LossConfig:
    triplet_margin: float = 0.2
    alpha: float = 0.8  # pixel-branch (perceptual/MSE) weight
    beta: float = 0.2  # triplet weight
    mining: str = "off"
    pixel_loss: str = "perceptual"
    contrastive_eps_plus: float = 0.2
    contrastive_eps_minus: float = 1.0
    normalize_embeddings: bool = True
    perceptual_metric: str = "l1"

    def validate(self) -> None:
        if self.triplet_margin < 0:
            raise ConfigError("triplet_margin must be >= 0")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("loss weights alpha/beta must be >= 0")
        if self.alpha + self.beta <= 0:
            raise ConfigError("alpha + beta must be > 0")
        if self.mining not in MINING_MODES:
            raise ConfigError(f"mining must be one of {MINING_MODES}")
        if self.pixel_loss not in PIXEL_LOSSES:
            raise ConfigError(f"pixel_loss must be one of {PIXEL_LOSSES}")
        if self.perceptual_metric not in ("l1", "l2"):
            raise ConfigError("perceptual_metric must be 'l1' or 'l2'")


def _as_2d(v, name: str) -> torch.Tensor:
    t = torch.as_tensor(v)
    if t.ndim == 1:
        t = t.unsqueeze(0)
    if t.ndim != 2:
        raise ValueError(f"{name} must be a vector or (B, d) batch, got {tuple(t.shape)}")
    return t


def triplet_loss(anchor, positive, negative, margin: float = 0.2) -> torch.Tensor:
    """Hinge triplet loss max(0, ||a-p||^2 - ||a-n||^2 + margin).

    Zero exactly when the margin condition ||a-n||^2 >= ||a-p||^2 + margin
    holds; differentiable almost everywhere.
    """
    if margin < 0:
        raise ValueError("margin must be >= 0")
    a = _as_2d(anchor, "anchor")
    p = _as_2d(positive, "positive")
    n = _as_2d(negative, "negative")
    if not (a.shape[-1] == p.shape[-1] == n.shape[-1]):
        raise ValueError(
            f"dimension mismatch: {a.shape[-1]}, {p.shape[-1]}, {n.shape[-1]}"
        )
    d_ap = ((a - p) ** 2).sum(dim=-1)
    d_an = ((a - n) ** 2).sum(dim=-1)
    return F.relu(d_ap - d_an + margin).mean()


def contrastive_loss(fi, fj, y: int, eps_plus: float, eps_minus: float) -> torch.Tensor:
    """Margin contrastive loss on the (non-squared) Euclidean distance."""
    a = _as_2d(fi, "fi")
    b = _as_2d(fj, "fj")
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    d = (a - b).norm(dim=-1)
    y_t = torch.as_tensor(float(y))
    loss = y_t * F.relu(d - eps_plus) + (1.0 - y_t) * F.relu(eps_minus - d)
    return loss.mean()


def mse_loss(sr, hr) -> torch.Tensor:
    """Mean squared pixel difference."""
    a = torch.as_tensor(sr)
    b = torch.as_tensor(hr)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return ((a - b) ** 2).mean()


def perceptual_loss(sr, hr, feature_net, metric: str = "l1") -> torch.Tensor:
    """Mean feature-space distance between restored and reference images.

    `feature_net` maps an image batch to feature maps; L1 by default,
    L2 via metric="l2".
    """
    a = torch.as_tensor(sr)
    b = torch.as_tensor(hr)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    fa = feature_net(a)
    fb = feature_net(b)
    if metric == "l1":
        return (fa - fb).abs().mean()
    if metric == "l2":
        return ((fa - fb) ** 2).mean()
    raise ValueError(f"unknown perceptual metric {metric!r}")


def combined_loss(l_percep, l_triplet, alpha: float, beta: float):
    """Weighted training objective alpha * L_percep + beta * L_triplet."""
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be >= 0")
    return alpha * l_percep + beta * l_triplet


class IdentityFeatures(torch.nn.Module):
    """Feature net whose features are the pixels themselves.

    Makes perceptual_loss reduce to a plain pixel L1/L2; the desk-scale
    stand-in for an externally trained deep feature stack.
    """

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x


class ContainerFeatures(torch.nn.Module):
    """Frozen conv feature stack loaded from a weight container."""

    def __init__(self, net: torch.nn.Module):
        super().__init__()
        self.net = net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


FEATURE_NETS = ("identity", "vgg19_54")


def load_feature_net(kind: str, weights_path: "str | Path | None" = None):
    """Load the perceptual feature network.

    "identity" needs no file. "vgg19_54" loads an externally trained
    19-layer conv stack cut at the 4th convolution before the 5th pooling
    stage (pre-activation) from a weight container.
    """
    if kind == "identity":
        return IdentityFeatures()
    if kind != "vgg19_54":
        raise ValueError(f"unknown feature net {kind!r}; options: {FEATURE_NETS}")
    from .embeddings import resolve_weights_path

    path = resolve_weights_path("vgg19_54", weights_path)
    if not path.exists():
        raise ExtractorLoadError(
            f"vgg19_54 feature weights not found at {path}"
        )
    _, net, _ = nets.load_container(path)
    return ContainerFeatures(net)


def mine_triplets_online(
    embeddings, labels, margin: float
) -> list[tuple[int, int, int]]:
    """Select one negative per valid (anchor, positive) pair.

    Semi-hard rule: among negatives n with
    d(a,p)^2 < d(a,n)^2 < d(a,p)^2 + margin pick the closest; if none
    qualifies, fall back to the hardest negative (smallest d(a,n)^2).
    Ties resolve to the lowest index. Returns [] (logged) when the batch
    has no valid (anchor, positive) pair.
    """
    emb = torch.as_tensor(embeddings).detach().double().numpy()
    labels = list(labels)
    n = emb.shape[0]
    if len(labels) != n:
        raise ValueError(f"{n} embeddings but {len(labels)} labels")
    diff = emb[:, None, :] - emb[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    labels_arr = np.asarray(labels, dtype=object)

    triples: list[tuple[int, int, int]] = []
    for a in range(n):
        neg_idx = np.flatnonzero(labels_arr != labels_arr[a])
        if neg_idx.size == 0:
            continue
        for p in range(n):
            if p == a or labels_arr[p] != labels_arr[a]:
                continue
            d_ap = d2[a, p]
            d_an = d2[a, neg_idx]
            semi = neg_idx[(d_an > d_ap) & (d_an < d_ap + margin)]
            pool = semi if semi.size else neg_idx
            best = pool[int(np.argmin(d2[a, pool]))]
            triples.append((a, p, int(best)))
    if not triples:
        log.warning("online mining found no valid (anchor, positive) pair")
    return triples
