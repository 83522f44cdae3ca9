"""Generator training loop with a frozen embedding extractor.

One step: super-resolve the LR anchor, embed (SR anchor, HR positive,
HR negative) through the frozen extractor, take the hinge triplet loss;
in parallel, compress the HR positive to anchor resolution, super-resolve
it, and take the perceptual (or MSE) loss against the original positive.
The weighted sum backpropagates into the generator only. Runs halt early
when the divergence policy fires.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import yaml

from . import generator as gen_mod
from .datasets import (
    HIGH_RES,
    ImageStore,
    PreparedDataset,
    TripletRecord,
    sample_triplets,
)
from .embeddings import EmbeddingExtractor, load_extractor
from .errors import ConfigError, DataError, DegenerateScoresError
from .evaluation import build_score_set, dprime, roc, auc as roc_auc
from .generator import Generator, GeneratorConfig, init_generator
from .losses import (
    LossConfig,
    combined_loss,
    load_feature_net,
    mine_triplets_online,
    mse_loss,
    perceptual_loss,
    triplet_loss,
)
from .upsamplers import ResampleMethod, upsample_chain

log = logging.getLogger(__name__)

IMAGE_MODES = ("real", "synthetic")
OPTIMIZERS = ("sgd",)
ABLATION_RESOLUTION = 28


@dataclass
class DivergencePolicy:
    window: int = 200
    blowup_factor: float = 10.0
    nan_abort: bool = True

    def validate(self) -> None:
        if self.window < 1:
            raise ConfigError("divergence window must be >= 1")
        if self.blowup_factor <= 1:
            raise ConfigError("blowup_factor must be > 1")


@dataclass
class ExperimentConfig:
    name: str = "base"
    anchor_resolution: int = 28
    image_mode: str = "real"
    losses: LossConfig = field(default_factory=LossConfig)
    extractor: str = "toy_deterministic"
    feature_net: str = "identity"
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    optimizer: str = "sgd"
    learning_rate: float = 1e-5
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0
    val_pairs: int = 2000
    resample_triplets_per_epoch: bool = False
    divergence: DivergencePolicy = field(default_factory=DivergencePolicy)

    def validate(self) -> None:
        if self.image_mode not in IMAGE_MODES:
            raise ConfigError(f"image_mode must be one of {IMAGE_MODES}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        self.losses.validate()
        self.generator.validate()
        self.divergence.validate()
        if self.generator.scale * self.anchor_resolution != HIGH_RES:
            raise ConfigError(
                f"generator scale {self.generator.scale} x anchor resolution "
                f"{self.anchor_resolution} must equal {HIGH_RES}"
            )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        try:
            if "losses" in data:
                data["losses"] = LossConfig(**data["losses"])
            if "generator" in data:
                data["generator"] = GeneratorConfig(**data["generator"])
            if "divergence" in data:
                data["divergence"] = DivergencePolicy(**data["divergence"])
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"bad experiment config: {exc}") from exc

    def save_yaml(self, path: "str | Path") -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @classmethod
    def load_yaml(cls, path: "str | Path") -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        data = yaml.safe_load(path.read_text())
        if not isinstance(data, dict):
            raise ConfigError(f"{path} does not hold a config mapping")
        return cls.from_dict(data)


@dataclass
class StepRecord:
    step: int
    epoch: int
    l_triplet: float
    l_percep: float
    l_total: float
    grad_norm: float
    wall_time: float


@dataclass
class EpochSnapshot:
    epoch: int
    d_prime: "float | None"
    auc: "float | None"
    n_pairs: int


@dataclass
class TrainLog:
    records: list[StepRecord] = field(default_factory=list)
    snapshots: list[EpochSnapshot] = field(default_factory=list)
    status: str = "running"

    def append(self, record: StepRecord) -> None:
        if self.records and record.step <= self.records[-1].step:
            raise ValueError("step records must be monotone in step")
        self.records.append(record)

    def losses(self) -> np.ndarray:
        return np.array([r.l_total for r in self.records], dtype=np.float64)

    def save_jsonl(self, path: "str | Path") -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps({"kind": "step", **dataclasses.asdict(r)}) + "\n")
            for s in self.snapshots:
                fh.write(json.dumps({"kind": "snapshot", **dataclasses.asdict(s)}) + "\n")
            fh.write(json.dumps({"kind": "status", "status": self.status}) + "\n")

    @classmethod
    def load_jsonl(cls, path: "str | Path") -> "TrainLog":
        out = cls()
        with open(path) as fh:
            for line in fh:
                item = json.loads(line)
                kind = item.pop("kind")
                if kind == "step":
                    out.records.append(StepRecord(**item))
                elif kind == "snapshot":
                    out.snapshots.append(EpochSnapshot(**item))
                elif kind == "status":
                    out.status = item["status"]
        return out


def detect_divergence(log_or_losses, policy: DivergencePolicy) -> bool:
    """True when any loss is non-finite (if nan_abort) or the recent
    windowed mean exceeds blowup_factor x the initial-window mean."""
    if isinstance(log_or_losses, TrainLog):
        losses = log_or_losses.losses()
    else:
        losses = np.asarray(log_or_losses, dtype=np.float64)
    if losses.size == 0:
        return False
    if policy.nan_abort and not np.isfinite(losses).all():
        return True
    w = min(policy.window, losses.size)
    initial = float(losses[:w].mean())
    recent = float(losses[-w:].mean())
    return recent > policy.blowup_factor * max(initial, 1e-12)


def _to_batch(images: list[np.ndarray]) -> torch.Tensor:
    return torch.stack(
        [torch.from_numpy(np.asarray(im).transpose(2, 0, 1)).float() for im in images]
    )


def load_triplet_batch(
    records: list[TripletRecord],
    store: ImageStore,
    anchor_resolution: int,
    image_mode: str,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, list[str], list[str]]:
    """Assemble (anchor, positive, negative) tensors for one batch.

    In synthetic mode the anchors are regenerated from the positives by
    bicubic degradation instead of using the stored LR files.
    """
    positives = [store.load(r.positive) for r in records]
    negatives = [store.load(r.negative) for r in records]
    if image_mode == "synthetic":
        anchors = [store.load_degraded(r.positive, anchor_resolution) for r in records]
    else:
        anchors = [store.load(r.anchor) for r in records]
    anchor_ids = [Path(r.anchor).parent.name for r in records]
    negative_ids = [Path(r.negative).parent.name for r in records]
    return (
        _to_batch(anchors),
        _to_batch(positives),
        _to_batch(negatives),
        anchor_ids,
        negative_ids,
    )


def _normalize_rows(x: torch.Tensor) -> torch.Tensor:
    return x / x.norm(dim=-1, keepdim=True).clamp_min(1e-12)


def train_step(
    gen: Generator,
    records: list[TripletRecord],
    store: ImageStore,
    extractor: EmbeddingExtractor,
    feature_net,
    loss_cfg: LossConfig,
    lr: float,
    anchor_resolution: int,
    image_mode: str = "real",
) -> dict:
    """One SGD update on the generator; the extractor stays frozen.

    Returns step metrics (l_triplet, l_percep, l_total, grad_norm). Losses
    flow from unclamped generator output.
    """
    if not records:
        raise DataError("empty triplet batch")
    anchors, positives, negatives, anchor_ids, negative_ids = load_triplet_batch(
        records, store, anchor_resolution, image_mode
    )

    sr_anchor = gen(anchors)

    # pixel branch (perceptual or MSE) supervises the compressed positive
    if loss_cfg.pixel_loss != "none" and loss_cfg.alpha > 0:
        if image_mode == "synthetic":
            sr_pos = sr_anchor  # anchors are already the degraded positives
        else:
            degraded = _to_batch(
                [store.load_degraded(r.positive, anchor_resolution) for r in records]
            )
            sr_pos = gen(degraded)
        if loss_cfg.pixel_loss == "perceptual":
            l_percep = perceptual_loss(
                sr_pos, positives, feature_net, metric=loss_cfg.perceptual_metric
            )
        else:
            l_percep = mse_loss(sr_pos, positives)
    else:
        l_percep = torch.zeros(())

    with torch.no_grad():
        emb_p = extractor.embed_torch(positives)
        emb_n = extractor.embed_torch(negatives)
    emb_a = extractor.embed_torch(sr_anchor)
    if loss_cfg.normalize_embeddings:
        emb_a, emb_p, emb_n = map(_normalize_rows, (emb_a, emb_p, emb_n))

    if loss_cfg.beta > 0:
        if loss_cfg.mining == "online_semi_hard":
            pool = torch.cat([emb_a, emb_p, emb_n], dim=0)
            labels = anchor_ids + anchor_ids + negative_ids
            triples = mine_triplets_online(pool, labels, loss_cfg.triplet_margin)
            if triples:
                idx = torch.as_tensor(triples, dtype=torch.long)
                l_trip = triplet_loss(
                    pool[idx[:, 0]], pool[idx[:, 1]], pool[idx[:, 2]],
                    margin=loss_cfg.triplet_margin,
                )
            else:
                l_trip = torch.zeros(())
        else:
            l_trip = triplet_loss(emb_a, emb_p, emb_n, margin=loss_cfg.triplet_margin)
    else:
        l_trip = torch.zeros(())

    total = combined_loss(l_percep, l_trip, loss_cfg.alpha, loss_cfg.beta)

    gen.zero_grad(set_to_none=True)
    grad_norm = 0.0
    if total.requires_grad:
        total.backward()
        sq = 0.0
        with torch.no_grad():
            for p in gen.parameters():
                if p.grad is not None:
                    sq += float((p.grad**2).sum())
                    p -= lr * p.grad
        grad_norm = sq**0.5
    gen.zero_grad(set_to_none=True)

    return {
        "l_triplet": float(l_trip.detach()),
        "l_percep": float(l_percep.detach()),
        "l_total": float(total.detach()),
        "grad_norm": grad_norm,
    }


def _validation_snapshot(
    gen: Generator,
    dataset: PreparedDataset,
    config: ExperimentConfig,
    extractor: EmbeddingExtractor,
    epoch: int,
) -> EpochSnapshot:
    test = dataset.test
    probes = test.entries_at(config.anchor_resolution)
    gallery = test.entries_at(HIGH_RES)
    if not probes or not gallery:
        return EpochSnapshot(epoch=epoch, d_prime=None, auc=None, n_pairs=0)

    def sr_fn(image: np.ndarray) -> np.ndarray:
        return gen_mod.super_resolve(gen, image)

    try:
        scores = build_score_set(
            probes,
            gallery,
            dataset.store(),
            sr_fn,
            extractor,
            pair_count=min(config.val_pairs, 2 * len(probes) * len(gallery)),
            seed=config.seed,
            normalize_embeddings=config.losses.normalize_embeddings,
            model_name=config.name,
            resolution=config.anchor_resolution,
        )
        g, i = scores.genuine(), scores.impostor()
        snapshot = EpochSnapshot(
            epoch=epoch,
            d_prime=dprime(g, i),
            auc=roc_auc(roc(scores)),
            n_pairs=len(scores.pairs),
        )
    except (DataError, DegenerateScoresError) as exc:
        log.warning("validation snapshot skipped at epoch %d: %s", epoch, exc)
        snapshot = EpochSnapshot(epoch=epoch, d_prime=None, auc=None, n_pairs=0)
    return snapshot


def run_experiment(
    config: ExperimentConfig,
    dataset: PreparedDataset,
    out_dir: "str | Path",
) -> tuple[Path, TrainLog]:
    """Full training run: epochs over the triplet manifest with per-epoch
    validation snapshots, divergence monitoring, and checkpointing.

    Writes checkpoint_final.npz, checkpoint_best.npz (best validation d'),
    train_log.jsonl, and a config snapshot into out_dir. Returns the final
    checkpoint path and the log. A diverged run halts early, keeps partial
    artifacts, and reports status "diverged".
    """
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.save_yaml(out_dir / "config.yaml")

    store = dataset.store()
    extractor = load_extractor(config.extractor)
    feature_net = load_feature_net(config.feature_net)
    extractor_hash_before = extractor.weight_hash()

    torch.manual_seed(config.seed)
    gen = init_generator(config.generator, config.seed)

    base_triplets = dataset.train.triplets.get(config.anchor_resolution)
    if not base_triplets:
        raise DataError(
            f"train manifest has no triplets at {config.anchor_resolution}"
        )

    rng = np.random.default_rng(config.seed)
    train_log = TrainLog()
    best_dprime = -np.inf
    started = time.monotonic()
    step = 0
    final_path = out_dir / "checkpoint_final.npz"
    best_path = out_dir / "checkpoint_best.npz"

    for epoch in range(1, config.epochs + 1):
        if config.resample_triplets_per_epoch:
            triplets = sample_triplets(
                dataset.train,
                config.anchor_resolution,
                len(base_triplets),
                config.seed + epoch,
            )
        else:
            triplets = [base_triplets[i] for i in rng.permutation(len(base_triplets))]

        diverged = False
        for start in range(0, len(triplets), config.batch_size):
            batch = triplets[start : start + config.batch_size]
            metrics = train_step(
                gen,
                batch,
                store,
                extractor,
                feature_net,
                config.losses,
                config.learning_rate,
                config.anchor_resolution,
                config.image_mode,
            )
            step += 1
            train_log.append(
                StepRecord(
                    step=step,
                    epoch=epoch,
                    l_triplet=metrics["l_triplet"],
                    l_percep=metrics["l_percep"],
                    l_total=metrics["l_total"],
                    grad_norm=metrics["grad_norm"],
                    wall_time=time.monotonic() - started,
                )
            )
            if detect_divergence(train_log, config.divergence):
                diverged = True
                break
        if diverged:
            train_log.status = "diverged"
            log.warning("run %s diverged at step %d", config.name, step)
            break

        snapshot = _validation_snapshot(gen, dataset, config, extractor, epoch)
        train_log.snapshots.append(snapshot)
        if snapshot.d_prime is not None and snapshot.d_prime > best_dprime:
            best_dprime = snapshot.d_prime
            gen_mod.save_checkpoint(best_path, gen, config.seed, {"epoch": epoch})

    if train_log.status != "diverged":
        train_log.status = "completed"
    gen_mod.save_checkpoint(final_path, gen, config.seed, {"epoch": config.epochs})
    if not best_path.exists():
        gen_mod.save_checkpoint(best_path, gen, config.seed, {"epoch": config.epochs})
    train_log.save_jsonl(out_dir / "train_log.jsonl")

    if extractor.weight_hash() != extractor_hash_before:
        raise RuntimeError("frozen extractor weights changed during training")
    return final_path, train_log


def ablation_matrix(seed: int = 0) -> list[ExperimentConfig]:
    """The six ablation experiments, all at 28x28 anchors.

    base: real images, triplet + perceptual, euclidean extractor
    exp1: synthetic anchors, triplet only      exp2: real, triplet only
    exp3: real, triplet + MSE                  exp4: real, mined triplet + perceptual
    exp5: real, triplet + perceptual, angular extractor
    """
    def cfg(name: str, image_mode: str, extractor: str, **loss_kwargs) -> ExperimentConfig:
        return ExperimentConfig(
            name=name,
            anchor_resolution=ABLATION_RESOLUTION,
            image_mode=image_mode,
            losses=LossConfig(**loss_kwargs),
            extractor=extractor,
            feature_net="vgg19_54",
            generator=GeneratorConfig(scale=4),
            seed=seed,
        )

    return [
        cfg("base", "real", "facenet_pretrained",
            alpha=0.8, beta=0.2, pixel_loss="perceptual", mining="off"),
        cfg("exp1", "synthetic", "facenet_pretrained",
            alpha=0.0, beta=0.2, pixel_loss="none", mining="off"),
        cfg("exp2", "real", "facenet_pretrained",
            alpha=0.0, beta=0.2, pixel_loss="none", mining="off"),
        cfg("exp3", "real", "facenet_pretrained",
            alpha=0.8, beta=0.2, pixel_loss="mse", mining="off"),
        cfg("exp4", "real", "facenet_pretrained",
            alpha=0.8, beta=0.2, pixel_loss="perceptual", mining="online_semi_hard"),
        cfg("exp5", "real", "arcface_pretrained",
            alpha=0.8, beta=0.2, pixel_loss="perceptual", mining="off"),
    ]


TOY_EXTRACTOR_MAP = {
    "facenet_pretrained": "toy_deterministic",
    "arcface_pretrained": "toy_angular",
}


def to_toy(config: ExperimentConfig) -> ExperimentConfig:
    """Desk-scale variant: toy generator dims, toy extractors, identity
    perceptual features. Keeps every protocol-level field."""
    toy = ExperimentConfig.from_dict(config.to_dict())
    toy.generator = GeneratorConfig.toy(
        scale=config.generator.scale, upsample_kind=config.generator.upsample_kind
    )
    toy.extractor = TOY_EXTRACTOR_MAP.get(config.extractor, config.extractor)
    toy.feature_net = "identity"
    return toy


def baseline_sr_fn(method: str, target: int = HIGH_RES):
    """SR callable for an interpolation baseline name."""
    m = ResampleMethod.parse(method)
    return lambda image: upsample_chain(image, target, m)
