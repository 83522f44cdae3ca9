"""Multi-resolution image sets and triplet manifests on disk.

Layout under a prepared dataset root:

    <root>/<split>/<resolution>/<identity>/<image_id>.png
    <root>/manifest_train.csv / manifest_test.csv   (path,identity,resolution,split)
    <root>/triplets_train_<res>.csv                 (anchor,positive,negative)
    <root>/dataset.json                             (seed, resolutions, counts)

All construction is a pure function of (corpus bytes, seed). Identities are
split disjointly between train and test.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .upsamplers import ResampleMethod, resize

log = logging.getLogger(__name__)

HIGH_RES = 112
LOW_RESOLUTIONS = (14, 28, 56)
VALID_RESOLUTIONS = (14, 28, 56, 112)

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}


def load_image(path: "str | Path") -> np.ndarray:
    """Read an image file as H x W x 3 float64 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_image(path: "str | Path", pixels: np.ndarray) -> None:
    """Write [0, 1] floats as 8-bit RGB PNG (value -> round(value * 255))."""
    arr = np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0)
    data = np.rint(arr * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path)


class ImageStore:
    """Caching loader for images referenced by manifest-relative paths."""

    def __init__(self, root: "str | Path"):
        self.root = Path(root)
        self._cache: dict[str, np.ndarray] = {}
        self._degraded: dict[tuple[str, int], np.ndarray] = {}

    def load(self, rel_path: str) -> np.ndarray:
        cached = self._cache.get(rel_path)
        if cached is None:
            cached = load_image(self.root / rel_path)
            self._cache[rel_path] = cached
        return cached

    def load_degraded(self, rel_path: str, target: int) -> np.ndarray:
        key = (rel_path, target)
        cached = self._degraded.get(key)
        if cached is None:
            cached = synthetic_degrade(self.load(rel_path), target)
            self._degraded[key] = cached
        return cached


@dataclass(frozen=True)
class ManifestEntry:
    path: str  # relative to the dataset root
    identity: str
    resolution: int
    split: str

    @property
    def source_id(self) -> str:
        """Original corpus image id; shared by all resolutions of one source."""
        return Path(self.path).stem


@dataclass(frozen=True)
class TripletRecord:
    anchor: str
    positive: str
    negative: str


@dataclass
class DatasetManifest:
    split: str
    seed: int
    entries: list[ManifestEntry] = field(default_factory=list)
    # keyed by anchor resolution
    triplets: dict[int, list[TripletRecord]] = field(default_factory=dict)

    def identities(self) -> list[str]:
        return sorted({e.identity for e in self.entries})

    def entries_at(self, resolution: int) -> list[ManifestEntry]:
        return [e for e in self.entries if e.resolution == resolution]

    def by_identity(self, resolution: int) -> dict[str, list[ManifestEntry]]:
        groups: dict[str, list[ManifestEntry]] = {}
        for e in self.entries_at(resolution):
            groups.setdefault(e.identity, []).append(e)
        return groups


@dataclass
class PreparedDataset:
    root: Path
    train: DatasetManifest
    test: DatasetManifest
    resolutions: tuple[int, ...]
    seed: int

    def store(self) -> ImageStore:
        return ImageStore(self.root)

    def manifest(self, split: str) -> DatasetManifest:
        if split == "train":
            return self.train
        if split == "test":
            return self.test
        raise ValueError(f"unknown split {split!r}")

    @classmethod
    def load(cls, root: "str | Path") -> "PreparedDataset":
        root = Path(root)
        meta_path = root / "dataset.json"
        if not meta_path.exists():
            raise DataError(f"not a prepared dataset (missing {meta_path})")
        meta = json.loads(meta_path.read_text())
        manifests = {}
        for split in ("train", "test"):
            manifest = DatasetManifest(split=split, seed=meta["seed"])
            manifest.entries = _read_manifest_csv(root / f"manifest_{split}.csv")
            for res in meta.get("triplet_resolutions", {}).get(split, []):
                tri_path = root / f"triplets_{split}_{res}.csv"
                manifest.triplets[int(res)] = _read_triplet_csv(tri_path)
            manifests[split] = manifest
        return cls(
            root=root,
            train=manifests["train"],
            test=manifests["test"],
            resolutions=tuple(meta["resolutions"]),
            seed=meta["seed"],
        )

    def save_manifests(self) -> None:
        meta = {
            "seed": self.seed,
            "resolutions": list(self.resolutions),
            "splits": {},
            "triplet_resolutions": {},
        }
        for manifest in (self.train, self.test):
            _write_manifest_csv(
                self.root / f"manifest_{manifest.split}.csv", manifest.entries
            )
            for res, triplets in sorted(manifest.triplets.items()):
                _write_triplet_csv(
                    self.root / f"triplets_{manifest.split}_{res}.csv", triplets
                )
            meta["splits"][manifest.split] = {
                "images": len(manifest.entries),
                "identities": len(manifest.identities()),
            }
            meta["triplet_resolutions"][manifest.split] = sorted(manifest.triplets)
        (self.root / "dataset.json").write_text(json.dumps(meta, indent=2) + "\n")


def _write_manifest_csv(path: Path, entries: list[ManifestEntry]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "identity", "resolution", "split"])
        for e in entries:
            writer.writerow([e.path, e.identity, e.resolution, e.split])


def _read_manifest_csv(path: Path) -> list[ManifestEntry]:
    entries = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            entries.append(
                ManifestEntry(
                    path=row["path"],
                    identity=row["identity"],
                    resolution=int(row["resolution"]),
                    split=row["split"],
                )
            )
    return entries


def _write_triplet_csv(path: Path, triplets: list[TripletRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["anchor", "positive", "negative"])
        for t in triplets:
            writer.writerow([t.anchor, t.positive, t.negative])


def _read_triplet_csv(path: Path) -> list[TripletRecord]:
    with open(path, newline="") as fh:
        return [
            TripletRecord(row["anchor"], row["positive"], row["negative"])
            for row in csv.DictReader(fh)
        ]


def synthetic_degrade(image: np.ndarray, target: int) -> np.ndarray:
    """Bicubic downscale to target x target (the synthetic-LR kernel)."""
    img = np.asarray(image)
    h, w = img.shape[:2]
    if target >= min(h, w):
        raise ValueError(
            f"degrade target {target} must be smaller than source {h}x{w}"
        )
    return resize(img, target, target, ResampleMethod.BICUBIC)


def _scan_corpus(corpus_dir: Path) -> dict[str, list[Path]]:
    """Map identity -> sorted list of image files under identity folders."""
    if not corpus_dir.is_dir():
        raise DataError(f"corpus directory not found: {corpus_dir}")
    identities: dict[str, list[Path]] = {}
    for ident_dir in sorted(p for p in corpus_dir.iterdir() if p.is_dir()):
        files = sorted(
            f
            for f in ident_dir.iterdir()
            if f.suffix.lower() in _IMAGE_SUFFIXES and f.is_file()
        )
        if files:
            identities[ident_dir.name] = files
    if not identities:
        raise DataError(f"no identity folders with images under {corpus_dir}")
    return identities


def build_resolution_sets(
    corpus_dir: "str | Path",
    out_dir: "str | Path",
    resolutions: "list[int] | tuple[int, ...]",
    seed: int,
    test_fraction: float = 0.25,
    triplet_count: "int | None" = None,
) -> PreparedDataset:
    """Build per-resolution image sets plus triplet manifests from a corpus.

    The corpus holds one folder per identity with images at >= 112x112.
    Every source image is standardized to 112x112 (bicubic) and each lower
    resolution is derived from that 112 version by bicubic downscaling.
    Identities are split disjointly into train/test with a seeded shuffle.
    `triplet_count` defaults to the number of training source images, per
    anchor resolution.
    """
    corpus_dir = Path(corpus_dir)
    out_dir = Path(out_dir)
    resolutions = sorted(set(int(r) for r in resolutions))
    bad = [r for r in resolutions if r not in VALID_RESOLUTIONS]
    if bad:
        raise ValueError(f"unsupported resolutions {bad}; allowed: {VALID_RESOLUTIONS}")

    identities = _scan_corpus(corpus_dir)
    rng = np.random.default_rng(seed)
    names = sorted(identities)
    order = rng.permutation(len(names))
    n_test = int(round(len(names) * test_fraction))
    n_test = min(n_test, len(names) - 1) if len(names) > 1 else 0
    test_ids = {names[i] for i in order[:n_test]}

    out_dir.mkdir(parents=True, exist_ok=True)
    manifests = {
        "train": DatasetManifest(split="train", seed=seed),
        "test": DatasetManifest(split="test", seed=seed),
    }
    skipped = 0
    thin_identities = 0
    for identity in names:
        split = "test" if identity in test_ids else "train"
        kept = 0
        for src in identities[identity]:
            try:
                img = load_image(src)
            except Exception as exc:  # unreadable file: skip, keep going
                log.warning("skipping unreadable image %s (%s)", src, exc)
                skipped += 1
                continue
            if img.shape[0] < HIGH_RES or img.shape[1] < HIGH_RES:
                log.warning(
                    "skipping %s: %dx%d below %d", src, img.shape[0], img.shape[1], HIGH_RES
                )
                skipped += 1
                continue
            if img.shape[:2] != (HIGH_RES, HIGH_RES):
                img = resize(img, HIGH_RES, HIGH_RES, ResampleMethod.BICUBIC)
            for res in resolutions:
                derived = img if res == HIGH_RES else synthetic_degrade(img, res)
                rel = Path(split) / str(res) / identity / f"{src.stem}.png"
                dest = out_dir / rel
                dest.parent.mkdir(parents=True, exist_ok=True)
                save_image(dest, derived)
                manifests[split].entries.append(
                    ManifestEntry(str(rel), identity, res, split)
                )
            kept += 1
        if kept == 1:
            thin_identities += 1
    if thin_identities:
        log.warning(
            "%d identities have <2 usable images and are excluded from triplets",
            thin_identities,
        )
    if skipped:
        log.warning("skipped %d unreadable/undersized images", skipped)

    anchor_resolutions = [r for r in resolutions if r in LOW_RESOLUTIONS]
    if HIGH_RES in resolutions:
        n_train_sources = len(manifests["train"].entries_at(HIGH_RES))
        count = triplet_count if triplet_count is not None else n_train_sources
        for res in anchor_resolutions:
            try:
                manifests["train"].triplets[res] = sample_triplets(
                    manifests["train"], res, count, seed + res
                )
            except DataError as exc:
                log.warning("no triplets at %d: %s", res, exc)

    dataset = PreparedDataset(
        root=out_dir,
        train=manifests["train"],
        test=manifests["test"],
        resolutions=tuple(resolutions),
        seed=seed,
    )
    dataset.save_manifests()
    return dataset


def sample_triplets(
    manifest: DatasetManifest,
    anchor_resolution: int,
    count: int,
    seed: int,
) -> list[TripletRecord]:
    """Sample `count` (LR anchor, HR positive, HR negative) triplets.

    Sampling is uniform over eligible anchors, then uniform over the same
    identity's other HR source images, then uniform over a different
    identity and uniformly one of its HR images. Deterministic given seed.
    """
    if anchor_resolution not in LOW_RESOLUTIONS:
        raise ValueError(
            f"anchor resolution must be one of {LOW_RESOLUTIONS}, got {anchor_resolution}"
        )
    hr_by_identity = manifest.by_identity(HIGH_RES)
    anchors = manifest.entries_at(anchor_resolution)
    identities_with_hr = sorted(hr_by_identity)
    if len(identities_with_hr) < 2:
        raise DataError("no negative identity available (need >= 2 identities)")

    eligible = [
        a
        for a in anchors
        if len(hr_by_identity.get(a.identity, [])) >= 2
    ]
    if not eligible:
        raise DataError(
            f"no eligible anchors at {anchor_resolution} "
            "(need an identity with >= 2 high-resolution images)"
        )

    rng = np.random.default_rng(seed)
    triplets: list[TripletRecord] = []
    for _ in range(count):
        anchor = eligible[rng.integers(len(eligible))]
        positives = [
            e
            for e in hr_by_identity[anchor.identity]
            if e.source_id != anchor.source_id
        ]
        if not positives:
            # identity had >= 2 HR images so a distinct source always exists
            raise DataError(f"no positive available for {anchor.path}")
        positive = positives[rng.integers(len(positives))]
        other_ids = [i for i in identities_with_hr if i != anchor.identity]
        neg_identity = other_ids[rng.integers(len(other_ids))]
        negatives = hr_by_identity[neg_identity]
        negative = negatives[rng.integers(len(negatives))]
        triplets.append(TripletRecord(anchor.path, positive.path, negative.path))
    return triplets
