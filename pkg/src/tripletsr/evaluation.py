"""Biometric verification metrics over super-resolved probes.

Distances are Euclidean on L2-normalized embeddings by default; smaller
means more similar, and a pair is accepted at threshold theta when
distance < theta. Score sets persist as CSV; reports carry d', AUC, the
ROC polyline, and shared-bin genuine/impostor histograms.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import DatasetManifest, ImageStore, ManifestEntry
from .embeddings import EmbeddingExtractor, normalize
from .errors import DataError, DegenerateScoresError

log = logging.getLogger(__name__)

GENUINE = "genuine"
IMPOSTOR = "impostor"


@dataclass(frozen=True)
class ScorePair:
    probe: str
    gallery: str
    distance: float
    label: str  # genuine | impostor


@dataclass
class ScoreSet:
    pairs: list[ScorePair]
    model_name: str = ""
    resolution: int = 0
    seed: int = 0

    def genuine(self) -> np.ndarray:
        return np.array([p.distance for p in self.pairs if p.label == GENUINE])

    def impostor(self) -> np.ndarray:
        return np.array([p.distance for p in self.pairs if p.label == IMPOSTOR])

    def validate(self) -> None:
        if len(self.genuine()) < 1 or len(self.impostor()) < 1:
            raise DegenerateScoresError(
                "score set needs at least one genuine and one impostor pair"
            )

    def save_csv(self, path: "str | Path") -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["probe", "gallery", "distance", "label"])
            for p in self.pairs:
                writer.writerow([p.probe, p.gallery, repr(p.distance), p.label])

    @classmethod
    def load_csv(cls, path: "str | Path") -> "ScoreSet":
        pairs = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                pairs.append(
                    ScorePair(row["probe"], row["gallery"], float(row["distance"]), row["label"])
                )
        return cls(pairs)


@dataclass
class EvalReport:
    d_prime: float
    auc: float
    roc_points: np.ndarray  # (n, 2) columns (FMR, 1-FNMR)
    genuine_hist: np.ndarray
    impostor_hist: np.ndarray
    bin_edges: np.ndarray
    n_genuine: int
    n_impostor: int
    model_name: str = ""
    resolution: int = 0

    def to_dict(self) -> dict:
        return {
            "model": self.model_name,
            "resolution": self.resolution,
            "d_prime": self.d_prime,
            "auc": self.auc,
            "n_genuine": self.n_genuine,
            "n_impostor": self.n_impostor,
            "roc_points": [[float(a), float(b)] for a, b in self.roc_points],
            "histogram": {
                "bin_edges": self.bin_edges.tolist(),
                "genuine_density": self.genuine_hist.tolist(),
                "impostor_density": self.impostor_hist.tolist(),
            },
        }


def dprime(genuine, impostor) -> float:
    """Population separation |mu_g - mu_i| / sqrt((var_g + var_i) / 2).

    Uses population (not sample) standard deviations. Raises when both
    populations have zero variance.
    """
    g = np.asarray(genuine, dtype=np.float64)
    i = np.asarray(impostor, dtype=np.float64)
    if g.size < 2 or i.size < 2:
        raise DegenerateScoresError("each population needs >= 2 samples")
    var_g = g.var()
    var_i = i.var()
    if var_g == 0.0 and var_i == 0.0:
        raise DegenerateScoresError(
            "both populations have zero variance; separation is undefined"
        )
    return float(abs(g.mean() - i.mean()) / np.sqrt((var_g + var_i) / 2.0))


def roc(score_set: "ScoreSet | tuple") -> np.ndarray:
    """ROC polyline as (FMR, 1-FNMR) rows, one per threshold.

    Thresholds sweep every distinct distance plus -inf/+inf sentinels; at
    threshold theta a pair is accepted when distance < theta, so the curve
    always starts at (0, 0) and ends at (1, 1).
    """
    if isinstance(score_set, ScoreSet):
        score_set.validate()
        g = score_set.genuine()
        i = score_set.impostor()
    else:
        g, i = (np.asarray(x, dtype=np.float64) for x in score_set)
    if g.size == 0 or i.size == 0:
        raise DegenerateScoresError("need both genuine and impostor distances")
    g_sorted = np.sort(g)
    i_sorted = np.sort(i)
    thresholds = np.concatenate(
        ([-np.inf], np.unique(np.concatenate([g_sorted, i_sorted])), [np.inf])
    )
    tpr = np.searchsorted(g_sorted, thresholds, side="left") / g.size
    fmr = np.searchsorted(i_sorted, thresholds, side="left") / i.size
    return np.column_stack([fmr, tpr])


def auc(roc_points) -> float:
    """Trapezoidal area under the (FMR, 1-FNMR) polyline.

    Unsorted points are sorted by threshold order (FMR then 1-FNMR).
    Integrating the full step polyline, vertical risers included, makes the
    area equal tie-aware pair counting (ties count 1/2); collapsing
    duplicate FMR values would inflate it, so they are kept.
    """
    pts = np.asarray(roc_points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise ValueError("need at least two (FMR, TPR) points")
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]
    return float(np.trapezoid(pts[:, 1], pts[:, 0]))


def histogram(genuine, impostor, bins: int = 50):
    """Area-normalized histograms over a shared range and identical edges.

    Returns (genuine_density, impostor_density, bin_edges).
    """
    g = np.asarray(genuine, dtype=np.float64)
    i = np.asarray(impostor, dtype=np.float64)
    if g.size == 0 or i.size == 0:
        raise DegenerateScoresError("need both populations for histograms")
    lo = min(g.min(), i.min())
    hi = max(g.max(), i.max())
    if hi <= lo:
        hi = lo + 1e-9
    g_density, edges = np.histogram(g, bins=bins, range=(lo, hi), density=True)
    i_density, _ = np.histogram(i, bins=bins, range=(lo, hi), density=True)
    return g_density, i_density, edges


def evaluate_scores(score_set: ScoreSet, bins: int = 50) -> EvalReport:
    """Full report (d', AUC, ROC, histograms) for one score set."""
    score_set.validate()
    g = score_set.genuine()
    i = score_set.impostor()
    points = roc(score_set)
    g_hist, i_hist, edges = histogram(g, i, bins=bins)
    return EvalReport(
        d_prime=dprime(g, i),
        auc=auc(points),
        roc_points=points,
        genuine_hist=g_hist,
        impostor_hist=i_hist,
        bin_edges=edges,
        n_genuine=int(g.size),
        n_impostor=int(i.size),
        model_name=score_set.model_name,
        resolution=score_set.resolution,
    )


def sample_pairs(
    probes: list[ManifestEntry],
    gallery: list[ManifestEntry],
    pair_count: int,
    seed: int,
) -> list[tuple[str, str, str]]:
    """Balanced (probe, gallery, label) pair list, deterministic under seed.

    pair_count // 2 genuine and pair_count // 2 impostor pairs. Probes
    whose identity has no gallery partner are excluded (logged).
    """
    if pair_count < 2:
        raise DegenerateScoresError("pair_count must be >= 2")
    by_identity: dict[str, list[ManifestEntry]] = {}
    for e in gallery:
        by_identity.setdefault(e.identity, []).append(e)
    genuine_probes = [p for p in probes if by_identity.get(p.identity)]
    excluded = len(probes) - len(genuine_probes)
    if excluded:
        log.info("%d probes have no genuine gallery partner; excluded", excluded)
    impostor_ok = [
        p for p in probes if any(i != p.identity for i in by_identity)
    ]
    if not genuine_probes or not impostor_ok:
        raise DataError("cannot form both genuine and impostor pairs")

    rng = np.random.default_rng(seed)
    identities = sorted(by_identity)
    pairs: list[tuple[str, str, str]] = []
    for _ in range(pair_count // 2):
        probe = genuine_probes[rng.integers(len(genuine_probes))]
        partner_pool = by_identity[probe.identity]
        partner = partner_pool[rng.integers(len(partner_pool))]
        pairs.append((probe.path, partner.path, GENUINE))
    for _ in range(pair_count - pair_count // 2):
        probe = impostor_ok[rng.integers(len(impostor_ok))]
        other_ids = [i for i in identities if i != probe.identity]
        ident = other_ids[rng.integers(len(other_ids))]
        pool = by_identity[ident]
        partner = pool[rng.integers(len(pool))]
        pairs.append((probe.path, partner.path, IMPOSTOR))
    return pairs


def exhaustive_pairs(
    probes: list[ManifestEntry],
    gallery: list[ManifestEntry],
) -> list[tuple[str, str, str]]:
    """Every probe x gallery pair, labeled; deterministic and sampling-free.

    Practical for desk-scale sets where the full grid is small.
    """
    pairs = []
    for p in probes:
        for g in gallery:
            label = GENUINE if p.identity == g.identity else IMPOSTOR
            pairs.append((p.path, g.path, label))
    return pairs


def score_pairs(
    pair_list: list[tuple[str, str, str]],
    store: ImageStore,
    sr_fn,
    extractor: EmbeddingExtractor,
    normalize_embeddings: bool = True,
    model_name: str = "",
    resolution: int = 0,
    seed: int = 0,
) -> ScoreSet:
    """Embed every probe (super-resolved) and gallery image, then score.

    `sr_fn` maps a low-resolution probe array to the extractor's input
    size; gallery images pass through unchanged.
    """
    probe_cache: dict[str, np.ndarray] = {}
    gallery_cache: dict[str, np.ndarray] = {}

    def embed_probe(path: str) -> np.ndarray:
        if path not in probe_cache:
            vec = extractor.embed(sr_fn(store.load(path)))
            probe_cache[path] = normalize(vec) if normalize_embeddings else vec
        return probe_cache[path]

    def embed_gallery(path: str) -> np.ndarray:
        if path not in gallery_cache:
            vec = extractor.embed(store.load(path))
            gallery_cache[path] = normalize(vec) if normalize_embeddings else vec
        return gallery_cache[path]

    pairs = [
        ScorePair(
            probe=probe,
            gallery=partner,
            distance=float(np.linalg.norm(embed_probe(probe) - embed_gallery(partner))),
            label=label,
        )
        for probe, partner, label in pair_list
    ]
    return ScoreSet(pairs, model_name=model_name, resolution=resolution, seed=seed)


def build_score_set(
    probes: list[ManifestEntry],
    gallery: list[ManifestEntry],
    store: ImageStore,
    sr_fn,
    extractor: EmbeddingExtractor,
    pair_count: int,
    seed: int,
    normalize_embeddings: bool = True,
    model_name: str = "",
    resolution: int = 0,
) -> ScoreSet:
    """Sample balanced pairs and score them in one step."""
    pair_list = sample_pairs(probes, gallery, pair_count, seed)
    return score_pairs(
        pair_list,
        store,
        sr_fn,
        extractor,
        normalize_embeddings=normalize_embeddings,
        model_name=model_name,
        resolution=resolution,
        seed=seed,
    )


@dataclass
class ComparisonTable:
    """Per-model d'/AUC across resolutions with an Average column."""

    resolutions: tuple[int, ...]
    rows: list[dict] = field(default_factory=list)

    def add(self, model: str, cells: dict[int, tuple[float, float]],
            statuses: "dict[int, str] | None" = None) -> None:
        present = [cells[r] for r in self.resolutions if r in cells]
        missing = [r for r in self.resolutions if r not in cells]
        row = {
            "model": model,
            "cells": dict(cells),
            "statuses": dict(statuses or {}),
            "avg_d_prime": float(np.mean([c[0] for c in present])) if present else None,
            "avg_auc": float(np.mean([c[1] for c in present])) if present else None,
            "incomplete": bool(missing),
        }
        self.rows.append(row)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        header = ["model"]
        for r in self.resolutions:
            header += [f"d_prime_{r}", f"auc_{r}"]
        header += ["avg_d_prime", "avg_auc", "incomplete"]
        writer.writerow(header)
        for row in self.rows:
            out = [row["model"]]
            for r in self.resolutions:
                if r in row["cells"]:
                    d, a = row["cells"][r]
                    out += [repr(float(d)), repr(float(a))]
                else:
                    out += ["", ""]
            out += [
                "" if row["avg_d_prime"] is None else repr(row["avg_d_prime"]),
                "" if row["avg_auc"] is None else repr(row["avg_auc"]),
                "yes" if row["incomplete"] else "no",
            ]
            writer.writerow(out)
        return buf.getvalue()

    def to_text(self) -> str:
        headers = ["model"]
        for r in self.resolutions:
            headers += [f"d'@{r}", f"AUC@{r}"]
        headers += ["avg d'", "avg AUC"]
        table = [headers]
        for row in self.rows:
            line = [row["model"] + (" *" if row["incomplete"] else "")]
            for r in self.resolutions:
                if r in row["cells"]:
                    d, a = row["cells"][r]
                    line += [f"{d:.3f}", f"{a:.3f}"]
                else:
                    line += ["-", "-"]
            line += [
                "-" if row["avg_d_prime"] is None else f"{row['avg_d_prime']:.3f}",
                "-" if row["avg_auc"] is None else f"{row['avg_auc']:.3f}",
            ]
            table.append(line)
        widths = [max(len(r[c]) for r in table) for c in range(len(headers))]
        lines = [
            "  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
            for row in table
        ]
        if any(row["incomplete"] for row in self.rows):
            lines.append("* some resolutions absent; averages cover present cells only")
        return "\n".join(lines) + "\n"


def comparison_report(
    reports: list[tuple[str, int, EvalReport]],
    resolutions: "tuple[int, ...] | None" = None,
) -> ComparisonTable:
    """Arrange per-model, per-resolution reports into one comparison table."""
    if not reports:
        raise ValueError("need at least one report")
    if resolutions is None:
        resolutions = tuple(sorted({res for _, res, _ in reports}))
    table = ComparisonTable(resolutions=tuple(resolutions))
    by_model: dict[str, dict[int, tuple[float, float]]] = {}
    order: list[str] = []
    for model, res, report in reports:
        if model not in by_model:
            by_model[model] = {}
            order.append(model)
        by_model[model][res] = (report.d_prime, report.auc)
    for model in order:
        table.add(model, by_model[model])
    return table
