"""Matplotlib figure writers for evaluation and training artifacts.

Figures are rendered straight to files (Agg backend) next to the CSV/JSON
outputs they illustrate.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import EvalReport


def save_score_histogram(path: "str | Path", report: EvalReport,
                         title: "str | None" = None) -> Path:
    """Overlaid genuine/impostor density histograms."""
    path = Path(path)
    edges = np.asarray(report.bin_edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    width = edges[1] - edges[0]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(centers, report.genuine_hist, width=width, alpha=0.55,
           label=f"genuine (n={report.n_genuine})", color="tab:green")
    ax.bar(centers, report.impostor_hist, width=width, alpha=0.55,
           label=f"impostor (n={report.n_impostor})", color="tab:red")
    ax.set_xlabel("embedding distance")
    ax.set_ylabel("density")
    ax.set_title(title or f"{report.model_name} @ {report.resolution}  "
                          f"d'={report.d_prime:.3f}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_roc_curve(path: "str | Path", report: EvalReport,
                   title: "str | None" = None) -> Path:
    """ROC polyline with the chance (AUC 0.5) diagonal in red."""
    path = Path(path)
    pts = np.asarray(report.roc_points)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(pts[:, 0], pts[:, 1], color="tab:blue",
            label=f"ROC (AUC={report.auc:.3f})")
    ax.plot([0, 1], [0, 1], color="red", linestyle="--", label="chance (AUC=0.5)")
    ax.set_xlabel("FMR")
    ax.set_ylabel("1 - FNMR")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_title(title or f"{report.model_name} @ {report.resolution}")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_training_curves(path: "str | Path", log) -> Path:
    """Loss per step plus the per-epoch validation d' trace."""
    path = Path(path)
    steps = [r.step for r in log.records]
    totals = [r.l_total for r in log.records]
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    axes[0].plot(steps, totals, lw=0.8)
    axes[0].set_xlabel("step")
    axes[0].set_ylabel("total loss")
    axes[0].set_title(f"training loss ({log.status})")
    snaps = [(s.epoch, s.d_prime) for s in log.snapshots if s.d_prime is not None]
    if snaps:
        epochs, dps = zip(*snaps)
        axes[1].plot(epochs, dps, marker="o")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("validation d'")
    axes[1].set_title("validation separation")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
