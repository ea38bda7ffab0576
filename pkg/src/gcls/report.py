"""Report rendering: a delimited summary table plus diagnostic figures.

The evaluate stage writes the machine-readable JSON report, and this
module renders the human-facing side: a CSV with one row per metric
and PNG figures (reconstruction error bars, a 2-D projection of the
kernel embeddings colored by cluster, the silhouette sweep, and the
training curves) into a figures/ directory next to the CSV.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .clustering import ClusterPlan
from .evaluation import EvalReport
from .training import TrainLog


def write_report_csv(path: str, report: EvalReport) -> None:
    """One row per metric: name, full value, sampled value, error percent."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "full", "sampled", "error_pct"])
        for name in sorted(report.metrics):
            m = report.metrics[name]
            writer.writerow([name, repr(m.full), repr(m.sampled), repr(m.error_pct)])
        writer.writerow(["speedup", "", "", repr(report.speedup)])


def _save(fig, out_dir: str, name: str) -> str:
    path = os.path.join(out_dir, name)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def fig_error_bars(report: EvalReport, out_dir: str) -> str:
    names = sorted(report.metrics)
    errors = [report.metrics[n].error_pct for n in names]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(names, errors, color="#4878b0")
    ax.set_ylabel("reconstruction error (%)")
    ax.set_title(f"sampling error, K={report.k}, speedup {report.speedup:.1f}x")
    ax.tick_params(axis="x", rotation=30)
    return _save(fig, out_dir, "error_bars.png")


def _pca_2d(z: np.ndarray) -> np.ndarray:
    centered = z - z.mean(axis=0, keepdims=True)
    # Top two right singular vectors give the projection plane.
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return centered @ vt[:2].T


def fig_embedding_scatter(
    launch_ids: list[int], z: np.ndarray, plan: ClusterPlan, out_dir: str
) -> str:
    coords = _pca_2d(z)
    assignment = plan.assignment()
    labels = np.array([assignment.get(lid, -1) for lid in launch_ids])
    reps = set(plan.representatives)
    fig, ax = plt.subplots(figsize=(6, 5))
    cmap = plt.get_cmap("tab10")
    for cluster in range(plan.k):
        mask = labels == cluster
        ax.scatter(
            coords[mask, 0],
            coords[mask, 1],
            s=18,
            color=cmap(cluster % 10),
            label=f"cluster {cluster}",
            alpha=0.75,
        )
    rep_mask = np.array([lid in reps for lid in launch_ids])
    ax.scatter(
        coords[rep_mask, 0],
        coords[rep_mask, 1],
        s=140,
        marker="*",
        facecolor="none",
        edgecolor="black",
        linewidths=1.2,
        label="representative",
    )
    ax.set_xlabel("PC 1")
    ax.set_ylabel("PC 2")
    ax.set_title("kernel embeddings (2-D projection)")
    ax.legend(loc="best", fontsize=8)
    return _save(fig, out_dir, "embedding_scatter.png")


def fig_silhouette_sweep(scores: dict[int, float], chosen_k: int, out_dir: str) -> str:
    ks = sorted(scores)
    vals = [scores[k] for k in ks]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ks, vals, marker="o", color="#4878b0")
    ax.axvline(chosen_k, color="#d65f5f", linestyle="--", label=f"selected K={chosen_k}")
    ax.set_xlabel("K")
    ax.set_ylabel("mean silhouette")
    ax.set_title("silhouette sweep")
    ax.legend()
    return _save(fig, out_dir, "silhouette_sweep.png")


def fig_training_curves(log: TrainLog, out_dir: str) -> str:
    epochs = [e.epoch for e in log.entries]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [e.train_loss for e in log.entries], label="train", color="#4878b0")
    ax.plot(epochs, [e.val_loss for e in log.entries], label="validation", color="#d65f5f")
    if log.best_epoch >= 0:
        ax.axvline(log.best_epoch, color="gray", linestyle=":", label=f"best epoch {log.best_epoch}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("contrastive loss")
    ax.set_title("training curves")
    ax.legend()
    return _save(fig, out_dir, "training_curves.png")


def render_figures(
    out_dir: str,
    report: EvalReport,
    plan: ClusterPlan,
    launch_ids: list[int] | None = None,
    embeddings: np.ndarray | None = None,
    sweep: dict[int, float] | None = None,
    train_log: TrainLog | None = None,
) -> list[str]:
    """Render whatever inputs are available; returns written paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = [fig_error_bars(report, out_dir)]
    if embeddings is not None and launch_ids is not None and len(launch_ids):
        written.append(fig_embedding_scatter(launch_ids, embeddings, plan, out_dir))
    if sweep:
        written.append(fig_silhouette_sweep(sweep, plan.k, out_dir))
    if train_log is not None and train_log.entries:
        written.append(fig_training_curves(train_log, out_dir))
    return written
