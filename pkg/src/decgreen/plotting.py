"""Figures written next to the CSV/JSON reports (Agg backend, files only)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

FIG_DPI = 120


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=FIG_DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def _as_image(points: np.ndarray, values: np.ndarray):
    """Reshape row-major grid data (x slow) into an image with y up."""
    n = int(round(np.sqrt(len(points))))
    if n * n != len(points):
        raise ValueError("field plots need a square tensor grid")
    img = np.asarray(values).reshape(n, n).T
    extent = (points[0, 0], points[-1, 0], points[0, 1], points[-1, 1])
    return img, extent


def plot_field_triple(points, u_exact, u_pred, path, title: str = "") -> Path:
    """Exact solution, prediction and absolute error side by side."""
    points = np.asarray(points)
    u_exact = np.asarray(u_exact)
    u_pred = np.asarray(u_pred)
    panels = (
        ("Exact solution", u_exact, "viridis"),
        ("Predicted solution", u_pred, "viridis"),
        ("Error", np.abs(u_exact - u_pred), "magma"),
    )
    fig, axes = plt.subplots(1, 3, figsize=(14, 4.2), layout="constrained")
    vmin = min(u_exact.min(), u_pred.min())
    vmax = max(u_exact.max(), u_pred.max())
    for ax, (name, vals, cmap) in zip(axes, panels):
        img, extent = _as_image(points, vals)
        shared = cmap == "viridis"
        im = ax.imshow(
            img,
            origin="lower",
            extent=extent,
            cmap=cmap,
            vmin=vmin if shared else None,
            vmax=vmax if shared else None,
            aspect="equal",
        )
        ax.set_title(name)
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        fig.colorbar(im, ax=ax, shrink=0.85)
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def plot_loss_history(records: Sequence[dict], path, title: str = "") -> Path:
    steps = [r["step"] for r in records]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key, style in (("total", "-"), ("residual", "--"), ("boundary", ":")):
        vals = np.maximum([r[key] for r in records], 1e-300)
        ax.semilogy(steps, vals, style, label=key)
    ax.set_xlabel("step")
    ax.set_ylabel("training loss")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_benchmark(rows: Sequence[dict], path) -> Path:
    """Per-step wall-clock and kernel-evaluation counts for each model."""
    labels = [r["label"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.bar(labels, [r["median_step_seconds"] for r in rows], color="tab:blue")
    ax1.set_ylabel("median seconds / step")
    ax2.bar(labels, [max(r["kernel_evals_per_step"], 1) for r in rows], color="tab:orange")
    ax2.set_yscale("log")
    ax2.set_ylabel("quadrature-network evaluations / step")
    for ax in (ax1, ax2):
        ax.tick_params(axis="x", rotation=20)
    return _save(fig, path)
