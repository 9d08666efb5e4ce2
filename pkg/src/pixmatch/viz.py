"""Visual output: the offset-field overlay (exact pixel composition, saved at
canvas size), PCA embedding images, and the matplotlib report figures written
next to the delimited outputs of train/eval/analyze.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .dataio import save_frame  # noqa: E402
from .metrics import EvalReport, pca_project  # noqa: E402

_PNG_META = {"Software": "pixmatch"}  # fixed metadata keeps files byte-stable

GREEN = np.array([0, 255, 0], np.uint8)
RED = np.array([255, 0, 0], np.uint8)


def offset_viz_points(offsets: np.ndarray, pixel) -> tuple:
    """Full-resolution (target, source) marker centers for one quarter-grid pixel.

    The source marker sits at target + 4*offset, i.e. where the warp samples.
    """
    offsets = np.asarray(offsets).reshape(2, offsets.shape[-2], offsets.shape[-1])
    y, x = int(pixel[0]), int(pixel[1])
    hq, wq = offsets.shape[1:]
    if not (0 <= y < hq and 0 <= x < wq):
        raise ValueError(f"pixel {(y, x)} outside the {hq}x{wq} offset grid")
    ty, tx = 4 * y + 2, 4 * x + 2
    sy = int(round(4 * (y + float(offsets[0, y, x])) + 2))
    sx = int(round(4 * (x + float(offsets[1, y, x])) + 2))
    return (ty, tx), (sy, sx)


def _draw_marker(img: np.ndarray, center, color, radius: int = 2) -> None:
    h, w = img.shape[:2]
    cy, cx = center
    for d in range(-radius, radius + 1):
        if 0 <= cy + d < h and 0 <= cx < w:
            img[cy + d, cx] = color
        if 0 <= cy < h and 0 <= cx + d < w:
            img[cy, cx + d] = color


def emit_offset_viz(frame_a: np.ndarray, frame_b: np.ndarray, offsets: np.ndarray,
                    pixel, path) -> np.ndarray:
    """Overlay two frames at 50% alpha and mark where the warp samples from
    (red) for the chosen target pixel (green). Saved at the frames' size."""
    a, b = np.asarray(frame_a), np.asarray(frame_b)
    if a.shape != b.shape:
        raise ValueError("emit_offset_viz: frame shapes differ")
    (ty, tx), (sy, sx) = offset_viz_points(offsets, pixel)
    canvas = ((a.astype(np.uint16) + b.astype(np.uint16)) // 2).astype(np.uint8)
    _draw_marker(canvas, (sy, sx), RED)
    _draw_marker(canvas, (ty, tx), GREEN, radius=1)
    save_frame(path, canvas)
    return canvas


def pca_embedding_image(ghat: np.ndarray, upscale: int = 4):
    """Top-3 PCA projection of a (C,h,w) feature map as an RGB uint8 image,
    nearest-upsampled for viewing. Returns (image, eigenvalues)."""
    proj, evals = pca_project(ghat, k=3, rescale=True)
    img = np.clip(np.round(proj.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    img = np.repeat(np.repeat(img, upscale, axis=0), upscale, axis=1)
    return img, evals


# ---------------------------------------------------------------------------
# matplotlib figures

def save_loss_figure(epoch_losses, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(1, len(epoch_losses) + 1), epoch_losses, marker="o", ms=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean reconstruction loss")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def save_eval_figure(report: EvalReport, path) -> None:
    names = list(report.sequence_means)
    js = [report.sequence_means[n][0] for n in names]
    fs = [report.sequence_means[n][1] for n in names]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(max(6, 0.7 * len(names) + 2), 4))
    ax.bar(x - 0.2, js, width=0.4, label="J")
    ax.bar(x + 0.2, fs, width=0.4, label="F")
    ax.axhline(report.j_mean, color="C0", ls="--", lw=1, alpha=0.7)
    ax.axhline(report.f_mean, color="C1", ls="--", lw=1, alpha=0.7)
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def save_rf_sim_figure(rows, path) -> None:
    """rows: list of (label, mean cosine similarity)."""
    labels = [r[0] for r in rows]
    vals = [r[1] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(np.arange(len(rows)), vals)
    ax.set_xticks(np.arange(len(rows)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("mean cosine similarity")
    ax.set_ylim(-1.0, 1.05)
    for i, v in enumerate(vals):
        ax.text(i, v, f"{v:.3f}", ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def save_eigenvalue_figure(evals, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(np.arange(1, len(evals) + 1), evals)
    ax.set_xlabel("component")
    ax.set_ylabel("eigenvalue")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
