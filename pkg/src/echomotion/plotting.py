"""Static figure output for curves and generated clips.

Everything here renders through the Agg backend and writes PNG files;
nothing opens a window.  These are diagnostic plots, not part of the
numeric pipeline, so they carry no tests beyond "file gets written".
"""

import numpy as np

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .curves import MotionCurveSet, curves_to_boxes
from .phantom import category_names, detect_boxes

__all__ = ["plot_curves", "plot_box_traces", "save_frame_grid"]

_CORNER_LABELS = ("x0", "y0", "x1", "y1", "x0", "y1", "x1", "y0")


def _box_traces(boxes: np.ndarray, present: np.ndarray):
    """Per-category center-x, center-y, width, height arrays with NaN gaps."""
    n, c, _ = boxes.shape
    out = np.full((c, 4, n), np.nan)
    for ci in range(c):
        for t in range(n):
            if not present[t, ci]:
                continue
            x0, y0, x1, y1 = boxes[t, ci]
            out[ci, :, t] = ((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)
    return out


def plot_curves(curves: MotionCurveSet, path, names=None) -> None:
    """One panel per category: normalized corner coordinates over frames."""
    if names is None:
        names = category_names(curves.n_categories)
    n_cat = curves.n_categories
    fig, axes = plt.subplots(n_cat, 1, figsize=(7, 2.0 * n_cat), sharex=True, squeeze=False)
    frames = np.arange(curves.n_frames)
    for ci in range(n_cat):
        ax = axes[ci, 0]
        coords = curves.coords[:, ci, :].copy()
        coords[~curves.present[:, ci]] = np.nan
        for k in range(coords.shape[1]):
            ax.plot(frames, coords[:, k], lw=1.0)
        ax.set_ylabel(names[ci], fontsize=8)
        ax.set_ylim(-0.05, 1.05)
        ax.grid(alpha=0.3)
    axes[-1, 0].set_xlabel("frame")
    fig.suptitle("motion curves (normalized corner coordinates)", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_box_traces(generated_frames, target_curves: MotionCurveSet, bands, path, names=None) -> None:
    """Generated-vs-target box traces per category.

    Detects boxes on the generated frames by intensity band and overlays
    them on the boxes implied by the target curves.  Four rows per
    category: center-x, center-y, width, height (pixels).
    """
    generated_frames = np.asarray(generated_frames)
    n, height, width = generated_frames.shape
    det_boxes, det_present = detect_boxes(generated_frames, bands)
    tgt_boxes, tgt_present = curves_to_boxes(target_curves, height, width)
    det = _box_traces(det_boxes, det_present)
    tgt = _box_traces(tgt_boxes, tgt_present)
    n_cat = det.shape[0]
    if names is None:
        names = category_names(n_cat)
    measures = ("center-x", "center-y", "width", "height")
    fig, axes = plt.subplots(n_cat, 4, figsize=(12, 2.0 * n_cat), sharex=True, squeeze=False)
    frames = np.arange(n)
    for ci in range(n_cat):
        for mi in range(4):
            ax = axes[ci, mi]
            ax.plot(frames, tgt[ci, mi], lw=1.2, label="target")
            ax.plot(frames, det[ci, mi], lw=1.0, ls="--", label="generated")
            ax.grid(alpha=0.3)
            if ci == 0:
                ax.set_title(measures[mi], fontsize=9)
            if mi == 0:
                ax.set_ylabel(names[ci], fontsize=8)
    axes[0, 0].legend(fontsize=7)
    axes[-1, 0].set_xlabel("frame")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_frame_grid(frames, path, n_cols: int = 6) -> None:
    """Tile clip frames into a single overview image."""
    frames = np.asarray(frames)
    n = frames.shape[0]
    n_rows = (n + n_cols - 1) // n_cols
    fig, axes = plt.subplots(n_rows, n_cols, figsize=(1.6 * n_cols, 1.6 * n_rows), squeeze=False)
    for i in range(n_rows * n_cols):
        ax = axes[i // n_cols, i % n_cols]
        ax.axis("off")
        if i < n:
            ax.imshow(frames[i], cmap="gray", vmin=0.0, vmax=1.0)
            ax.set_title(f"t={i}", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
