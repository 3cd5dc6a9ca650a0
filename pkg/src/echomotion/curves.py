"""Per-structure motion curves: bbox-corner trajectories and their edits.

A curve set stores, per frame and category, the four bbox corner points
(TL, TR, BL, BR) normalized to [0, 1] by the frame dimensions, laid out
as 8 floats [x_tl, y_tl, x_tr, y_tr, x_bl, y_bl, x_br, y_br]. Curve
files are plain JSON so users can edit them by hand, and the scale /
replace / resample ops below are the programmatic editing surface.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError
from .validation import check_boxes, check_category

logger = logging.getLogger(__name__)

CURVES_VERSION = "ecm-curves/1"
N_CORNER_COORDS = 8


@dataclass(eq=False)
class MotionCurveSet:
    coords: np.ndarray   # (N, C, 8) float64 in [0, 1] where present
    present: np.ndarray  # (N, C) bool

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.present = np.asarray(self.present, dtype=bool)
        if self.coords.ndim != 3 or self.coords.shape[-1] != N_CORNER_COORDS:
            raise ShapeError(f"coords: expected (N, C, 8), got {self.coords.shape}")
        if self.present.shape != self.coords.shape[:2]:
            raise ShapeError(
                f"present shape {self.present.shape} != coords frame/category dims {self.coords.shape[:2]}"
            )

    @property
    def n_frames(self) -> int:
        return self.coords.shape[0]

    @property
    def n_categories(self) -> int:
        return self.coords.shape[1]

    def copy(self) -> "MotionCurveSet":
        return MotionCurveSet(self.coords.copy(), self.present.copy())


def curves_equal(a: MotionCurveSet, b: MotionCurveSet) -> bool:
    return np.array_equal(a.coords, b.coords) and np.array_equal(a.present, b.present)


def extract_curves(boxes, present, height: int, width: int) -> MotionCurveSet:
    """Turn bbox trajectories into normalized corner-point curves.

    Corner order is TL, TR, BL, BR; x is divided by width, y by height.
    Absent entries are zero-filled. A zero-area box is kept as a present
    curve with coincident corners.
    """
    boxes, present = check_boxes(boxes, present, height, width)
    n, c = present.shape
    x_min, y_min, x_max, y_max = (boxes[..., i].astype(np.float64) for i in range(4))
    coords = np.zeros((n, c, N_CORNER_COORDS), dtype=np.float64)
    coords[..., 0] = x_min / width   # TL
    coords[..., 1] = y_min / height
    coords[..., 2] = x_max / width   # TR
    coords[..., 3] = y_min / height
    coords[..., 4] = x_min / width   # BL
    coords[..., 5] = y_max / height
    coords[..., 6] = x_max / width   # BR
    coords[..., 7] = y_max / height
    coords[~present] = 0.0
    return MotionCurveSet(coords=coords, present=present.copy())


def curves_to_boxes(curves: MotionCurveSet, height: int, width: int):
    """Recover pixel boxes from corner curves (min/max over the corners)."""
    xs = curves.coords[..., 0::2] * width
    ys = curves.coords[..., 1::2] * height
    boxes = np.stack(
        [xs.min(axis=-1), ys.min(axis=-1), xs.max(axis=-1), ys.max(axis=-1)], axis=-1
    ).astype(np.float32)
    boxes[~curves.present] = 0.0
    return boxes, curves.present.copy()


def scale_curve(curves: MotionCurveSet, category: int, factor: float) -> MotionCurveSet:
    """Scale one category's motion about its temporal mean.

    Per coordinate: c'(t) = m + factor * (c(t) - m) with m the mean over
    present frames. Results are clamped back into [0, 1]; the number of
    clamped values is logged.
    """
    category = check_category(category, curves.n_categories)
    if factor < 0:
        raise ValueError(f"scale factor must be >= 0, got {factor}")
    out = curves.copy()
    sel = curves.present[:, category]
    if not sel.any():
        return out
    track = curves.coords[sel, category, :]
    mean = track.mean(axis=0)
    scaled = mean + factor * (track - mean)
    clamped = np.clip(scaled, 0.0, 1.0)
    n_clamped = int((clamped != scaled).sum())
    if n_clamped:
        logger.info("scale_curve: clamped %d coordinate values into [0, 1]", n_clamped)
    out.coords[sel, category, :] = clamped
    return out


def replace_curve(curves_a: MotionCurveSet, curves_b: MotionCurveSet, category: int) -> MotionCurveSet:
    """Copy one category's coords and presence from b into a."""
    category = check_category(category, curves_a.n_categories)
    if curves_a.n_frames != curves_b.n_frames:
        raise ShapeError(
            f"frame count mismatch ({curves_a.n_frames} vs {curves_b.n_frames}); resample first"
        )
    if curves_a.n_categories != curves_b.n_categories:
        raise ShapeError(
            f"category count mismatch ({curves_a.n_categories} vs {curves_b.n_categories})"
        )
    out = curves_a.copy()
    out.coords[:, category, :] = curves_b.coords[:, category, :]
    out.present[:, category] = curves_b.present[:, category]
    return out


def resample_curve(curves: MotionCurveSet, n_out: int) -> MotionCurveSet:
    """Linearly interpolate curves in time; presence by nearest neighbor."""
    if n_out < 2:
        raise ValueError(f"n_out must be >= 2, got {n_out}")
    n = curves.n_frames
    if n_out == n:
        return curves.copy()
    t_in = np.arange(n, dtype=np.float64)
    t_out = np.linspace(0.0, n - 1, n_out)
    flat = curves.coords.reshape(n, -1)
    coords = np.empty((n_out, flat.shape[1]), dtype=np.float64)
    for j in range(flat.shape[1]):
        coords[:, j] = np.interp(t_out, t_in, flat[:, j])
    nearest = np.floor(t_out + 0.5).astype(int).clip(0, n - 1)
    return MotionCurveSet(
        coords=coords.reshape(n_out, curves.n_categories, N_CORNER_COORDS),
        present=curves.present[nearest],
    )


def save_curves(curves: MotionCurveSet, path) -> None:
    payload = {
        "format_version": CURVES_VERSION,
        "n_frames": curves.n_frames,
        "n_categories": curves.n_categories,
        "coords": curves.coords.tolist(),
        "present": curves.present.astype(int).tolist(),
    }
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def load_curves(path) -> MotionCurveSet:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict) or raw.get("format_version") != CURVES_VERSION:
        raise FormatError(f"{path}: not a {CURVES_VERSION} curve file")
    coords = np.asarray(raw["coords"], dtype=np.float64)
    present = np.asarray(raw["present"], dtype=bool)
    curves = MotionCurveSet(coords=coords, present=present)
    if curves.n_frames != raw["n_frames"] or curves.n_categories != raw["n_categories"]:
        raise FormatError(f"{path}: declared shape does not match stored arrays")
    return curves
