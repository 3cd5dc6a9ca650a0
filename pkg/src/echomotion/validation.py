"""Input validation helpers shared by estimators and functional ops."""

import numpy as np

from .errors import ShapeError


def check_frames(frames, name: str = "frames", n_dims=(2, 3)) -> np.ndarray:
    """Validate a frame stack: float array, finite, values in [0, 1]."""
    arr = np.asarray(frames, dtype=np.float32)
    if arr.ndim not in n_dims:
        raise ShapeError(f"{name}: expected {n_dims}-d array, got shape {arr.shape}")
    if arr.size and not np.isfinite(arr).all():
        raise ValueError(f"{name}: non-finite values")
    if arr.size and (arr.min() < -1e-6 or arr.max() > 1 + 1e-6):
        raise ValueError(f"{name}: values outside [0, 1] (min {arr.min():.4g}, max {arr.max():.4g})")
    return np.clip(arr, 0.0, 1.0)


def check_same_shape(a: np.ndarray, b: np.ndarray, names=("a", "b")) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{names[0]} shape {a.shape} != {names[1]} shape {b.shape}")


def check_boxes(boxes, present, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Validate per-frame, per-category boxes (x_min, y_min, x_max, y_max).

    Bounds are only enforced where `present` is True; absent entries are
    carried through untouched.
    """
    boxes = np.asarray(boxes, dtype=np.float32)
    present = np.asarray(present, dtype=bool)
    if boxes.ndim != 3 or boxes.shape[-1] != 4:
        raise ShapeError(f"boxes: expected (N, C, 4), got {boxes.shape}")
    if present.shape != boxes.shape[:2]:
        raise ShapeError(f"present shape {present.shape} != boxes frame/category dims {boxes.shape[:2]}")
    if present.any():
        sel = boxes[present]
        if not np.isfinite(sel).all():
            raise ValueError("boxes: non-finite values on present entries")
        x_min, y_min, x_max, y_max = sel.T
        if (x_min < 0).any() or (y_min < 0).any() or (x_max > width).any() or (y_max > height).any():
            raise ValueError("boxes: coordinates outside the frame")
        if (x_min > x_max).any() or (y_min > y_max).any():
            raise ValueError("boxes: min coordinate exceeds max")
    return boxes, present


def check_category(category: int, n_categories: int) -> int:
    category = int(category)
    if not 0 <= category < n_categories:
        raise ValueError(f"category {category} out of range [0, {n_categories})")
    return category


def check_probability_range(value: float, name: str) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value
