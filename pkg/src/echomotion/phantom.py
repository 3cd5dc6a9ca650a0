"""Procedural echo-like phantom videos with analytically known motion.

Each clip is a stack of grayscale frames containing a few moving
structures: pulsating chambers (ellipses whose radii oscillate) and a
valve segment (a bar that swings about its center). Every structure
occupies its own disjoint intensity band, so a simple band-threshold
detector can recover per-structure bounding boxes, and the renderer
itself emits exact ground-truth boxes from the noiseless geometry.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import SpecError
from .validation import check_frames

KIND_CHAMBER = "chamber-ellipse"
KIND_VALVE = "valve-segment"

MIN_BAND_GAP = 0.05
MIN_COMPONENT_AREA = 8

DEFAULT_BACKGROUND = 0.06
DEFAULT_NOISE_STRENGTH = 0.02

# 4-connectivity for component labelling
_CONN4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class StructureSpec:
    """Geometry, motion law, and intensity band of one phantom structure.

    For chambers `base_radii` is (rx, ry) in pixels and the radii follow
    r(t) = r0 * (1 + amplitude * sin(2*pi*t/period + phase)). For valves
    `base_radii` is (length, thickness) and the bar swings by
    theta(t) = amplitude * (pi/2) * sin(2*pi*t/period + phase).
    """

    category_id: int
    kind: str
    center: tuple
    base_radii: tuple
    amplitude: float
    period: float
    phase: float
    intensity_band: tuple

    def fill_value(self) -> float:
        lo, hi = self.intensity_band
        return 0.5 * (lo + hi)

    def max_half_extents(self) -> tuple:
        """Conservative half-extents (x, y) over the whole motion cycle."""
        a, b = self.base_radii
        if self.kind == KIND_CHAMBER:
            grow = 1.0 + self.amplitude
            return a * grow, b * grow
        half = 0.5 * a + 0.5 * b
        return half, half


def _motion_phase(spec: StructureSpec, t: float) -> float:
    return 2.0 * math.pi * t / spec.period + spec.phase


def chamber_radii_at(spec: StructureSpec, t: float) -> tuple:
    rx, ry = spec.base_radii
    s = 1.0 + spec.amplitude * math.sin(_motion_phase(spec, t))
    return rx * s, ry * s


def valve_angle_at(spec: StructureSpec, t: float) -> float:
    return spec.amplitude * (math.pi / 2.0) * math.sin(_motion_phase(spec, t))


def validate_specs(specs, height: int, width: int) -> None:
    """Reject specs whose motion can exit the frame or whose bands collide."""
    if not specs:
        raise SpecError("no structure specs given")
    ids = [s.category_id for s in specs]
    if sorted(ids) != list(range(len(specs))):
        raise SpecError(f"category ids must be 0..{len(specs) - 1}, got {sorted(ids)}")
    for spec in specs:
        if spec.kind not in (KIND_CHAMBER, KIND_VALVE):
            raise SpecError(f"unknown structure kind {spec.kind!r}")
        if not 0.0 <= spec.amplitude < 1.0:
            raise SpecError(f"amplitude must lie in [0, 1), got {spec.amplitude}")
        if spec.period < 2:
            raise SpecError(f"period must be >= 2 frames, got {spec.period}")
        lo, hi = spec.intensity_band
        if not 0.0 <= lo < hi <= 1.0:
            raise SpecError(f"intensity band {spec.intensity_band} not an increasing pair in [0, 1]")
        hx, hy = spec.max_half_extents()
        cx, cy = spec.center
        if cx - hx < 0 or cx + hx > width - 1 or cy - hy < 0 or cy + hy > height - 1:
            raise SpecError(
                f"category {spec.category_id}: motion reaches outside the {width}x{height} frame"
            )
    bands = sorted((s.intensity_band for s in specs), key=lambda b: b[0])
    for (lo_a, hi_a), (lo_b, hi_b) in zip(bands, bands[1:]):
        if lo_b - hi_a < MIN_BAND_GAP:
            raise SpecError(
                f"intensity bands ({lo_a}, {hi_a}) and ({lo_b}, {hi_b}) closer than gap {MIN_BAND_GAP}"
            )


def structure_mask(spec: StructureSpec, t: float, height: int, width: int) -> np.ndarray:
    """Exact pixel membership of the structure at frame t (no anti-aliasing).

    Pixel (row i, col j) has coordinates (x=j, y=i).
    """
    ys, xs = np.mgrid[0:height, 0:width]
    cx, cy = spec.center
    dx = xs - cx
    dy = ys - cy
    if spec.kind == KIND_CHAMBER:
        rx, ry = chamber_radii_at(spec, t)
        return (dx / rx) ** 2 + (dy / ry) ** 2 <= 1.0
    theta = valve_angle_at(spec, t)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    along = dx * cos_t + dy * sin_t
    across = -dx * sin_t + dy * cos_t
    length, thickness = spec.base_radii
    return (np.abs(along) <= length / 2.0) & (np.abs(across) <= thickness / 2.0)


def _tight_box(mask: np.ndarray):
    ys, xs = np.nonzero(mask)
    if xs.size == 0:
        return None
    return float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max())


@dataclass(eq=False)
class VideoClip:
    """Frame stack plus per-frame, per-category ground-truth boxes."""

    frames: np.ndarray   # (N, H, W) float32 in [0, 1]
    boxes: np.ndarray    # (N, C, 4) float32, (x_min, y_min, x_max, y_max)
    present: np.ndarray  # (N, C) bool

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_categories(self) -> int:
        return self.boxes.shape[1]


def clips_equal(a: VideoClip, b: VideoClip) -> bool:
    return (
        np.array_equal(a.frames, b.frames)
        and np.array_equal(a.boxes, b.boxes)
        and np.array_equal(a.present, b.present)
    )


def render_phantom(
    specs,
    n_frames: int,
    height: int,
    width: int,
    seed: int = 0,
    noise_strength: float = DEFAULT_NOISE_STRENGTH,
    background: float = DEFAULT_BACKGROUND,
) -> VideoClip:
    """Render a phantom clip with exact ground-truth boxes.

    Structures are filled with their band midpoint and overlaid in
    category order. A single multiplicative speckle field (fixed by
    `seed`) is applied to every frame, so boxes computed from the
    noiseless geometry stay exact and a static scene yields identical
    frames. Box coordinates are the inclusive pixel bounds of the
    rendered shape.
    """
    if n_frames < 2:
        raise SpecError(f"n_frames must be >= 2, got {n_frames}")
    validate_specs(specs, height, width)
    n_categories = len(specs)

    rng = np.random.default_rng(seed)
    speckle = 1.0 + noise_strength * np.clip(rng.standard_normal((height, width)), -2.5, 2.5)

    frames = np.empty((n_frames, height, width), dtype=np.float32)
    boxes = np.zeros((n_frames, n_categories, 4), dtype=np.float32)
    present = np.zeros((n_frames, n_categories), dtype=bool)

    for t in range(n_frames):
        canvas = np.full((height, width), background, dtype=np.float64)
        for spec in sorted(specs, key=lambda s: s.category_id):
            mask = structure_mask(spec, t, height, width)
            box = _tight_box(mask)
            if box is None:
                continue
            canvas[mask] = spec.fill_value()
            boxes[t, spec.category_id] = box
            present[t, spec.category_id] = True
        frames[t] = np.clip(canvas * speckle, 0.0, 1.0).astype(np.float32)

    return VideoClip(frames=frames, boxes=boxes, present=present)


def detect_boxes(frames, bands, min_area: int = MIN_COMPONENT_AREA):
    """Band-threshold detector standing in for a trained anatomy detector.

    Per frame and category: threshold pixels into the band, keep the
    largest 4-connected component, and report its tight bounding box.
    Components smaller than `min_area` pixels count as absent.
    """
    frames = check_frames(frames, n_dims=(3,))
    n_frames = frames.shape[0]
    n_categories = len(bands)
    boxes = np.zeros((n_frames, n_categories, 4), dtype=np.float32)
    present = np.zeros((n_frames, n_categories), dtype=bool)
    for t in range(n_frames):
        frame = frames[t]
        for c, (lo, hi) in enumerate(bands):
            in_band = (frame >= lo) & (frame <= hi)
            if not in_band.any():
                continue
            labels, n_comp = ndimage.label(in_band, structure=_CONN4)
            if n_comp == 0:
                continue
            sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=np.arange(1, n_comp + 1))
            best = int(np.argmax(sizes)) + 1
            if sizes[best - 1] < min_area:
                continue
            box = _tight_box(labels == best)
            boxes[t, c] = box
            present[t, c] = True
    return boxes, present


def default_structure_specs(height: int = 64, width: int = 64):
    """The fixed C=4 desk-scale phantom: three chambers and one valve."""
    if (height, width) != (64, 64):
        raise SpecError("the default layout is designed for 64x64 frames")
    return [
        StructureSpec(0, KIND_CHAMBER, (30.0, 15.0), (10.0, 7.0), 0.25, 12.0, 0.0, (0.22, 0.36)),
        StructureSpec(1, KIND_CHAMBER, (11.0, 53.0), (5.0, 4.0), 0.25, 12.0, 0.9, (0.42, 0.56)),
        StructureSpec(2, KIND_CHAMBER, (52.0, 52.0), (5.0, 4.0), 0.25, 12.0, 1.8, (0.62, 0.76)),
        StructureSpec(3, KIND_VALVE, (32.0, 40.0), (10.0, 3.0), 0.25, 12.0, 2.7, (0.82, 0.97)),
    ]


# per-category jitter bounds for dataset sampling; layout keeps worst-case
# extents inside the frame and structures disjoint (see tests)
_LAYOUT = (
    # kind, center, center_jitter, base_radii, band
    (KIND_CHAMBER, (30.0, 15.0), 3.0, (10.0, 7.0), (0.22, 0.36)),
    (KIND_CHAMBER, (11.0, 53.0), 2.0, (5.0, 4.0), (0.42, 0.56)),
    (KIND_CHAMBER, (52.0, 52.0), 2.0, (5.0, 4.0), (0.62, 0.76)),
    (KIND_VALVE, (32.0, 40.0), 2.0, (10.0, 3.0), (0.82, 0.97)),
)


def sample_structure_specs(
    rng: np.random.Generator, height: int = 64, width: int = 64, n_categories: int = 4
):
    """Draw a randomized-but-safe structure layout for dataset generation.

    Centers, radii, amplitudes, periods, and phases jitter per clip so
    motion curves carry real information; bounds are chosen so the
    worst-case draw still validates.
    """
    if (height, width) != (64, 64):
        raise SpecError("the sampling layout is designed for 64x64 frames")
    if not 1 <= n_categories <= len(_LAYOUT):
        raise SpecError(f"n_categories must be in [1, {len(_LAYOUT)}]")
    specs = []
    for cat, (kind, center, jitter, radii, band) in enumerate(_LAYOUT[:n_categories]):
        cx = center[0] + rng.uniform(-jitter, jitter)
        cy = center[1] + rng.uniform(-jitter, jitter)
        scale = rng.uniform(0.85, 1.15)
        if kind == KIND_CHAMBER:
            base = (radii[0] * scale, radii[1] * scale)
        else:
            base = (radii[0] * scale, radii[1])
        specs.append(
            StructureSpec(
                category_id=cat,
                kind=kind,
                center=(cx, cy),
                base_radii=base,
                amplitude=rng.uniform(0.10, 0.40),
                period=float(rng.integers(8, 17)),
                phase=rng.uniform(0.0, 2.0 * math.pi),
                intensity_band=band,
            )
        )
    validate_specs(specs, height, width)
    return specs


def default_intensity_bands(n_categories: int = 4):
    """Per-category bands shared by the default and sampled layouts."""
    if n_categories > len(_LAYOUT):
        raise SpecError(f"no bands defined beyond {len(_LAYOUT)} categories")
    return [layout[4] for layout in _LAYOUT[:n_categories]]


def category_names(n_categories: int = 4):
    base = ["ventricle", "atrium", "outflow", "valve"]
    if n_categories <= len(base):
        return base[:n_categories]
    return base + [f"structure-{i}" for i in range(len(base), n_categories)]
