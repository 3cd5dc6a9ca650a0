"""Evaluation metrics: SSIM, PSNR, MAE, box-IoU consistency, Fréchet.

SSIM uses the standard 11x11 Gaussian window (sigma 1.5, K1=0.01,
K2=0.03, L=1) over valid window positions only. PSNR is capped at
100 dB so aggregates stay finite. The Fréchet distance works on
(mean, covariance) stats from any feature extractor; the shipped
extractor reuses the trained structure encoder so the metric runs
without pretrained backbones.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .curves import MotionCurveSet, curves_to_boxes, extract_curves
from .errors import ShapeError, SpecError
from .phantom import detect_boxes
from .validation import check_frames, check_same_shape

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PSNR_CAP_DB = 100.0
PSNR_MSE_FLOOR = 1e-10


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b) -> float:
    """Mean SSIM over all valid 11x11 windows of all frames."""
    a = check_frames(np.asarray(a), "a", n_dims=(2, 3))
    b = check_frames(np.asarray(b), "b", n_dims=(2, 3))
    check_same_shape(a, b, ("a", "b"))
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.shape[1] < SSIM_WINDOW or a.shape[2] < SSIM_WINDOW:
        raise ShapeError(f"frames smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    w = _gaussian_window()
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    total = 0.0
    count = 0
    for fa, fb in zip(a.astype(np.float64), b.astype(np.float64)):
        wa = sliding_window_view(fa, (SSIM_WINDOW, SSIM_WINDOW))
        wb = sliding_window_view(fb, (SSIM_WINDOW, SSIM_WINDOW))
        mu_a = np.tensordot(wa, w, axes=([2, 3], [0, 1]))
        mu_b = np.tensordot(wb, w, axes=([2, 3], [0, 1]))
        aa = np.tensordot(wa * wa, w, axes=([2, 3], [0, 1])) - mu_a ** 2
        bb = np.tensordot(wb * wb, w, axes=([2, 3], [0, 1])) - mu_b ** 2
        ab = np.tensordot(wa * wb, w, axes=([2, 3], [0, 1])) - mu_a * mu_b
        s = ((2 * mu_a * mu_b + c1) * (2 * ab + c2)) / (
            (mu_a ** 2 + mu_b ** 2 + c1) * (aa + bb + c2)
        )
        total += s.sum()
        count += s.size
    return float(total / count)


def psnr(a, b) -> float:
    """10 log10(1 / MSE) in dB for [0, 1] frames, capped at 100 dB."""
    a = check_frames(np.asarray(a), "a", n_dims=(2, 3))
    b = check_frames(np.asarray(b), "b", n_dims=(2, 3))
    check_same_shape(a, b, ("a", "b"))
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse < PSNR_MSE_FLOOR:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB))


def mae(a, b) -> float:
    a = check_frames(np.asarray(a), "a", n_dims=(2, 3))
    b = check_frames(np.asarray(b), "b", n_dims=(2, 3))
    check_same_shape(a, b, ("a", "b"))
    return float(np.mean(np.abs(a.astype(np.float64) - b.astype(np.float64))))


def box_iou(a, b) -> float:
    """IoU of two (x_min, y_min, x_max, y_max) boxes as continuous rectangles."""
    ax0, ay0, ax1, ay1 = (float(v) for v in a)
    bx0, by0, bx1, by1 = (float(v) for v in b)
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def iou_consistency(frames, curves: MotionCurveSet, bands, height=None, width=None,
                    min_area: int = 8):
    """Mean IoU between boxes detected on frames and the target curves.

    Pairs where either side is absent are skipped; returns None when no
    pair is defined (undefined, deliberately not 0).
    """
    frames = check_frames(np.asarray(frames), "frames", n_dims=(3,))
    n, h, w = frames.shape
    height = h if height is None else height
    width = w if width is None else width
    if curves.n_frames != n:
        raise ShapeError(f"curves have {curves.n_frames} frames, frames have {n}")
    target_boxes, target_present = curves_to_boxes(curves, height, width)
    det_boxes, det_present = detect_boxes(frames, bands, min_area=min_area)
    if det_present.shape[1] != target_present.shape[1]:
        raise ShapeError(
            f"{det_present.shape[1]} detector bands vs {target_present.shape[1]} curve categories"
        )
    vals = [
        box_iou(det_boxes[i, c], target_boxes[i, c])
        for i in range(n)
        for c in range(target_present.shape[1])
        if det_present[i, c] and target_present[i, c]
    ]
    if not vals:
        return None
    return float(np.mean(vals))


@dataclass(frozen=True)
class FrechetStats:
    mean: np.ndarray  # (D,)
    cov: np.ndarray   # (D, D)

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "cov", np.atleast_2d(np.asarray(self.cov, dtype=np.float64)))
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ShapeError(
                f"cov shape {self.cov.shape} does not match mean dimension {self.mean.size}"
            )


def frechet_stats(features) -> FrechetStats:
    """Sample mean and covariance (ddof=1) of (M, D) feature rows."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ShapeError(f"features: expected (M >= 2, D), got {x.shape}")
    return FrechetStats(mean=x.mean(axis=0), cov=np.cov(x, rowvar=False, ddof=1))


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(a: FrechetStats, b: FrechetStats) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), clamped >= 0.

    Identical stats return exactly 0; the matrix square root goes through
    an eigendecomposition with negative eigenvalues clipped at 0.
    """
    if a.mean.size != b.mean.size:
        raise ShapeError(f"feature dims differ: {a.mean.size} vs {b.mean.size}")
    if np.array_equal(a.mean, b.mean) and np.array_equal(a.cov, b.cov):
        return 0.0
    cov_a = (a.cov + a.cov.T) / 2.0
    cov_b = (b.cov + b.cov.T) / 2.0
    sqrt_a = _psd_sqrt(cov_a)
    inner = sqrt_a @ cov_b @ sqrt_a
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    tr_sqrt = np.sum(np.sqrt(np.clip(vals, 0.0, None)))
    diff = a.mean - b.mean
    d = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt)
    return max(d, 0.0)


class EncoderFeatureExtractor:
    """Frame features from the trained structure encoder.

    Each frame is treated as one full-frame ROI, resampled to the
    encoder's patch size and mapped to its D-vector. Keeps the Fréchet
    metric runnable with no external pretrained backbone.
    """

    def __init__(self, structure_encoder):
        self.encoder = structure_encoder

    def features(self, frames) -> np.ndarray:
        import torch

        from .conditioning import crop_rois

        frames = check_frames(np.asarray(frames), "frames", n_dims=(3,))
        m, h, w = frames.shape
        t = torch.from_numpy(frames)
        boxes = torch.tensor([[0.0, 0.0, w - 1.0, h - 1.0]]).expand(m, 1, 4).contiguous()
        present = torch.ones(m, 1, dtype=torch.bool)
        patches, _ = crop_rois(t, boxes, present, self.encoder.patch_size)
        with torch.no_grad():
            out = self.encoder(patches[:, 0])
        return out.numpy().astype(np.float64)


@dataclass
class MetricReport:
    """Per-clip values plus arithmetic-mean aggregates and the config echo."""

    per_clip: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    clip_count: int = 0
    frechet: float = None
    config: dict = field(default_factory=dict)

    def to_json(self, path) -> None:
        payload = {
            "aggregates": self.aggregates,
            "clip_count": self.clip_count,
            "config": self.config,
            "frechet": self.frechet,
            "per_clip": self.per_clip,
        }
        Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")

    def to_csv(self, path) -> None:
        cols = ["clip", "ssim", "psnr", "mae", "iou_consistency"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for i, row in enumerate(self.per_clip):
                writer.writerow([i] + [row.get(c) for c in cols[1:]])

    @classmethod
    def from_json(cls, path) -> "MetricReport":
        raw = json.loads(Path(path).read_text())
        return cls(per_clip=raw["per_clip"], aggregates=raw["aggregates"],
                   clip_count=raw["clip_count"], frechet=raw["frechet"],
                   config=raw["config"])


def evaluate_clips(generated, targets, bands, config=None, extractor=None) -> MetricReport:
    """Pairwise frame metrics plus curve consistency and optional Fréchet.

    generated/targets: equal-length sequences of VideoClip. The target
    clip supplies both the reference frames and the target curves for
    iou_consistency on the generated frames.
    """
    if len(generated) != len(targets):
        raise SpecError(f"{len(generated)} generated clips vs {len(targets)} targets")
    if not generated:
        raise SpecError("nothing to evaluate")
    per_clip = []
    for gen, tgt in zip(generated, targets):
        h, w = gen.frames.shape[1:]
        curves = extract_curves(tgt.boxes, tgt.present, h, w)
        per_clip.append({
            "ssim": ssim(gen.frames, tgt.frames),
            "psnr": psnr(gen.frames, tgt.frames),
            "mae": mae(gen.frames, tgt.frames),
            "iou_consistency": iou_consistency(gen.frames, curves, bands),
        })
    aggregates = {}
    for key in ("ssim", "psnr", "mae", "iou_consistency"):
        vals = [row[key] for row in per_clip if row[key] is not None]
        aggregates[key] = float(np.mean(vals)) if vals else None
    fd = None
    if extractor is not None:
        feat_g = np.concatenate([extractor.features(c.frames) for c in generated])
        feat_t = np.concatenate([extractor.features(c.frames) for c in targets])
        fd = frechet_distance(frechet_stats(feat_g), frechet_stats(feat_t))
    return MetricReport(per_clip=per_clip, aggregates=aggregates,
                        clip_count=len(generated), frechet=fd,
                        config={} if config is None else config.to_dict())
