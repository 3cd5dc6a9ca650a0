"""Attention kernels and Gaussian position masks.

Three pieces: plain cross-attention, a Gaussian mask stack built from
bbox corners, and mask-weighted cross-attention where the mask is
multiplied into the scaled logits before the softmax. With an all-ones
mask the weighted kernel is bitwise identical to the plain one (both go
through the same code path and multiplication by 1.0 is exact), so the
unmasked model is the strict zero-mask limit of the masked one.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ShapeError, SpecError

MASK_FLOOR = 1e-3
ATTENTION_MODES = ("multiplicative", "additive")
COMBINE_MODES = ("max", "sum")


def masked_cross_attention(q, k, v, mask=None, mode="multiplicative", query_block=None):
    """softmax((QK^T / sqrt(d)) * M) V over the last two dims.

    q: (..., n_q, d); k: (..., n_k, d); v: (..., n_k, d_v);
    mask: (..., n_q, n_k) in (0, 1] or None for plain attention.
    mode "multiplicative" follows the defining form; "additive" is the
    conventional log-bias variant (logits + log(mask)), kept for ablation.
    query_block processes queries in chunks of that size; the softmax is
    per query row, so chunking is exact, not an approximation.
    """
    if mode not in ATTENTION_MODES:
        raise SpecError(f"mode must be one of {ATTENTION_MODES}, got {mode!r}")
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"q/k feature dims differ: {q.shape[-1]} vs {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"k/v key counts differ: {k.shape[-2]} vs {v.shape[-2]}")
    if mask is not None:
        expected = q.shape[:-1] + (k.shape[-2],)
        if mask.shape != expected:
            raise ShapeError(f"mask: expected {tuple(expected)}, got {tuple(mask.shape)}")
    if query_block is not None and q.shape[-2] > query_block:
        outs = [
            masked_cross_attention(
                q[..., i : i + query_block, :],
                k,
                v,
                None if mask is None else mask[..., i : i + query_block, :],
                mode=mode,
            )
            for i in range(0, q.shape[-2], query_block)
        ]
        return torch.cat(outs, dim=-2)
    weights = attention_weights(q, k, mask=mask, mode=mode)
    return torch.matmul(weights, v)


def cross_attention(q, k, v):
    """Plain scaled-dot-product cross-attention (no mask)."""
    return masked_cross_attention(q, k, v, mask=None)


def attention_weights(q, k, mask=None, mode="multiplicative"):
    """The row-stochastic weight matrix, exposed for inspection and tests."""
    d = q.shape[-1]
    logits = torch.matmul(q, k.transpose(-1, -2)) / math.sqrt(d)
    if mask is not None:
        if mode == "multiplicative":
            logits = logits * mask
        else:
            logits = logits + torch.log(mask)
    logits = logits - logits.amax(dim=-1, keepdim=True)
    return torch.softmax(logits, dim=-1)


def gaussian_bump(height: int, width: int, mu_x: float, mu_y: float, sigma: float):
    """Unnormalized-in-space Gaussian density over the pixel grid.

    Value at pixel (row i, col j) with centers in (x, y) pixel coords:
    1/(2*pi*sigma^2) * exp(-((j-mu_x)^2 + (i-mu_y)^2) / (2*sigma^2)).
    Peak value at the center pixel is 1/(2*pi*sigma^2).
    """
    if sigma <= 0:
        raise SpecError(f"sigma must be > 0, got {sigma}")
    ys = np.arange(height, dtype=np.float64)[:, None]
    xs = np.arange(width, dtype=np.float64)[None, :]
    sq = (xs - mu_x) ** 2 + (ys - mu_y) ** 2
    return np.exp(-sq / (2.0 * sigma * sigma)) / (2.0 * math.pi * sigma * sigma)


@dataclass(eq=False)
class GaussianMaskStack:
    masks: np.ndarray    # (C, h, w) float32 in (0, 1], per-structure max == 1
    present: np.ndarray  # (C,) bool
    sigma: float
    centers: np.ndarray  # (C, 4, 2) corner (x, y) in full-resolution pixels

    @property
    def n_categories(self) -> int:
        return self.masks.shape[0]


def box_corners(box):
    """TL, TR, BL, BR corner (x, y) pairs of one (x_min, y_min, x_max, y_max) box."""
    x0, y0, x1, y1 = (float(v) for v in box)
    return np.array([[x0, y0], [x1, y0], [x0, y1], [x1, y1]], dtype=np.float64)


def build_gaussian_masks(boxes, present, sigma, h, w, height, width,
                         combine="max", floor=MASK_FLOOR) -> GaussianMaskStack:
    """Per-structure Gaussian masks from one frame's boxes.

    For each present structure: a bump at each of the 4 box corners on
    the full H x W grid, combined pixelwise (max by default), rescaled to
    max 1, area-averaged down to h x w, rescaled to max 1 again, then
    floored. Absent structures get a uniform all-ones mask so they act
    as unmasked tokens downstream.
    """
    if combine not in COMBINE_MODES:
        raise SpecError(f"combine must be one of {COMBINE_MODES}, got {combine!r}")
    if height % h or width % w:
        raise SpecError(
            f"full resolution ({height}, {width}) must be divisible by mask resolution ({h}, {w})"
        )
    boxes = np.asarray(boxes, dtype=np.float64)
    present = np.asarray(present, dtype=bool)
    if boxes.shape != (present.shape[0], 4):
        raise ShapeError(f"boxes: expected ({present.shape[0]}, 4), got {boxes.shape}")
    n_cat = present.shape[0]
    masks = np.ones((n_cat, h, w), dtype=np.float32)
    centers = np.zeros((n_cat, 4, 2), dtype=np.float64)
    for c in range(n_cat):
        if not present[c]:
            continue
        corners = box_corners(boxes[c])
        centers[c] = corners
        bumps = np.stack([gaussian_bump(height, width, mx, my, sigma) for mx, my in corners])
        full = bumps.max(axis=0) if combine == "max" else bumps.sum(axis=0)
        full = full / full.max()
        small = full.reshape(h, height // h, w, width // w).mean(axis=(1, 3))
        small = small / small.max()
        masks[c] = np.maximum(small, floor).astype(np.float32)
    return GaussianMaskStack(masks=masks, present=present.copy(), sigma=float(sigma), centers=centers)


def masks_to_attention(stack: GaussianMaskStack) -> np.ndarray:
    """Flatten a (C, h, w) stack to the (h*w, C) layout the kernels expect.

    Row p corresponds to spatial position (p // w, p % w), matching a
    row-major flatten of the latent feature map.
    """
    c, h, w = stack.masks.shape
    return stack.masks.reshape(c, h * w).T.copy()
