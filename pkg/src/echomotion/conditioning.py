"""Structure-to-motion alignment: ROI encoding fused with motion tokens.

The initial frame is cropped per structure box, each crop is encoded to
a D-vector by a small conv stack, broadcast across frames, concatenated
with the motion embedding, and compressed by one linear layer into the
conditioning tokens the denoiser attends to. Structures absent at the
initial frame take a per-category running-mean feature from the
training set instead of a crop.
"""

import torch
from torch import nn
from torch.nn import functional as F

from .errors import ShapeError, SpecError
from .encoding import MotionEncoder


def crop_rois(frames: torch.Tensor, boxes: torch.Tensor, present: torch.Tensor,
              patch_size: int = 24):
    """Crop per-category boxes from frames and resample to P x P.

    frames: (B, H, W); boxes: (B, C, 4) as (x_min, y_min, x_max, y_max)
    in pixel coords; present: (B, C) bool. Sampling uses bilinear
    interpolation on a linspace(min, max, P) grid per axis with pixel
    centers at integers, so a box whose size equals P lands exactly on
    pixel centers and the patch equals the raw crop. Returns
    (patches (B, C, P, P), substitute (B, C) bool) with zero patches and
    substitute=True where absent.
    """
    if frames.ndim != 3:
        raise ShapeError(f"frames: expected (B, H, W), got {tuple(frames.shape)}")
    b, height, width = frames.shape
    n_cat = boxes.shape[1]
    if boxes.shape != (b, n_cat, 4) or present.shape != (b, n_cat):
        raise ShapeError(
            f"boxes/present: expected ({b}, C, 4)/({b}, C), got {tuple(boxes.shape)}/{tuple(present.shape)}"
        )
    p = patch_size
    steps = torch.linspace(0.0, 1.0, p, dtype=frames.dtype, device=frames.device)
    x0, y0, x1, y1 = (boxes[..., i] for i in range(4))
    xs = x0[..., None] + (x1 - x0)[..., None] * steps        # (B, C, P)
    ys = y0[..., None] + (y1 - y0)[..., None] * steps        # (B, C, P)
    # align_corners=True: pixel coord v maps to normalized 2v/(size-1) - 1
    gx = 2.0 * xs / (width - 1) - 1.0
    gy = 2.0 * ys / (height - 1) - 1.0
    grid = torch.stack(
        [gx[:, :, None, :].expand(b, n_cat, p, p),
         gy[:, :, :, None].expand(b, n_cat, p, p)], dim=-1
    ).reshape(b * n_cat, p, p, 2)
    inp = frames[:, None].expand(b, n_cat, height, width).reshape(b * n_cat, 1, height, width)
    patches = F.grid_sample(inp, grid, mode="bilinear", align_corners=True)
    patches = patches.reshape(b, n_cat, p, p)
    patches = patches * present[..., None, None].to(patches.dtype)
    return patches, ~present


class StructureEncoder(nn.Module):
    """P x P patch -> D-vector. Category-agnostic, no normalization layers
    so an all-zero parameter state maps every patch to exactly zero."""

    def __init__(self, patch_size: int = 24, dim: int = 256, hidden: int = 32):
        super().__init__()
        if patch_size % 8:
            raise SpecError(f"patch_size must be divisible by 8, got {patch_size}")
        self.patch_size = patch_size
        self.dim = dim
        self.convs = nn.ModuleList([
            nn.Conv2d(1, hidden, 3, stride=2, padding=1),
            nn.Conv2d(hidden, hidden * 2, 3, stride=2, padding=1),
            nn.Conv2d(hidden * 2, hidden * 4, 3, stride=2, padding=1),
        ])
        side = patch_size // 8
        self.head = nn.Linear(hidden * 4 * side * side, dim)

    def forward(self, patches: torch.Tensor) -> torch.Tensor:
        """(..., P, P) -> (..., D)"""
        lead = patches.shape[:-2]
        if patches.shape[-2:] != (self.patch_size, self.patch_size):
            raise ShapeError(
                f"patches: expected trailing ({self.patch_size}, {self.patch_size}), got {tuple(patches.shape[-2:])}"
            )
        x = patches.reshape(-1, 1, self.patch_size, self.patch_size)
        for conv in self.convs:
            x = F.silu(conv(x))
        return self.head(x.flatten(1)).reshape(*lead, self.dim)


class GeneralFeatureBank(nn.Module):
    """Per-category running-mean structure feature over the training set.

    Updates use decay min(self.decay, 1 - 1/k) at the k-th observation,
    so the bank is the exact arithmetic mean until 1 - 1/k reaches the
    configured decay (k = 100 at the default 0.99) and an exponential
    moving average beyond that. Frozen (never updated) at inference.
    """

    def __init__(self, n_categories: int, dim: int, decay: float = 0.99):
        super().__init__()
        if not 0.0 < decay < 1.0:
            raise SpecError(f"decay must be in (0, 1), got {decay}")
        self.decay = decay
        self.register_buffer("vectors", torch.zeros(n_categories, dim))
        self.register_buffer("counts", torch.zeros(n_categories, dtype=torch.long))

    @torch.no_grad()
    def update(self, features: torch.Tensor, present: torch.Tensor) -> None:
        """Fold (B, C, D) features into the running means where present."""
        for c in range(self.vectors.shape[0]):
            sel = present[:, c]
            if not sel.any():
                continue
            for vec in features[sel, c]:
                k = int(self.counts[c]) + 1
                d = min(self.decay, 1.0 - 1.0 / k)
                self.vectors[c] = d * self.vectors[c] + (1.0 - d) * vec
                self.counts[c] = k

    def forward(self, category: int) -> torch.Tensor:
        return self.vectors[category]


class AlignmentHead(nn.Module):
    """Concat(structure, motion) -> conditioning token, one linear layer."""

    def __init__(self, dim: int, cond_dim: int):
        super().__init__()
        self.proj = nn.Linear(2 * dim, cond_dim)

    def forward(self, structure: torch.Tensor, motion: torch.Tensor) -> torch.Tensor:
        if structure.shape != motion.shape:
            raise ShapeError(
                f"structure/motion shapes differ: {tuple(structure.shape)} vs {tuple(motion.shape)}"
            )
        return self.proj(torch.cat([structure, motion], dim=-1))


class ConditioningNetwork(nn.Module):
    """Full conditioning path: frame-0 crops + motion curves -> tokens.

    forward(frames0 (B, H, W), boxes0 (B, C, 4), coords (B, N, C, 8),
    present (B, N, C)) -> (B, N, C, cond_dim). Structure features come
    only from frame 0 and are broadcast over N. update_bank=True folds
    this batch's present-structure features into the general bank
    (training only).
    """

    def __init__(self, n_categories: int, n_freqs: int = 8, dim: int = 256,
                 cond_dim: int = 128, patch_size: int = 24, mlp_depth: int = 2,
                 bank_decay: float = 0.99, fourier_mode: str = "coordinate",
                 encoder_hidden: int = 32):
        super().__init__()
        self.n_categories = n_categories
        self.patch_size = patch_size
        self.cond_dim = cond_dim
        self.motion = MotionEncoder(n_categories, n_freqs=n_freqs, dim=dim,
                                    depth=mlp_depth, mode=fourier_mode)
        self.structure = StructureEncoder(patch_size=patch_size, dim=dim, hidden=encoder_hidden)
        self.bank = GeneralFeatureBank(n_categories, dim, decay=bank_decay)
        self.align = AlignmentHead(dim, cond_dim)

    def encode_structures(self, frames0, boxes0, present0, update_bank=False):
        """(B, H, W) + (B, C, 4) + (B, C) -> (B, C, D) structure features."""
        patches, substitute = crop_rois(frames0, boxes0, present0, self.patch_size)
        feats = self.structure(patches)
        if update_bank and self.training:
            self.bank.update(feats.detach(), present0)
        fill = self.bank.vectors[None].to(feats.dtype)
        return torch.where(substitute[..., None], fill, feats)

    def forward(self, frames0, boxes0, coords, present, update_bank=False):
        if coords.ndim != 4:
            raise ShapeError(f"coords: expected (B, N, C, 8), got {tuple(coords.shape)}")
        b, n, n_cat = coords.shape[:3]
        if present.shape != (b, n, n_cat):
            raise ShapeError(f"present: expected ({b}, {n}, {n_cat}), got {tuple(present.shape)}")
        s_feat = self.encode_structures(frames0, boxes0, present[:, 0], update_bank=update_bank)
        s_feat = s_feat[:, None].expand(b, n, n_cat, s_feat.shape[-1])
        m_feat = self.motion(coords.reshape(b * n, n_cat, -1),
                             present.reshape(b * n, n_cat)).reshape(b, n, n_cat, -1)
        return self.align(s_feat, m_feat)
