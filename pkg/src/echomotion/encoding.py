"""Sinusoidal encoding of motion curves and the per-category MLP embedding.

Normalized corner coordinates become interleaved sin/cos features at
octave frequencies, coordinate-major: for each of the 8 coordinates the
pairs [sin(2pi*2^k*v), cos(2pi*2^k*v)] for k = 0..L-1, so E = 8 * 2 * L.
Absent structures are represented by learnable per-category placeholder
vectors substituted at the encoded (E-wide) level, before the MLP, so
the placeholders live inside the learned pathway. A temporal-DFT
encoding exists behind a flag for ablation; it broadcasts the spectrum
of each coordinate's time series to every frame so downstream shapes
are unchanged.
"""

import math

import torch
from torch import nn

from .errors import ShapeError, SpecError
from .curves import N_CORNER_COORDS

FOURIER_MODES = ("coordinate", "temporal")
ACTIVATIONS = ("silu", "identity")


def fourier_features(values: torch.Tensor, n_freqs: int) -> torch.Tensor:
    """(..., K) scalars -> (..., K*2*n_freqs) interleaved sin/cos features."""
    if n_freqs < 1:
        raise SpecError(f"n_freqs must be >= 1, got {n_freqs}")
    freqs = 2.0 ** torch.arange(n_freqs, dtype=values.dtype, device=values.device)
    ang = 2.0 * math.pi * values[..., None] * freqs  # (..., K, L)
    feat = torch.stack([torch.sin(ang), torch.cos(ang)], dim=-1)  # (..., K, L, 2)
    return feat.reshape(*values.shape[:-1], values.shape[-1] * 2 * n_freqs)


def temporal_dft_features(coords: torch.Tensor, n_freqs: int) -> torch.Tensor:
    """Ablation encoding: (N, C, K) -> (N, C, K*2*n_freqs) via DFT over time.

    Per (category, coordinate) time series, the first n_freqs complex DFT
    coefficients (normalized by N) fill the [Re, Im] slots that sin/cos
    occupy in the default mode, broadcast identically to all N frames.
    """
    if n_freqs < 1:
        raise SpecError(f"n_freqs must be >= 1, got {n_freqs}")
    n = coords.shape[0]
    spec = torch.fft.rfft(coords, dim=0) / n  # (n_bins, C, K) complex
    n_bins = spec.shape[0]
    if n_bins < n_freqs:
        pad = torch.zeros((n_freqs - n_bins,) + spec.shape[1:], dtype=spec.dtype, device=spec.device)
        spec = torch.cat([spec, pad], dim=0)
    spec = spec[:n_freqs]  # (L, C, K)
    feat = torch.stack([spec.real, spec.imag], dim=-1)          # (L, C, K, 2)
    feat = feat.permute(1, 2, 0, 3).reshape(coords.shape[1], -1)  # (C, K*L*2)
    return feat[None].expand(n, -1, -1).to(coords.dtype).contiguous()


def encoded_width(n_freqs: int, n_coords: int = N_CORNER_COORDS) -> int:
    return n_coords * 2 * n_freqs


class PlaceholderBank(nn.Module):
    """One learnable E-wide vector per category, used where present=false."""

    def __init__(self, n_categories: int, width: int):
        super().__init__()
        self.vectors = nn.Parameter(torch.randn(n_categories, width) * 0.02)

    def forward(self, category: int) -> torch.Tensor:
        return self.vectors[category]


class MotionEncoder(nn.Module):
    """Curve coords -> per-(frame, category) motion embedding tokens.

    encode() produces the E-wide sinusoidal features with placeholder
    substitution; forward() pushes them through a small MLP (E -> D,
    then depth-1 further D -> D layers, nonlinearity between layers).
    activation "identity" exists so identity-weight configurations can
    be verified to pass inputs through exactly.
    """

    def __init__(self, n_categories: int, n_freqs: int = 8, dim: int = 256,
                 depth: int = 2, activation: str = "silu", mode: str = "coordinate"):
        super().__init__()
        if mode not in FOURIER_MODES:
            raise SpecError(f"mode must be one of {FOURIER_MODES}, got {mode!r}")
        if activation not in ACTIVATIONS:
            raise SpecError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
        if depth < 1:
            raise SpecError(f"depth must be >= 1, got {depth}")
        self.n_categories = n_categories
        self.n_freqs = n_freqs
        self.dim = dim
        self.mode = mode
        self.activation = activation
        self.width = encoded_width(n_freqs)
        self.placeholders = PlaceholderBank(n_categories, self.width)
        layers = [nn.Linear(self.width, dim)]
        for _ in range(depth - 1):
            layers.append(nn.Linear(dim, dim))
        self.layers = nn.ModuleList(layers)

    def _activate(self, x: torch.Tensor) -> torch.Tensor:
        return torch.nn.functional.silu(x) if self.activation == "silu" else x

    def encode(self, coords: torch.Tensor, present: torch.Tensor) -> torch.Tensor:
        """(N, C, 8) coords + (N, C) presence -> (N, C, E) encoded tokens."""
        if coords.ndim != 3 or coords.shape[-1] != N_CORNER_COORDS:
            raise ShapeError(f"coords: expected (N, C, 8), got {tuple(coords.shape)}")
        if coords.shape[1] != self.n_categories:
            raise ShapeError(
                f"coords has {coords.shape[1]} categories, encoder built for {self.n_categories}"
            )
        if present.shape != coords.shape[:2]:
            raise ShapeError(
                f"present: expected {tuple(coords.shape[:2])}, got {tuple(present.shape)}"
            )
        if self.mode == "coordinate":
            feat = fourier_features(coords, self.n_freqs)
        else:
            feat = temporal_dft_features(coords, self.n_freqs)
        fill = self.placeholders.vectors[None].expand_as(feat)
        return torch.where(present[..., None], feat, fill)

    def forward(self, coords: torch.Tensor, present: torch.Tensor) -> torch.Tensor:
        """(N, C, 8) coords + (N, C) presence -> (N, C, D) motion embedding."""
        x = self.encode(coords, present)
        for i, layer in enumerate(self.layers):
            if i > 0:
                x = self._activate(x)
            x = layer(x)
        return x
