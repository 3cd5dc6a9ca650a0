"""Spatio-temporal denoiser over latent clips.

A two-resolution UNet applied per frame, with two conditioning hooks in
every block stack: token cross-attention against the per-frame aligned
conditioning tokens (mask-weighted, so an all-ones mask reduces it to
plain cross-attention), and temporal self-attention across the frame
axis at each spatial position. The initial frame's latent is channel-
concatenated to every noisy frame at the input. The output head is
zero-initialized so the untrained model predicts exactly zero noise.
"""

import math

import torch
from torch import nn
from torch.nn import functional as F

from .attention import masked_cross_attention
from .errors import ShapeError, SpecError


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, (B,) -> (B, dim)."""
    if dim % 2:
        raise SpecError(f"embedding dim must be even, got {dim}")
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    ang = t.float()[:, None] * freqs[None]
    return torch.cat([torch.cos(ang), torch.sin(ang)], dim=-1)


def _norm(ch: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, ch), ch)


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, time_dim: int):
        super().__init__()
        self.norm1 = _norm(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch)
        self.norm2 = _norm(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class TokenCrossAttention(nn.Module):
    """Spatial positions attend to conditioning tokens, weighted by masks."""

    def __init__(self, ch: int, cond_dim: int, mask_mode: str = "multiplicative"):
        super().__init__()
        self.norm = _norm(ch)
        self.to_q = nn.Linear(ch, ch)
        self.to_k = nn.Linear(cond_dim, ch)
        self.to_v = nn.Linear(cond_dim, ch)
        self.to_out = nn.Linear(ch, ch)
        self.mask_mode = mask_mode

    def forward(self, x: torch.Tensor, tokens: torch.Tensor, mask) -> torch.Tensor:
        """x: (B, ch, h, w); tokens: (B, C, cond_dim); mask: (B, h*w, C) or None."""
        b, ch, h, w = x.shape
        q = self.to_q(self.norm(x).reshape(b, ch, h * w).transpose(1, 2))
        k = self.to_k(tokens)
        v = self.to_v(tokens)
        att = masked_cross_attention(q, k, v, mask, mode=self.mask_mode)
        return x + self.to_out(att).transpose(1, 2).reshape(b, ch, h, w)


class TemporalSelfAttention(nn.Module):
    """Each spatial position attends over the N frames at that position."""

    def __init__(self, ch: int, max_frames: int = 256):
        super().__init__()
        self.norm = nn.LayerNorm(ch)
        self.to_qkv = nn.Linear(ch, 3 * ch)
        self.to_out = nn.Linear(ch, ch)
        self.max_frames = max_frames

    def frame_embedding(self, n: int, ch: int, device) -> torch.Tensor:
        return timestep_embedding(torch.arange(n, device=device), ch)

    def forward(self, x: torch.Tensor, n_frames: int) -> torch.Tensor:
        """x: (B*N, ch, h, w) -> same, after attention over the N axis."""
        bn, ch, h, w = x.shape
        if bn % n_frames:
            raise ShapeError(f"batch {bn} not divisible by frame count {n_frames}")
        b = bn // n_frames
        # (B*N, ch, h, w) -> (B*h*w, N, ch)
        seq = x.reshape(b, n_frames, ch, h * w).permute(0, 3, 1, 2).reshape(b * h * w, n_frames, ch)
        pos = self.frame_embedding(n_frames, ch, x.device)
        y = self.norm(seq + pos[None])
        q, k, v = self.to_qkv(y).chunk(3, dim=-1)
        att = masked_cross_attention(q, k, v, None)
        seq = seq + self.to_out(att)
        return seq.reshape(b, h * w, n_frames, ch).permute(0, 2, 3, 1).reshape(bn, ch, h, w)


class ConditionedBlock(nn.Module):
    """ResBlock followed by the two conditioning hooks."""

    def __init__(self, in_ch: int, out_ch: int, time_dim: int, cond_dim: int,
                 mask_mode: str = "multiplicative"):
        super().__init__()
        self.res = ResBlock(in_ch, out_ch, time_dim)
        self.cross = TokenCrossAttention(out_ch, cond_dim, mask_mode)
        self.temporal = TemporalSelfAttention(out_ch)

    def forward(self, x, temb, tokens, mask, n_frames):
        x = self.res(x, temb)
        x = self.cross(x, tokens, mask)
        return self.temporal(x, n_frames)


class DenoiserUNet(nn.Module):
    """Noise predictor over latent clips.

    forward(x_t (B, N, c_l, h, w), t (B,), x0_latent (B, c_l, h, w),
    tokens (B, N, C, cond_dim), masks {side: (B, N, side*side, C)})
    -> predicted noise (B, N, c_l, h, w). masks=None (or a missing side)
    means unmasked conditioning at that resolution.
    """

    def __init__(self, latent_channels: int = 4, base_channels: int = 64,
                 channel_mult=(1, 2), cond_dim: int = 128, time_dim: int = 256,
                 mask_mode: str = "multiplicative"):
        super().__init__()
        if len(channel_mult) < 1:
            raise SpecError("channel_mult must be non-empty")
        self.mask_mode = mask_mode
        self.latent_channels = latent_channels
        self.channels = [base_channels * m for m in channel_mult]
        self.time_dim = time_dim
        self.time_mlp = nn.Sequential(
            nn.Linear(time_dim, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim)
        )
        self.stem = nn.Conv2d(2 * latent_channels, self.channels[0], 3, padding=1)
        self.down_blocks = nn.ModuleList()
        self.downsamplers = nn.ModuleList()
        ch = self.channels[0]
        for i, out_ch in enumerate(self.channels):
            self.down_blocks.append(ConditionedBlock(ch, out_ch, time_dim, cond_dim, mask_mode))
            ch = out_ch
            if i < len(self.channels) - 1:
                self.downsamplers.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))
        self.mid_block1 = ConditionedBlock(ch, ch, time_dim, cond_dim, mask_mode)
        self.mid_block2 = ResBlock(ch, ch, time_dim)
        self.up_blocks = nn.ModuleList()
        self.upsamplers = nn.ModuleList()
        for i, skip_ch in reversed(list(enumerate(self.channels))):
            self.up_blocks.append(
                ConditionedBlock(ch + skip_ch, self.channels[max(i - 1, 0)], time_dim, cond_dim, mask_mode)
            )
            ch = self.channels[max(i - 1, 0)]
            if i > 0:
                self.upsamplers.append(nn.Conv2d(ch, ch, 3, padding=1))
        self.out_norm = _norm(ch)
        self.out_conv = nn.Conv2d(ch, latent_channels, 3, padding=1)
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

    def _mask_for(self, masks, side: int, b: int, n: int):
        if masks is None:
            return None
        m = masks.get(side)
        if m is None:
            return None
        if m.shape[:2] != (b, n) or m.shape[2] != side * side:
            raise ShapeError(
                f"mask for side {side}: expected ({b}, {n}, {side * side}, C), got {tuple(m.shape)}"
            )
        return m.reshape(b * n, side * side, m.shape[-1])

    def forward(self, x_t, t, x0_latent, tokens, masks=None):
        if x_t.ndim != 5:
            raise ShapeError(f"x_t: expected (B, N, c, h, w), got {tuple(x_t.shape)}")
        b, n, c, h, w = x_t.shape
        if c != self.latent_channels:
            raise ShapeError(f"x_t has {c} channels, model built for {self.latent_channels}")
        if tokens.shape[:2] != (b, n):
            raise ShapeError(
                f"tokens: expected leading ({b}, {n}), got {tuple(tokens.shape[:2])}"
            )
        if x0_latent.shape != (b, c, h, w):
            raise ShapeError(
                f"x0_latent: expected ({b}, {c}, {h}, {w}), got {tuple(x0_latent.shape)}"
            )
        temb = self.time_mlp(timestep_embedding(t, self.time_dim))
        temb = temb[:, None].expand(b, n, self.time_dim).reshape(b * n, self.time_dim)
        toks = tokens.reshape(b * n, tokens.shape[2], tokens.shape[3])
        x = torch.cat([x_t, x0_latent[:, None].expand_as(x_t)], dim=2)
        x = self.stem(x.reshape(b * n, 2 * c, h, w))
        skips = []
        side = h
        for i, block in enumerate(self.down_blocks):
            x = block(x, temb, toks, self._mask_for(masks, side, b, n), n)
            skips.append((x, side))
            if i < len(self.downsamplers):
                x = self.downsamplers[i](x)
                side //= 2
        x = self.mid_block1(x, temb, toks, self._mask_for(masks, side, b, n), n)
        x = self.mid_block2(x, temb)
        for i, block in enumerate(self.up_blocks):
            skip, side = skips.pop()
            x = block(torch.cat([x, skip], dim=1), temb, toks, self._mask_for(masks, side, b, n), n)
            if i < len(self.upsamplers):
                side *= 2
                x = F.interpolate(x, scale_factor=2, mode="nearest")
                x = self.upsamplers[i](x)
        x = self.out_conv(F.silu(self.out_norm(x)))
        return x.reshape(b, n, c, h, w)
