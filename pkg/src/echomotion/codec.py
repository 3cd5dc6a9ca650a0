"""Per-frame latent codec: small strided conv autoencoder.

Stands in for a pretrained latent autoencoder: frames go to a spatially
downsampled latent grid where the diffusion model runs. Exposed as an
estimator with fit/transform/inverse_transform; transform returns
channel-last latents (M, h, w, c_l). The downsample factor s may be 1,
2, or 4; s=1 uses single 1x1 convolutions so an identity-weight
configuration reconstructs inputs exactly, which pins down the
encode/decode plumbing independently of training.
"""

import math

import numpy as np
import torch
from sklearn.base import BaseEstimator
from torch import nn
from torch.nn import functional as F

from . import checkpoint as ckpt
from .errors import FormatError, ShapeError, SpecError, TrainingDivergedError
from .utils import seed_everything
from .validation import check_frames

SUPPORTED_DOWNSAMPLE = (1, 2, 4)


class ConvAutoencoder(nn.Module):
    """Encoder/decoder pair; encoder output is linear (unbounded latents)."""

    def __init__(self, downsample: int = 4, latent_channels: int = 4,
                 hidden: int = 32, variational: bool = False):
        super().__init__()
        if downsample not in SUPPORTED_DOWNSAMPLE:
            raise SpecError(f"downsample must be one of {SUPPORTED_DOWNSAMPLE}, got {downsample}")
        self.downsample = downsample
        self.latent_channels = latent_channels
        self.variational = variational
        out_ch = latent_channels * (2 if variational else 1)
        if downsample == 1:
            self.encoder = nn.Sequential(nn.Conv2d(1, out_ch, 1))
            self.decoder = nn.Sequential(nn.Conv2d(latent_channels, 1, 1))
        else:
            n_down = int(math.log2(downsample))
            enc = []
            ch = 1
            for i in range(n_down):
                nxt = hidden * (2 ** i)
                enc += [nn.Conv2d(ch, nxt, 3, stride=2, padding=1), nn.SiLU()]
                ch = nxt
            enc.append(nn.Conv2d(ch, out_ch, 3, padding=1))
            self.encoder = nn.Sequential(*enc)
            dec = [nn.Conv2d(latent_channels, ch, 3, padding=1), nn.SiLU()]
            for i in reversed(range(n_down)):
                nxt = hidden * (2 ** max(i - 1, 0))
                dec += [nn.ConvTranspose2d(ch, nxt, 4, stride=2, padding=1), nn.SiLU()]
                ch = nxt
            dec.append(nn.Conv2d(ch, 1, 3, padding=1))
            self.decoder = nn.Sequential(*dec)

    def encode_moments(self, frames: torch.Tensor):
        """(B, H, W) -> (mean, logvar) each (B, c_l, h, w); logvar None if plain."""
        if frames.shape[-2] % self.downsample or frames.shape[-1] % self.downsample:
            raise ShapeError(
                f"frame dims {tuple(frames.shape[-2:])} not divisible by downsample {self.downsample}"
            )
        z = self.encoder(frames[:, None])
        if self.variational:
            return z[:, : self.latent_channels], z[:, self.latent_channels :]
        return z, None

    def encode(self, frames: torch.Tensor) -> torch.Tensor:
        """(B, H, W) -> (B, c_l, h, w); the mean in variational mode."""
        mean, _ = self.encode_moments(frames)
        return mean

    def decode(self, latents: torch.Tensor) -> torch.Tensor:
        """(B, c_l, h, w) -> (B, H, W)"""
        if latents.shape[1] != self.latent_channels:
            raise ShapeError(
                f"latents have {latents.shape[1]} channels, codec built for {self.latent_channels}"
            )
        return self.decoder(latents)[:, 0]


class FrameAutoencoder(BaseEstimator):
    """Trainable frame codec with the estimator interface.

    fit(X) on frames (M, H, W) in [0, 1]; transform(X) -> channel-last
    latents (M, h, w, c_l); inverse_transform back to frames. Training
    is deterministic under a fixed seed in single-threaded math mode.
    """

    def __init__(self, downsample=4, latent_channels=4, hidden=32, steps=1500,
                 lr=1e-3, batch_size=32, seed=0, variational=False,
                 kl_weight=1e-4, log_every=50):
        self.downsample = downsample
        self.latent_channels = latent_channels
        self.hidden = hidden
        self.steps = steps
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed
        self.variational = variational
        self.kl_weight = kl_weight
        self.log_every = log_every

    def _build(self) -> ConvAutoencoder:
        return ConvAutoencoder(self.downsample, self.latent_channels,
                               self.hidden, self.variational)

    def fit(self, X, y=None):
        frames = check_frames(np.asarray(X), "X", n_dims=(3,))
        seed_everything(self.seed)
        self.model_ = self._build()
        self.loss_history_ = []
        if self.steps == 0:
            self.input_shape_ = frames.shape[1:]
            return self
        data = torch.from_numpy(frames)
        gen = torch.Generator().manual_seed(self.seed)
        opt = torch.optim.Adam(self.model_.parameters(), lr=self.lr)
        self.model_.train()
        for step in range(self.steps):
            idx = torch.randint(0, data.shape[0], (min(self.batch_size, data.shape[0]),), generator=gen)
            batch = data[idx]
            mean, logvar = self.model_.encode_moments(batch)
            if self.variational:
                noise = torch.randn(mean.shape, generator=gen, dtype=mean.dtype)
                z = mean + noise * torch.exp(0.5 * logvar)
                kl = -0.5 * torch.mean(1 + logvar - mean.pow(2) - logvar.exp())
            else:
                z, kl = mean, torch.zeros(())
            recon = self.model_.decode(z)
            loss = F.mse_loss(recon, batch) + self.kl_weight * kl
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"codec loss became non-finite at step {step} (lr={self.lr})"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            if step % self.log_every == 0 or step == self.steps - 1:
                self.loss_history_.append((step, float(loss.detach())))
        self.model_.eval()
        self.input_shape_ = frames.shape[1:]
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise SpecError("codec is not fitted; call fit or load first")

    def transform(self, X) -> np.ndarray:
        """(M, H, W) frames -> (M, h, w, c_l) latents."""
        self._require_fitted()
        frames = check_frames(np.asarray(X), "X", n_dims=(3,))
        with torch.no_grad():
            z = self.model_.encode(torch.from_numpy(frames))
        return z.permute(0, 2, 3, 1).contiguous().numpy()

    def inverse_transform(self, Z) -> np.ndarray:
        """(M, h, w, c_l) latents -> (M, H, W) frames (not clipped)."""
        self._require_fitted()
        z = np.asarray(Z, dtype=np.float32)
        if z.ndim != 4:
            raise ShapeError(f"Z: expected (M, h, w, c_l), got {z.shape}")
        with torch.no_grad():
            frames = self.model_.decode(torch.from_numpy(z).permute(0, 3, 1, 2).contiguous())
        return frames.numpy()

    def reconstruction_mae(self, X) -> float:
        recon = np.clip(self.inverse_transform(self.transform(X)), 0.0, 1.0)
        return float(np.mean(np.abs(recon - np.asarray(X, dtype=np.float32))))

    def save(self, path, extra_meta=None) -> None:
        self._require_fitted()
        meta = {
            "kind": "codec",
            "params": self.get_params(),
            "loss_history": self.loss_history_,
        }
        if extra_meta:
            meta.update(extra_meta)
        ckpt.save_checkpoint(path, ckpt.module_tensors(self.model_), meta)

    @classmethod
    def load(cls, path) -> "FrameAutoencoder":
        tensors, meta = ckpt.load_checkpoint(path)
        if meta.get("kind") != "codec":
            raise FormatError(f"{path}: not a codec checkpoint (kind={meta.get('kind')!r})")
        est = cls(**meta["params"])
        est.model_ = est._build()
        ckpt.load_module_tensors(est.model_, tensors)
        est.model_.eval()
        est.loss_history_ = [tuple(x) for x in meta.get("loss_history", [])]
        return est

    def weights_hash(self) -> str:
        self._require_fitted()
        return ckpt.payload_hash(ckpt.module_tensors(self.model_))


def train_codec(frames, **params) -> FrameAutoencoder:
    """Functional wrapper: fit a FrameAutoencoder on (M, H, W) frames."""
    return FrameAutoencoder(**params).fit(frames)
