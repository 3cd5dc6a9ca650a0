"""Latent video diffusion: schedule, training loop, deterministic sampler.

Training minimizes the epsilon-prediction MSE over random timesteps,
clips, window starts, and frame sampling intervals. Sampling is the
eta=0 deterministic reverse process, so a fixed seed fixes the output
video exactly. The full pipeline (codec, conditioning network, denoiser,
normalization stats) lives in one checkpoint; the codec weights are
embedded so a generation artifact never depends on a separate file
staying in sync.
"""

import csv
import math
import time
from dataclasses import dataclass

import numpy as np
import torch
from sklearn.base import BaseEstimator
from torch.nn import functional as F

from . import checkpoint as ckpt
from .attention import build_gaussian_masks, masks_to_attention
from .codec import FrameAutoencoder
from .conditioning import ConditioningNetwork
from .config import RunConfig
from .curves import MotionCurveSet, curves_to_boxes, extract_curves
from .errors import FormatError, ShapeError, SpecError, TrainingDivergedError
from .phantom import VideoClip
from .unet import DenoiserUNet
from .utils import seed_everything
from .validation import check_frames


class NoiseSchedule:
    """Linear-beta DDPM schedule with cached cumulative alpha products."""

    def __init__(self, betas: np.ndarray):
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise SpecError(f"betas must be a 1-D array, got shape {betas.shape}")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise SpecError("betas must lie strictly inside (0, 1)")
        self.betas = betas
        self.alphas_cumprod = np.cumprod(1.0 - betas)
        if np.any(np.diff(self.alphas_cumprod) >= 0):
            raise SpecError("cumulative alpha products must be strictly decreasing")
        if self.alphas_cumprod[0] < 0.9:
            raise SpecError(f"alpha_bar[0] = {self.alphas_cumprod[0]:.4f}, expected near 1")
        if self.alphas_cumprod[-1] > 0.05:
            raise SpecError(f"alpha_bar[T-1] = {self.alphas_cumprod[-1]:.4f}, expected near 0")

    @classmethod
    def linear(cls, timesteps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02):
        return cls(np.linspace(beta_start, beta_end, timesteps))

    @property
    def timesteps(self) -> int:
        return self.betas.size

    def alpha_bar(self, t) -> torch.Tensor:
        """Cumulative alpha product at t, float64 so sqrt stays precise."""
        t = torch.as_tensor(t, dtype=torch.long)
        if torch.any(t < 0) or torch.any(t >= self.timesteps):
            raise SpecError(f"t must lie in [0, {self.timesteps}), got {t.tolist()}")
        return torch.from_numpy(self.alphas_cumprod)[t]


def q_sample(x0: torch.Tensor, t, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Forward process: x_t = sqrt(a_bar_t) x0 + sqrt(1 - a_bar_t) eps."""
    if eps.shape != x0.shape:
        raise ShapeError(f"eps shape {tuple(eps.shape)} != x0 shape {tuple(x0.shape)}")
    ab = schedule.alpha_bar(t)
    sqrt_ab = torch.sqrt(ab).to(x0.dtype)
    sqrt_rest = torch.sqrt(1.0 - ab).to(x0.dtype)
    while sqrt_ab.ndim < x0.ndim:
        sqrt_ab, sqrt_rest = sqrt_ab[..., None], sqrt_rest[..., None]
    return sqrt_ab * x0 + sqrt_rest * eps


def ddim_timesteps(total: int, n_steps: int) -> list:
    """Descending unique timesteps from T-1 down to 0."""
    if not 1 <= n_steps <= total:
        raise SpecError(f"n_steps must lie in [1, {total}], got {n_steps}")
    ts = np.unique(np.round(np.linspace(total - 1, 0, n_steps)).astype(int))
    return list(ts[::-1])


def ddim_sample(model_fn, x_start: torch.Tensor, schedule: NoiseSchedule, n_steps: int) -> torch.Tensor:
    """Deterministic (eta=0) reverse process from pure noise x_start.

    model_fn(x, t) -> predicted eps for scalar timestep t applied to the
    whole batch. Each step forms the closed-form x0 estimate and steps
    to the next timestep; the final step returns the x0 estimate itself.
    """
    ts = ddim_timesteps(schedule.timesteps, n_steps)
    x = x_start
    for i, t in enumerate(ts):
        ab_t = float(schedule.alpha_bar(t))
        eps = model_fn(x, t)
        x0_hat = (x - math.sqrt(1.0 - ab_t) * eps) / math.sqrt(ab_t)
        if i + 1 == len(ts):
            x = x0_hat
        else:
            ab_next = float(schedule.alpha_bar(ts[i + 1]))
            x = math.sqrt(ab_next) * x0_hat + math.sqrt(1.0 - ab_next) * eps
    return x


def mask_sides(config: RunConfig) -> list:
    side = config.height // config.downsample
    return [side // (2 ** i) for i in range(len(config.channel_mult))]


def frame_masks(boxes, present, config: RunConfig, sides=None) -> dict:
    """Per-frame Gaussian masks at every attention resolution.

    boxes: (N, C, 4) pixel boxes; present: (N, C). Returns
    {side: float32 (N, side*side, C)}.
    """
    sides = mask_sides(config) if sides is None else sides
    n = boxes.shape[0]
    out = {}
    for side in sides:
        flat = np.empty((n, side * side, present.shape[1]), dtype=np.float32)
        for i in range(n):
            stack = build_gaussian_masks(
                boxes[i], present[i], config.sigma, side, side,
                config.height, config.width,
                combine=config.mask_combine, floor=config.mask_floor,
            )
            flat[i] = masks_to_attention(stack)
        out[side] = flat
    return out


@dataclass(eq=False)
class TrainingArrays:
    """Everything the training loop samples from, precomputed once."""

    frames: torch.Tensor    # (K, F, H, W)
    boxes: torch.Tensor     # (K, F, C, 4)
    present: torch.Tensor   # (K, F, C) bool
    coords: torch.Tensor    # (K, F, C, 8)
    latents: torch.Tensor   # (K, F, c_l, h, w), normalized
    masks: dict             # side -> (K, F, side*side, C)
    mean: torch.Tensor      # (c_l,)
    std: torch.Tensor       # (c_l,)


def prepare_training_data(clips, codec: FrameAutoencoder, config: RunConfig) -> TrainingArrays:
    if not clips:
        raise SpecError("training requires at least one clip")
    k = len(clips)
    f = clips[0].n_frames
    frames = np.stack([c.frames for c in clips])
    boxes = np.stack([c.boxes for c in clips])
    present = np.stack([c.present for c in clips])
    lat = codec.transform(frames.reshape(k * f, config.height, config.width))
    lat = torch.from_numpy(lat).permute(0, 3, 1, 2).reshape(
        k, f, config.latent_channels, config.height // config.downsample,
        config.width // config.downsample)
    mean = lat.mean(dim=(0, 1, 3, 4))
    std = lat.std(dim=(0, 1, 3, 4)).clamp_min(1e-6)
    lat = (lat - mean[:, None, None]) / std[:, None, None]
    coords = np.empty((k, f, config.n_categories, 8), dtype=np.float32)
    for i, clip in enumerate(clips):
        curves = extract_curves(clip.boxes, clip.present, config.height, config.width)
        coords[i] = curves.coords.astype(np.float32)
    masks = {}
    for i in range(k):
        per_clip = frame_masks(boxes[i], present[i], config)
        for side, arr in per_clip.items():
            masks.setdefault(side, np.empty((k,) + arr.shape, dtype=np.float32))[i] = arr
    return TrainingArrays(
        frames=torch.from_numpy(frames),
        boxes=torch.from_numpy(boxes),
        present=torch.from_numpy(present),
        coords=torch.from_numpy(coords),
        latents=lat,
        masks={s: torch.from_numpy(a) for s, a in masks.items()},
        mean=mean,
        std=std,
    )


class GenerationPipeline:
    """Trained bundle: codec + conditioning network + denoiser + schedule."""

    def __init__(self, config: RunConfig, codec: FrameAutoencoder,
                 cond_net: ConditioningNetwork, unet: DenoiserUNet,
                 schedule: NoiseSchedule, mean: torch.Tensor, std: torch.Tensor,
                 step: int = 0):
        self.config = config
        self.codec = codec
        self.cond_net = cond_net
        self.unet = unet
        self.schedule = schedule
        self.mean = mean
        self.std = std
        self.step = step

    @classmethod
    def build(cls, config: RunConfig, codec: FrameAutoencoder) -> "GenerationPipeline":
        cond_net = ConditioningNetwork(
            n_categories=config.n_categories, n_freqs=config.n_freqs,
            dim=config.motion_dim, cond_dim=config.cond_dim,
            patch_size=config.roi_size, mlp_depth=config.motion_mlp_depth,
            bank_decay=config.bank_decay, fourier_mode=config.fourier_mode,
        )
        unet = DenoiserUNet(
            latent_channels=config.latent_channels, base_channels=config.base_channels,
            channel_mult=config.channel_mult, cond_dim=config.cond_dim,
            time_dim=config.time_dim, mask_mode=config.attention_mask_mode,
        )
        schedule = NoiseSchedule.linear(config.timesteps, config.beta_start, config.beta_end)
        c_l = config.latent_channels
        return cls(config, codec, cond_net, unet, schedule,
                   torch.zeros(c_l), torch.ones(c_l))

    def _normalize(self, lat: torch.Tensor) -> torch.Tensor:
        return (lat - self.mean[:, None, None]) / self.std[:, None, None]

    def _denormalize(self, lat: torch.Tensor) -> torch.Tensor:
        return lat * self.std[:, None, None] + self.mean[:, None, None]

    def encode_frame(self, frame: np.ndarray) -> torch.Tensor:
        lat = self.codec.transform(frame[None])
        return self._normalize(torch.from_numpy(lat).permute(0, 3, 1, 2)[0])

    @torch.no_grad()
    def generate(self, frame0: np.ndarray, curves: MotionCurveSet, seed: int = 0,
                 ddim_steps=None, use_masks: bool = True) -> VideoClip:
        """One video from an initial frame plus motion curves."""
        cfg = self.config
        frame0 = check_frames(np.asarray(frame0), "frame0", n_dims=(2,))
        if frame0.shape != (cfg.height, cfg.width):
            raise ShapeError(f"frame0: expected ({cfg.height}, {cfg.width}), got {frame0.shape}")
        if curves.n_categories != cfg.n_categories:
            raise SpecError(
                f"curves have {curves.n_categories} categories, model expects {cfg.n_categories}"
            )
        self.cond_net.eval()
        self.unet.eval()
        n = curves.n_frames
        steps = cfg.ddim_steps if ddim_steps is None else ddim_steps
        boxes, present = curves_to_boxes(curves, cfg.height, cfg.width)
        gen = torch.Generator().manual_seed(seed)
        c_l = cfg.latent_channels
        side = cfg.height // cfg.downsample
        x = torch.randn((1, n, c_l, side, side), generator=gen)
        lat0 = self.encode_frame(frame0)[None]
        tokens = self.cond_net(
            torch.from_numpy(frame0)[None],
            torch.from_numpy(boxes[0])[None],
            torch.from_numpy(curves.coords.astype(np.float32))[None],
            torch.from_numpy(curves.present)[None],
        )
        if use_masks:
            masks = {s: torch.from_numpy(a)[None]
                     for s, a in frame_masks(boxes, present, cfg).items()}
        else:
            masks = None

        def model_fn(x_t, t):
            return self.unet(x_t, torch.full((1,), t, dtype=torch.long), lat0, tokens, masks)

        latents = ddim_sample(model_fn, x, self.schedule, steps)[0]
        lat_np = self._denormalize(latents).permute(0, 2, 3, 1).numpy()
        frames = np.clip(self.codec.inverse_transform(lat_np), 0.0, 1.0).astype(np.float32)
        return VideoClip(frames=frames, boxes=boxes, present=present.copy())

    def tensors(self) -> dict:
        out = ckpt.module_tensors(self.unet, "unet.")
        out.update(ckpt.module_tensors(self.cond_net, "cond."))
        out.update(ckpt.module_tensors(self.codec.model_, "codec."))
        out["stats.mean"] = self.mean.numpy()
        out["stats.std"] = self.std.numpy()
        return out

    def save(self, path, extra_meta=None) -> None:
        meta = {
            "kind": "denoiser",
            "config": self.config.to_dict(),
            "codec_params": self.codec.get_params(),
            "codec_hash": self.codec.weights_hash(),
            "step": self.step,
        }
        if extra_meta:
            meta.update(extra_meta)
        ckpt.save_checkpoint(path, self.tensors(), meta)

    @classmethod
    def load(cls, path) -> "GenerationPipeline":
        tensors, meta = ckpt.load_checkpoint(path)
        if meta.get("kind") != "denoiser":
            raise FormatError(f"{path}: not a denoiser checkpoint (kind={meta.get('kind')!r})")
        config = RunConfig.from_dict(meta["config"])
        codec = FrameAutoencoder(**meta["codec_params"])
        codec.model_ = codec._build()
        ckpt.load_module_tensors(codec.model_, tensors, "codec.")
        codec.model_.eval()
        codec.loss_history_ = []
        if codec.weights_hash() != meta["codec_hash"]:
            raise FormatError(f"{path}: embedded codec hash mismatch")
        pipe = cls.build(config, codec)
        ckpt.load_module_tensors(pipe.unet, tensors, "unet.")
        ckpt.load_module_tensors(pipe.cond_net, tensors, "cond.")
        pipe.mean = torch.from_numpy(tensors["stats.mean"]).float()
        pipe.std = torch.from_numpy(tensors["stats.std"]).float()
        pipe.step = int(meta.get("step", 0))
        pipe.unet.eval()
        pipe.cond_net.eval()
        return pipe


def feasible_intervals(config: RunConfig, clip_len: int) -> list:
    out = [i for i in config.sample_intervals if (config.n_frames - 1) * i + 1 <= clip_len]
    if not out:
        raise SpecError(
            f"no sampling interval fits: clips have {clip_len} frames, "
            f"windows need {config.n_frames}"
        )
    return out


def train_diffusion(clips, codec: FrameAutoencoder, config: RunConfig,
                    log_path=None, checkpoint_path=None, progress=None):
    """Train the denoiser; returns (pipeline, history) with history rows
    (step, loss, lr, seconds). NaN loss aborts, leaving the last periodic
    checkpoint on disk when checkpoint_path is given."""
    seed_everything(config.train_seed)
    pipe = GenerationPipeline.build(config, codec)
    data = prepare_training_data(clips, codec, config)
    pipe.mean, pipe.std = data.mean, data.std
    gen = torch.Generator().manual_seed(config.train_seed)
    params = list(pipe.unet.parameters()) + list(pipe.cond_net.parameters())
    opt = torch.optim.Adam(params, lr=config.lr)
    pipe.unet.train()
    pipe.cond_net.train()
    k, clip_len = data.latents.shape[0], data.latents.shape[1]
    intervals = feasible_intervals(config, clip_len)
    n = config.n_frames
    history = []
    last_good = -1
    writer = fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "lr", "seconds"])
    t_start = time.time()
    try:
        for step in range(config.train_steps):
            b = min(config.batch_size, k)
            clip_idx = torch.randint(0, k, (b,), generator=gen)
            ivs = torch.tensor(intervals)[torch.randint(0, len(intervals), (b,), generator=gen)]
            spans = (n - 1) * ivs
            starts = (torch.rand(b, generator=gen) * (clip_len - spans).float()).long()
            windows = starts[:, None] + torch.arange(n)[None] * ivs[:, None]  # (b, n)
            ci = clip_idx[:, None].expand(b, n)
            x0 = data.latents[ci, windows]
            coords = data.coords[ci, windows]
            present = data.present[ci, windows]
            masks = {s: m[ci, windows] for s, m in data.masks.items()}
            frames0 = data.frames[clip_idx, starts]
            boxes0 = data.boxes[clip_idx, starts]
            t = torch.randint(0, config.timesteps, (b,), generator=gen)
            eps = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
            x_t = q_sample(x0, t, eps, pipe.schedule)
            tokens = pipe.cond_net(frames0, boxes0, coords, present, update_bank=True)
            eps_hat = pipe.unet(x_t, t, x0[:, 0], tokens, masks)
            loss = F.mse_loss(eps_hat, eps)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became non-finite at step {step}; "
                    f"last good checkpoint at step {last_good}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            if step % config.log_every == 0 or step == config.train_steps - 1:
                row = (step, float(loss.detach()), config.lr, time.time() - t_start)
                history.append(row)
                if writer:
                    writer.writerow([row[0], f"{row[1]:.6f}", row[2], f"{row[3]:.2f}"])
                    fh.flush()
                if progress:
                    progress(*row)
            pipe.step = step + 1
            if checkpoint_path and (step + 1) % config.checkpoint_every == 0:
                pipe.save(checkpoint_path, {"loss_final": float(loss.detach())})
                last_good = step + 1
    finally:
        if fh:
            fh.close()
    pipe.unet.eval()
    pipe.cond_net.eval()
    if checkpoint_path:
        pipe.save(checkpoint_path, {"loss_final": history[-1][1] if history else None})
    return pipe, history


class VideoDiffusionGenerator(BaseEstimator):
    """Estimator facade over the full train/generate pipeline.

    fit(X) on a sequence of VideoClip objects trains the codec (unless a
    fitted one is supplied) and then the denoiser. predict(X) maps a
    sequence of (initial_frame, MotionCurveSet) pairs to VideoClips.
    """

    def __init__(self, config=None, codec=None):
        self.config = config
        self.codec = codec

    def fit(self, X, y=None):
        cfg = self.config if self.config is not None else RunConfig()
        clips = list(X)
        if not clips:
            raise SpecError("fit requires at least one clip")
        codec = self.codec
        if codec is None or not hasattr(codec, "model_"):
            frames = np.concatenate([c.frames for c in clips])
            codec = FrameAutoencoder(
                downsample=cfg.downsample, latent_channels=cfg.latent_channels,
                hidden=cfg.codec_hidden, steps=cfg.codec_steps, lr=cfg.codec_lr,
                batch_size=cfg.codec_batch, seed=cfg.codec_seed,
                variational=cfg.variational, kl_weight=cfg.kl_weight,
            ).fit(frames)
        self.pipeline_, self.history_ = train_diffusion(clips, codec, cfg)
        return self

    def predict(self, X):
        if not hasattr(self, "pipeline_"):
            raise SpecError("generator is not fitted; call fit or load first")
        return [self.pipeline_.generate(frame0, curves) for frame0, curves in X]

    def save(self, path) -> None:
        if not hasattr(self, "pipeline_"):
            raise SpecError("generator is not fitted; call fit or load first")
        self.pipeline_.save(path)

    @classmethod
    def load(cls, path) -> "VideoDiffusionGenerator":
        pipe = GenerationPipeline.load(path)
        est = cls(config=pipe.config, codec=pipe.codec)
        est.pipeline_ = pipe
        est.history_ = []
        return est
