"""Run configuration: one declarative file driving every stage.

Loaded configs are echoed into checkpoints and metric reports so any
artifact can be replayed from its own metadata.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


@dataclass
class RunConfig:
    # phantom dataset
    n_frames: int = 12               # training window and generation length
    clip_frames: int = 48            # stored clip length; must fit every sampling interval
    height: int = 64
    width: int = 64
    n_categories: int = 4
    clip_count: int = 200
    fps: float = 30.0
    noise_strength: float = 0.02
    data_seed: int = 0

    # motion-curve encoding
    n_freqs: int = 8                 # Fourier frequency count L; feature width E = 16 * L
    fourier_mode: str = "coordinate"  # "coordinate" (default) or "temporal" (ablation)
    motion_dim: int = 256            # per-token embedding width D
    motion_mlp_depth: int = 2
    cond_dim: int = 128              # aligned-token width fed to the denoiser

    # structure conditioning
    roi_size: int = 24
    bank_decay: float = 0.99

    # position-aware masks
    sigma: float = 10.0              # Gaussian mask std, pixels
    mask_floor: float = 1e-3
    mask_combine: str = "max"        # "max" (default) or "sum"
    attention_mask_mode: str = "multiplicative"  # or "additive" (ablation)

    # frame autoencoder
    downsample: int = 4
    latent_channels: int = 4
    codec_hidden: int = 32
    codec_steps: int = 1500
    codec_lr: float = 1e-3
    codec_batch: int = 32
    codec_seed: int = 0
    variational: bool = False
    kl_weight: float = 1e-4

    # diffusion
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    base_channels: int = 64
    channel_mult: tuple = (1, 2)
    time_dim: int = 256
    train_steps: int = 6000
    batch_size: int = 8
    lr: float = 1e-4
    train_seed: int = 0
    sample_intervals: tuple = (1, 2, 3, 4)
    ddim_steps: int = 50
    log_every: int = 50
    checkpoint_every: int = 1000

    def __post_init__(self):
        self.channel_mult = tuple(int(m) for m in self.channel_mult)
        self.sample_intervals = tuple(int(i) for i in self.sample_intervals)
        if self.fourier_mode not in ("coordinate", "temporal"):
            raise ConfigError(f"fourier_mode must be 'coordinate' or 'temporal', got {self.fourier_mode!r}")
        if self.mask_combine not in ("max", "sum"):
            raise ConfigError(f"mask_combine must be 'max' or 'sum', got {self.mask_combine!r}")
        if self.attention_mask_mode not in ("multiplicative", "additive"):
            raise ConfigError(f"attention_mask_mode must be 'multiplicative' or 'additive', got {self.attention_mask_mode!r}")
        if self.height % self.downsample or self.width % self.downsample:
            raise ConfigError(f"frame dims {self.height}x{self.width} not divisible by downsample {self.downsample}")
        if self.n_frames < 2:
            raise ConfigError("n_frames must be >= 2")
        if any(i < 1 for i in self.sample_intervals):
            raise ConfigError("sample_intervals must be >= 1")
        needed = (self.n_frames - 1) * max(self.sample_intervals) + 1
        if self.clip_frames < needed:
            raise ConfigError(
                f"clip_frames={self.clip_frames} too short: interval {max(self.sample_intervals)} "
                f"windows of {self.n_frames} frames need {needed}"
            )

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["channel_mult"] = list(self.channel_mult)
        out["sample_intervals"] = list(self.sample_intervals)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config file must hold a JSON object")
        return cls.from_dict(raw)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
