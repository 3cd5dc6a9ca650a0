import numpy as np
import pytest
import torch

from echomotion.config import RunConfig
from echomotion.phantom import default_structure_specs, render_phantom


@pytest.fixture(autouse=True)
def _single_thread():
    # keeps timings stable and avoids thread-count-dependent reductions
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_config() -> RunConfig:
    """Small-but-real config used by unit tests that need a full model."""
    return RunConfig(
        clip_count=4,
        clip_frames=10,
        n_frames=6,
        sample_intervals=(1,),
        codec_steps=40,
        codec_hidden=16,
        codec_batch=8,
        base_channels=16,
        channel_mult=(1, 2),
        cond_dim=32,
        motion_dim=32,
        time_dim=32,
        train_steps=6,
        batch_size=2,
        ddim_steps=4,
        log_every=2,
        checkpoint_every=10**9,
    )


@pytest.fixture(scope="session")
def clean_clip():
    """One noiseless 8-frame phantom clip with ground-truth boxes."""
    specs = default_structure_specs(64, 64)
    return render_phantom(specs, 8, 64, 64, seed=3, noise_strength=0.0)


@pytest.fixture(scope="session")
def noisy_clip():
    specs = default_structure_specs(64, 64)
    return render_phantom(specs, 8, 64, 64, seed=3, noise_strength=0.02)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
