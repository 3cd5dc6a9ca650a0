import pytest

from echomotion.config import RunConfig
from echomotion.errors import ConfigError


def test_defaults_construct():
    cfg = RunConfig()
    assert cfg.n_frames == 12
    assert cfg.sigma == 10.0
    assert cfg.channel_mult == (1, 2)


def test_dict_round_trip():
    cfg = RunConfig(train_steps=123, sigma=7.5, sample_intervals=(1, 3))
    again = RunConfig.from_dict(cfg.to_dict())
    assert again == cfg


def test_file_round_trip(tmp_path):
    cfg = RunConfig(clip_count=5, base_channels=48)
    path = tmp_path / "cfg.json"
    cfg.save(path)
    assert RunConfig.from_file(path) == cfg


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig.from_dict({"n_frames": 12, "banana": 1})


def test_bad_json_rejected(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("{oops")
    with pytest.raises(ConfigError):
        RunConfig.from_file(path)
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        RunConfig.from_file(path)


def test_enum_fields_validated():
    with pytest.raises(ConfigError):
        RunConfig(fourier_mode="wavelet")
    with pytest.raises(ConfigError):
        RunConfig(mask_combine="mean")
    with pytest.raises(ConfigError):
        RunConfig(attention_mask_mode="subtractive")


def test_downsample_divisibility():
    with pytest.raises(ConfigError):
        RunConfig(height=62, width=64, downsample=4)


def test_clip_length_must_fit_intervals():
    # 12-frame windows at interval 4 need 45 stored frames
    with pytest.raises(ConfigError, match="clip_frames"):
        RunConfig(clip_frames=44, n_frames=12, sample_intervals=(1, 4))
    RunConfig(clip_frames=45, n_frames=12, sample_intervals=(1, 4))


def test_interval_validation():
    with pytest.raises(ConfigError):
        RunConfig(sample_intervals=(0,))


def test_sequences_normalized_to_tuples():
    cfg = RunConfig.from_dict({"channel_mult": [1, 2, 4], "sample_intervals": [1, 2],
                               "clip_frames": 24})
    assert cfg.channel_mult == (1, 2, 4)
    assert cfg.sample_intervals == (1, 2)
