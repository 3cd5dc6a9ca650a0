"""Binary clip files and dataset directories.

Clip layout (little-endian, lossless for float32 frames and boxes):

    magic "ECMV" | u32 version | u32 N, H, W, C
    float32 frames  (N*H*W)
    float32 boxes   (N*C*4)
    u8      present (N*C)

A dataset directory holds `manifest.json` plus `clip-%05d.ecmv` files.
"""

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import FormatError
from .phantom import (
    VideoClip,
    category_names,
    default_intensity_bands,
    render_phantom,
    sample_structure_specs,
)

CLIP_MAGIC = b"ECMV"
CLIP_VERSION = 1
MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = "ecm-dataset/1"
_HEADER = struct.Struct("<4sIIIII")


@dataclass
class DatasetManifest:
    clip_count: int
    n_frames: int
    height: int
    width: int
    n_categories: int
    category_names: list
    fps: float
    seed: int
    intensity_bands: list
    format_version: str = MANIFEST_VERSION

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "DatasetManifest":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise FormatError(f"manifest: unknown keys {sorted(unknown)}")
        try:
            manifest = cls(**raw)
        except TypeError as exc:
            raise FormatError(f"manifest: {exc}") from exc
        if manifest.format_version != MANIFEST_VERSION:
            raise FormatError(
                f"manifest: unrecognized format version {manifest.format_version!r}"
                f" (expected {MANIFEST_VERSION!r})"
            )
        return manifest


def clip_filename(index: int) -> str:
    return f"clip-{index:05d}.ecmv"


def write_clip(clip: VideoClip, path) -> None:
    n, h, w = clip.frames.shape
    c = clip.boxes.shape[1]
    frames = np.ascontiguousarray(clip.frames, dtype="<f4")
    boxes = np.ascontiguousarray(clip.boxes, dtype="<f4")
    present = np.ascontiguousarray(clip.present.astype(np.uint8))
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CLIP_MAGIC, CLIP_VERSION, n, h, w, c))
        fh.write(frames.tobytes())
        fh.write(boxes.tobytes())
        fh.write(present.tobytes())


def read_clip(path) -> VideoClip:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, n, h, w, c = _HEADER.unpack_from(data)
    if magic != CLIP_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CLIP_VERSION:
        raise FormatError(f"{path}: unsupported clip version {version}")
    n_frames_bytes = 4 * n * h * w
    n_boxes_bytes = 4 * n * c * 4
    n_present_bytes = n * c
    expected = _HEADER.size + n_frames_bytes + n_boxes_bytes + n_present_bytes
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    offset = _HEADER.size
    frames = np.frombuffer(data, dtype="<f4", count=n * h * w, offset=offset).reshape(n, h, w)
    offset += n_frames_bytes
    boxes = np.frombuffer(data, dtype="<f4", count=n * c * 4, offset=offset).reshape(n, c, 4)
    offset += n_boxes_bytes
    present = np.frombuffer(data, dtype=np.uint8, count=n * c, offset=offset).reshape(n, c)
    return VideoClip(frames=frames.copy(), boxes=boxes.copy(), present=present.astype(bool))


def write_dataset(clips, manifest: DatasetManifest, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if len(clips) != manifest.clip_count:
        raise FormatError(f"manifest clip_count {manifest.clip_count} != {len(clips)} clips")
    for clip in clips:
        if clip.frames.shape != (manifest.n_frames, manifest.height, manifest.width):
            raise FormatError("clip frame shape does not match manifest")
        if clip.boxes.shape[1] != manifest.n_categories:
            raise FormatError("clip category count does not match manifest")
    (directory / MANIFEST_NAME).write_text(
        json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    for i, clip in enumerate(clips):
        write_clip(clip, directory / clip_filename(i))


def read_manifest(directory) -> DatasetManifest:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise FormatError(f"{path}: manifest not found")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    return DatasetManifest.from_dict(raw)


def read_dataset(directory):
    """Load all clips plus the manifest, validating counts and shapes."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    files = sorted(directory.glob("clip-*.ecmv"))
    if len(files) != manifest.clip_count:
        raise FormatError(
            f"{directory}: manifest says {manifest.clip_count} clips, found {len(files)} files"
        )
    clips = []
    for i, path in enumerate(files):
        if path.name != clip_filename(i):
            raise FormatError(f"{directory}: unexpected clip file {path.name}")
        clip = read_clip(path)
        if clip.frames.shape != (manifest.n_frames, manifest.height, manifest.width):
            raise FormatError(f"{path}: frame shape {clip.frames.shape} does not match manifest")
        if clip.boxes.shape[1] != manifest.n_categories:
            raise FormatError(f"{path}: category count does not match manifest")
        clips.append(clip)
    return clips, manifest


def generate_dataset(config: RunConfig, directory, noiseless: bool = False):
    """Render `clip_count` phantom clips with per-clip randomized layouts."""
    clips = []
    for i in range(config.clip_count):
        spec_rng = np.random.default_rng([config.data_seed, i, 0])
        specs = sample_structure_specs(spec_rng, config.height, config.width, config.n_categories)
        noise_seed = int(np.random.default_rng([config.data_seed, i, 1]).integers(0, 2**31))
        clips.append(
            render_phantom(
                specs,
                config.clip_frames,
                config.height,
                config.width,
                seed=noise_seed,
                noise_strength=0.0 if noiseless else config.noise_strength,
            )
        )
    bands = [list(band) for band in default_intensity_bands(config.n_categories)]
    manifest = DatasetManifest(
        clip_count=config.clip_count,
        n_frames=config.clip_frames,
        height=config.height,
        width=config.width,
        n_categories=config.n_categories,
        category_names=category_names(config.n_categories),
        fps=config.fps,
        seed=config.data_seed,
        intensity_bands=bands,
    )
    write_dataset(clips, manifest, directory)
    return clips, manifest
