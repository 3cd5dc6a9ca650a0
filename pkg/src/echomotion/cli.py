"""Command-line interface.

Subcommands cover the whole workflow: make-data, train-codec, train,
generate, extract-curves, edit-curves, evaluate, plot.  Every command
is a thin wrapper
over library calls — no logic lives here that tests could not reach
through the Python API.

Exit codes:
    0  success
    1  unexpected/runtime failure
    2  usage error (argparse)
    3  input file or directory missing
    4  bad config
    5  malformed file or shape mismatch

Errors print a single machine-parsable line to stderr:
    echomotion: error: <kind>: <message>
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from .codec import FrameAutoencoder
from .config import RunConfig
from .curves import (
    extract_curves,
    load_curves,
    replace_curve,
    resample_curve,
    save_curves,
    scale_curve,
)
from .dataset_io import generate_dataset, read_clip, read_dataset, write_clip
from .diffusion import GenerationPipeline, train_diffusion
from .errors import ConfigError, EchoMotionError, FormatError, ShapeError, SpecError
from .metrics import EncoderFeatureExtractor, evaluate_clips
from .phantom import default_intensity_bands
from .utils import configure_determinism, deterministic_mode_requested

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_CONFIG = 4
EXIT_FORMAT = 5

__all__ = ["main", "EXIT_OK", "EXIT_FAILURE", "EXIT_USAGE",
           "EXIT_MISSING_FILE", "EXIT_CONFIG", "EXIT_FORMAT"]


def _fail(code: int, kind: str, message: str) -> int:
    message = " ".join(str(message).split())  # keep it on one line
    print(f"echomotion: error: {kind}: {message}", file=sys.stderr)
    return code


def _load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return RunConfig.from_file(path)


def _require_file(path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _require_dir(path, what: str) -> Path:
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


# ---------------------------------------------------------------- commands


def _cmd_make_data(args) -> int:
    config = _load_config(args.config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clips, manifest = generate_dataset(config, out_dir, noiseless=args.noiseless)
    config.save(out_dir / "config.json")
    print(f"wrote {manifest.clip_count} clips "
          f"({manifest.n_frames}x{manifest.height}x{manifest.width}, "
          f"{manifest.n_categories} categories) to {out_dir}")
    return EXIT_OK


def _stack_frames(clips) -> np.ndarray:
    return np.concatenate([clip.frames for clip in clips], axis=0)


def _cmd_train_codec(args) -> int:
    config = _load_config(args.config)
    clips, _ = read_dataset(_require_dir(args.dataset, "dataset"))
    frames = _stack_frames(clips)
    codec = FrameAutoencoder(
        downsample=config.downsample,
        latent_channels=config.latent_channels,
        hidden=config.codec_hidden,
        steps=config.codec_steps,
        lr=config.codec_lr,
        batch_size=config.codec_batch,
        seed=config.codec_seed,
        variational=config.variational,
        kl_weight=config.kl_weight,
    )
    codec.fit(frames)
    codec.save(args.out, extra_meta={"config": config.to_dict()})
    sample = frames[: min(256, frames.shape[0])]
    print(f"codec trained for {config.codec_steps} steps, "
          f"sample reconstruction MAE {codec.reconstruction_mae(sample):.4f}, "
          f"saved to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    config = _load_config(args.config)
    clips, _ = read_dataset(_require_dir(args.dataset, "dataset"))
    codec = FrameAutoencoder.load(_require_file(args.codec, "codec checkpoint"))
    log_path = args.log if args.log is not None else str(args.out) + ".log.csv"
    pipe, history = train_diffusion(
        clips, codec, config, log_path=log_path, checkpoint_path=args.out
    )
    final_loss = history[-1][1] if history else float("nan")
    print(f"denoiser trained for {config.train_steps} steps "
          f"(final loss {final_loss:.5f}), saved to {args.out}")
    return EXIT_OK


def _load_initial_frame(path, index: int) -> np.ndarray:
    path = _require_file(path, "frame file")
    if path.suffix == ".npy":
        frame = np.load(path)
        if frame.ndim == 3 and frame.shape[0] == 1:
            frame = frame[0]
        if frame.ndim != 2:
            raise ShapeError(f"{path}: expected a single (H, W) frame, got shape {frame.shape}")
        return frame.astype(np.float32)
    clip = read_clip(path)
    if not 0 <= index < clip.n_frames:
        raise SpecError(f"--frame-index {index} out of range for {clip.n_frames}-frame clip")
    return clip.frames[index]


def _dump_frames_png(frames: np.ndarray, directory: Path) -> None:
    from PIL import Image

    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        arr = np.clip(frame * 255.0 + 0.5, 0.0, 255.0).astype(np.uint8)
        Image.fromarray(arr, mode="L").save(directory / f"frame-{i:03d}.png")


def _cmd_generate(args) -> int:
    pipe = GenerationPipeline.load(_require_file(args.checkpoint, "checkpoint"))
    frame0 = _load_initial_frame(args.frame, args.frame_index)
    curves = load_curves(_require_file(args.curves, "curves file"))
    clip = pipe.generate(
        frame0,
        curves,
        seed=args.seed,
        ddim_steps=args.ddim_steps,
        use_masks=not args.no_masks,
    )
    write_clip(clip, args.out)
    if args.dump_frames is not None:
        _dump_frames_png(clip.frames, Path(args.dump_frames))
    if args.plot is not None:
        from .plotting import plot_box_traces

        bands = default_intensity_bands(pipe.config.n_categories)
        plot_box_traces(clip.frames, curves, bands, args.plot)
    print(f"generated {clip.n_frames} frames (seed {args.seed}) to {args.out}")
    return EXIT_OK


def _cmd_extract_curves(args) -> int:
    clip = read_clip(_require_file(args.clip, "clip file"))
    height, width = clip.frames.shape[1:]
    curves = extract_curves(clip.boxes, clip.present, height, width)
    save_curves(curves, args.out)
    print(f"extracted {curves.n_categories} curves over {curves.n_frames} frames to {args.out}")
    return EXIT_OK


def _parse_category_pair(value: str, flag: str, what: str):
    head, sep, tail = value.partition(":")
    if not sep or not head or not tail:
        raise ConfigError(f"{flag} expects CATEGORY:{what}, got {value!r}")
    try:
        category = int(head)
    except ValueError:
        raise ConfigError(f"{flag}: category must be an integer, got {head!r}") from None
    return category, tail


def _cmd_edit_curves(args) -> int:
    curves = load_curves(_require_file(args.curves, "curves file"))
    if args.scale is not None:
        category, tail = _parse_category_pair(args.scale, "--scale", "FACTOR")
        try:
            factor = float(tail)
        except ValueError:
            raise ConfigError(f"--scale: factor must be a number, got {tail!r}") from None
        edited = scale_curve(curves, category, factor)
        action = f"scaled category {category} by {factor}"
    elif args.replace is not None:
        category, tail = _parse_category_pair(args.replace, "--replace", "FILE")
        donor = load_curves(_require_file(tail, "replacement curves file"))
        edited = replace_curve(curves, donor, category)
        action = f"replaced category {category} from {tail}"
    else:
        edited = resample_curve(curves, args.resample)
        action = f"resampled to {args.resample} frames"
    save_curves(edited, args.out)
    print(f"{action}, wrote {args.out}")
    return EXIT_OK


def _read_clip_dir(directory: Path):
    """Directory of clips: a manifested dataset, or just loose clip files."""
    if (directory / "manifest.json").is_file():
        return read_dataset(directory)
    files = sorted(directory.glob("*.ecmv"))
    if not files:
        raise FileNotFoundError(f"no clip files in {directory}")
    return [read_clip(path) for path in files], None


def _cmd_evaluate(args) -> int:
    config = _load_config(args.config)
    generated, _ = _read_clip_dir(_require_dir(args.generated, "generated directory"))
    targets, tgt_manifest = _read_clip_dir(_require_dir(args.targets, "targets directory"))
    if tgt_manifest is not None:
        bands = [tuple(band) for band in tgt_manifest.intensity_bands]
    else:
        bands = default_intensity_bands(targets[0].n_categories)
    extractor = None
    if args.checkpoint is not None:
        pipe = GenerationPipeline.load(_require_file(args.checkpoint, "checkpoint"))
        extractor = EncoderFeatureExtractor(pipe.cond_net.structure)
    report = evaluate_clips(generated, targets, bands, config=config, extractor=extractor)
    report.to_json(args.out)
    if args.csv is not None:
        report.to_csv(args.csv)
    parts = [f"{k}={v:.4f}" if v is not None else f"{k}=n/a"
             for k, v in sorted(report.aggregates.items())]
    if report.frechet is not None:
        parts.append(f"frechet={report.frechet:.4f}")
    print(f"evaluated {report.clip_count} clips: " + ", ".join(parts))
    print(f"report written to {args.out}")
    return EXIT_OK


def _cmd_plot(args) -> int:
    from .plotting import plot_box_traces, plot_curves

    curves = load_curves(_require_file(args.curves, "curves file"))
    if args.clip is not None:
        clip = read_clip(_require_file(args.clip, "clip file"))
        bands = default_intensity_bands(curves.n_categories)
        plot_box_traces(clip.frames, curves, bands, args.out)
    else:
        plot_curves(curves, args.out)
    print(f"plot written to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="echomotion",
        description="Curve-conditioned video generation on synthetic phantoms.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="render a phantom dataset to disk")
    p.add_argument("config", help="run config JSON")
    p.add_argument("out_dir", help="output dataset directory")
    p.add_argument("--noiseless", action="store_true", help="disable speckle noise")
    p.set_defaults(func=_cmd_make_data)

    p = sub.add_parser("train-codec", help="train the frame autoencoder")
    p.add_argument("config", help="run config JSON")
    p.add_argument("dataset", help="dataset directory")
    p.add_argument("--out", required=True, help="codec checkpoint path")
    p.set_defaults(func=_cmd_train_codec)

    p = sub.add_parser("train", help="train the latent video denoiser")
    p.add_argument("config", help="run config JSON")
    p.add_argument("dataset", help="dataset directory")
    p.add_argument("codec", help="codec checkpoint path")
    p.add_argument("--out", required=True, help="denoiser checkpoint path")
    p.add_argument("--log", default=None, help="training log CSV (default: OUT.log.csv)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("generate", help="generate a clip from a frame plus curves")
    p.add_argument("checkpoint", help="denoiser checkpoint path")
    p.add_argument("frame", help="initial frame: .npy array or a clip file")
    p.add_argument("curves", help="motion curves JSON")
    p.add_argument("out", help="output clip path")
    p.add_argument("--frame-index", type=int, default=0,
                   help="frame to take when FRAME is a clip file (default 0)")
    p.add_argument("--seed", type=int, default=0, help="sampling seed")
    p.add_argument("--ddim-steps", type=int, default=None,
                   help="override the config's sampling step count")
    p.add_argument("--no-masks", action="store_true",
                   help="disable position-aware attention masks")
    p.add_argument("--dump-frames", default=None, metavar="DIR",
                   help="also write per-frame PNGs to DIR")
    p.add_argument("--plot", default=None, metavar="PATH",
                   help="also write a generated-vs-target box trace figure")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("extract-curves", help="pull ground-truth curves out of a clip file")
    p.add_argument("clip", help="clip file")
    p.add_argument("--out", required=True, help="output curves path")
    p.set_defaults(func=_cmd_extract_curves)

    p = sub.add_parser("edit-curves", help="scale, replace, or resample motion curves")
    p.add_argument("curves", help="input curves JSON")
    p.add_argument("--out", required=True, help="output curves path")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--scale", metavar="CAT:FACTOR",
                       help="scale one category's excursion about its mean")
    group.add_argument("--replace", metavar="CAT:FILE",
                       help="replace one category's curve from another file")
    group.add_argument("--resample", type=int, metavar="N",
                       help="linearly resample all curves to N frames")
    p.set_defaults(func=_cmd_edit_curves)

    p = sub.add_parser("evaluate", help="compare generated clips against targets")
    p.add_argument("generated", help="directory of generated clips")
    p.add_argument("targets", help="directory of target clips")
    p.add_argument("config", help="run config JSON (echoed into the report)")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--csv", default=None, help="also write per-clip rows as CSV")
    p.add_argument("--checkpoint", default=None,
                   help="denoiser checkpoint; enables the encoder-feature "
                        "Fréchet distance")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("plot", help="plot curves, or box traces against a clip")
    p.add_argument("curves", help="motion curves JSON")
    p.add_argument("--clip", default=None,
                   help="clip file; plots generated-vs-target box traces")
    p.add_argument("--out", required=True, help="output PNG path")
    p.set_defaults(func=_cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if deterministic_mode_requested():
        configure_determinism()
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        return _fail(EXIT_MISSING_FILE, "missing-file", exc)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except (FormatError, ShapeError) as exc:
        return _fail(EXIT_FORMAT, "format", exc)
    except EchoMotionError as exc:
        return _fail(EXIT_FAILURE, "runtime", exc)
    except Exception as exc:  # noqa: BLE001 — one-line contract, no tracebacks
        return _fail(EXIT_FAILURE, f"unexpected:{type(exc).__name__}", exc)


if __name__ == "__main__":
    sys.exit(main())
