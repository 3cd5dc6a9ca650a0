"""End-to-end acceptance checks.

One test per shipped guarantee, each printing a single summary line.
The two model-quality tests (generation tracks held-out curves, curve
edits steer the output) train the full desk-scale model and are marked
slow; everything else runs in seconds.
"""

import json
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest
import torch
from scipy import linalg as sla
from scipy import stats as sstats

from echomotion.attention import (
    attention_weights,
    cross_attention,
    gaussian_bump,
    masked_cross_attention,
)
from echomotion.checkpoint import load_checkpoint, save_checkpoint
from echomotion.codec import FrameAutoencoder
from echomotion.conditioning import AlignmentHead
from echomotion.config import RunConfig
from echomotion.curves import (
    MotionCurveSet,
    curves_to_boxes,
    extract_curves,
    load_curves,
    save_curves,
    scale_curve,
)
from echomotion.dataset_io import generate_dataset, read_clip, write_clip
from echomotion.diffusion import (
    NoiseSchedule,
    ddim_sample,
    q_sample,
    train_diffusion,
)
from echomotion.encoding import MotionEncoder
from echomotion.metrics import (
    box_iou,
    frechet_distance,
    frechet_stats,
    iou_consistency,
)
from echomotion.phantom import (
    default_intensity_bands,
    detect_boxes,
    render_phantom,
    sample_structure_specs,
)
from echomotion.unet import ConditionedBlock


def _line(name: str, ok: bool, detail: str) -> None:
    print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, f"{name}: {detail}"


# ------------------------------------------------------------ kernels


def test_all_ones_mask_reduces_to_plain_attention():
    t0 = time.time()
    g = torch.Generator().manual_seed(0)
    worst_row = 0.0
    for i in range(100):
        b = int(torch.randint(1, 4, (1,), generator=g))
        n = int(torch.randint(1, 9, (1,), generator=g))
        m = int(torch.randint(1, 7, (1,), generator=g))
        d = int(torch.randint(1, 9, (1,), generator=g))
        q = torch.randn(b, n, d, generator=g)
        k = torch.randn(b, m, d, generator=g)
        v = torch.randn(b, m, d, generator=g)
        plain = cross_attention(q, k, v)
        for mode in ("multiplicative", "additive"):
            masked = masked_cross_attention(q, k, v, torch.ones(b, n, m), mode=mode)
            assert torch.equal(plain, masked), f"shape ({b},{n},{m},{d}) mode {mode}"
        mask = torch.rand(b, n, m, generator=g) * 0.9 + 0.1
        w = attention_weights(q, k, mask)
        worst_row = max(worst_row, float((w.sum(dim=-1) - 1.0).abs().max()))
    elapsed = time.time() - t0
    _line("masked-attention-kernel",
          worst_row <= 1e-6 and elapsed < 10.0,
          f"100 shapes bitwise-equal, worst row-sum err {worst_row:.2e}, "
          f"{elapsed:.1f}s")


def test_gaussian_mask_peak_and_falloff():
    sigma = 10.0
    bump = gaussian_bump(64, 64, 32.0, 32.0, sigma)
    peak = bump[32, 32]
    want_peak = 1.0 / (2.0 * math.pi * sigma * sigma)
    at_sigma = bump[32, 42]  # 10 px to the right of the center
    peak_err = abs(peak - want_peak)
    falloff_err = abs(at_sigma - peak * math.exp(-0.5))
    _line("gaussian-mask-values",
          peak_err <= 1e-12 and falloff_err <= 1e-9,
          f"peak err {peak_err:.2e}, radius-sigma err {falloff_err:.2e}")


def test_frechet_distance_against_oracles():
    # 1-D closed form: (mu_a - mu_b)^2 + (sd_a - sd_b)^2
    rng = np.random.default_rng(0)
    worst_1d = 0.0
    for _ in range(20):
        a = rng.normal(rng.uniform(-2, 2), rng.uniform(0.2, 3.0), size=(400, 1))
        b = rng.normal(rng.uniform(-2, 2), rng.uniform(0.2, 3.0), size=(300, 1))
        sa, sb = frechet_stats(a), frechet_stats(b)
        got = frechet_distance(sa, sb)
        want = (sa.mean[0] - sb.mean[0]) ** 2 + (
            np.sqrt(sa.cov[0, 0]) - np.sqrt(sb.cov[0, 0])
        ) ** 2
        worst_1d = max(worst_1d, abs(got - want))

    # 5-D vs an independent matrix-sqrt oracle
    worst_nd = 0.0
    for _ in range(5):
        a = rng.normal(size=(200, 5)) @ rng.normal(size=(5, 5)) + rng.normal(size=5)
        b = rng.normal(size=(240, 5)) @ rng.normal(size=(5, 5)) + rng.normal(size=5)
        sa, sb = frechet_stats(a), frechet_stats(b)
        got = frechet_distance(sa, sb)
        covmean = sla.sqrtm(sa.cov @ sb.cov)
        if np.iscomplexobj(covmean):
            covmean = covmean.real
        diff = sa.mean - sb.mean
        want = float(diff @ diff + np.trace(sa.cov + sb.cov - 2.0 * covmean))
        worst_nd = max(worst_nd, abs(got - want) / max(abs(want), 1e-12))
    _line("frechet-distance",
          worst_1d <= 1e-9 and worst_nd <= 1e-6,
          f"1-D err {worst_1d:.2e}, 5-D rel err {worst_nd:.2e}")


# ------------------------------------------------------------ gradients


def _probe_gradients(make_loss, tensors, n_probe=5, eps=1e-4):
    """Worst relative error between autograd and central differences."""
    loss = make_loss()
    grads = torch.autograd.grad(loss, tensors)
    rng = np.random.default_rng(0)
    worst = 0.0
    for tensor, grad in zip(tensors, grads):
        flat = tensor.data.reshape(-1)
        gflat = grad.reshape(-1)
        idx = rng.choice(flat.numel(), size=min(n_probe, flat.numel()), replace=False)
        for i in idx:
            orig = flat[i].item()
            flat[i] = orig + eps
            up = float(make_loss().detach())
            flat[i] = orig - eps
            down = float(make_loss().detach())
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            analytic = float(gflat[i])
            worst = max(worst, abs(numeric - analytic)
                        / max(abs(numeric), abs(analytic), 1e-8))
    return worst


def test_gradients_match_finite_differences():
    t0 = time.time()
    torch.manual_seed(0)
    results = {}

    # (a) motion encoding
    enc = MotionEncoder(2, n_freqs=3, dim=12, depth=2).double()
    coords = torch.rand(3, 2, 8, dtype=torch.float64, requires_grad=True)
    present = torch.ones(3, 2, dtype=torch.bool)
    w_a = torch.randn(3, 2, 12, dtype=torch.float64)
    params_a = [coords, enc.layers[0].weight, enc.layers[1].weight]
    results["motion"] = _probe_gradients(
        lambda: (enc(coords, present) * w_a).sum(), params_a)

    # (b) structure-to-motion alignment
    align = AlignmentHead(10, 6).double()
    s = torch.randn(4, 10, dtype=torch.float64, requires_grad=True)
    m = torch.randn(4, 10, dtype=torch.float64, requires_grad=True)
    w_b = torch.randn(4, 6, dtype=torch.float64)
    results["align"] = _probe_gradients(
        lambda: (align(s, m) * w_b).sum(), [s, m, align.proj.weight])

    # (c) masked cross-attention, including the mask input
    q = torch.randn(2, 6, 5, dtype=torch.float64, requires_grad=True)
    k = torch.randn(2, 4, 5, dtype=torch.float64, requires_grad=True)
    v = torch.randn(2, 4, 5, dtype=torch.float64, requires_grad=True)
    mask = (torch.rand(2, 6, 4, dtype=torch.float64) * 0.5 + 0.5).requires_grad_()
    w_c = torch.randn(2, 6, 5, dtype=torch.float64)
    results["attention"] = _probe_gradients(
        lambda: (masked_cross_attention(q, k, v, mask) * w_c).sum(),
        [q, k, v, mask])

    # (d) one denoiser block (res conv + token cross-attn + temporal attn)
    block = ConditionedBlock(8, 8, 16, 6).double()
    x = torch.randn(2, 8, 4, 4, dtype=torch.float64, requires_grad=True)
    temb = torch.randn(2, 16, dtype=torch.float64)
    tokens = torch.randn(2, 3, 6, dtype=torch.float64, requires_grad=True)
    bmask = torch.rand(2, 16, 3, dtype=torch.float64) * 0.5 + 0.5
    w_d = torch.randn(2, 8, 4, 4, dtype=torch.float64)
    results["denoiser-block"] = _probe_gradients(
        lambda: (block(x, temb, tokens, bmask, 2) * w_d).sum(),
        [x, tokens, block.res.conv1.weight], n_probe=4)

    elapsed = time.time() - t0
    worst = max(results.values())
    _line("gradient-checks",
          worst <= 1e-3 and elapsed < 120.0,
          ", ".join(f"{k} {v:.2e}" for k, v in results.items())
          + f", {elapsed:.1f}s")


# ------------------------------------------------------------ diffusion math


def test_noising_moments_and_exact_reverse_recovery():
    s = NoiseSchedule.linear(1000)
    n = 10_000
    t = torch.full((n,), 400, dtype=torch.long)
    x0 = torch.full((n, 1), 1.5)
    g = torch.Generator().manual_seed(7)
    xt = q_sample(x0, t, torch.randn(n, 1, generator=g), s).numpy().ravel()
    ab = s.alphas_cumprod[400]
    sd = math.sqrt(1.0 - ab)
    mean_err = abs(xt.mean() - 1.5 * math.sqrt(ab))
    mean_tol = 3.0 * sd / math.sqrt(n)
    std_rel = abs(xt.std() - sd) / sd

    x0_true = torch.randn(2, 3, 2, 4, 4, generator=g)

    def oracle(x_t, t_scalar):
        a = float(s.alpha_bar(t_scalar))
        return (x_t - math.sqrt(a) * x0_true) / math.sqrt(1.0 - a)

    worst = 0.0
    for steps in (5, 10, 50):
        out = ddim_sample(oracle, torch.randn(2, 3, 2, 4, 4, generator=g), s, steps)
        worst = max(worst, float((out - x0_true).abs().max()))
    _line("diffusion-math",
          mean_err <= mean_tol and std_rel <= 0.05 and worst <= 1e-4,
          f"mean err {mean_err:.4f} (tol {mean_tol:.4f}), "
          f"std rel {std_rel:.4f}, oracle-sampler err {worst:.2e}")


# ------------------------------------------------------------ determinism


DET_CONFIG = {
    "clip_count": 8,
    "clip_frames": 8,
    "n_frames": 6,
    "sample_intervals": [1],
    "codec_steps": 60,
    "codec_hidden": 16,
    "codec_batch": 8,
    "base_channels": 16,
    "channel_mult": [1, 2],
    "cond_dim": 32,
    "motion_dim": 32,
    "time_dim": 32,
    "train_steps": 200,
    "batch_size": 2,
    "ddim_steps": 5,
    "log_every": 50,
    "checkpoint_every": 1000000000,
}


def _run_cli(args, cwd):
    env = dict(os.environ, ECM_DETERMINISTIC="1")
    proc = subprocess.run([sys.executable, "-m", "echomotion.cli", *args],
                          cwd=cwd, env=env, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc


def test_cli_pipeline_bit_identical_across_runs(tmp_path):
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps(DET_CONFIG))
    outputs = []
    for run in ("one", "two"):
        d = tmp_path / run
        d.mkdir()
        _run_cli(["make-data", str(cfg), str(d / "data")], tmp_path)
        _run_cli(["train-codec", str(cfg), str(d / "data"),
                  "--out", str(d / "codec.ecmc")], tmp_path)
        _run_cli(["train", str(cfg), str(d / "data"), str(d / "codec.ecmc"),
                  "--out", str(d / "model.ecmc")], tmp_path)
        _run_cli(["extract-curves", str(d / "data" / "clip-00000.ecmv"),
                  "--out", str(d / "curves.json")], tmp_path)
        _run_cli(["generate", str(d / "model.ecmc"),
                  str(d / "data" / "clip-00000.ecmv"), str(d / "curves.json"),
                  str(d / "out.ecmv"), "--seed", "11"], tmp_path)
        files = sorted(p.relative_to(d) for p in d.rglob("*")
                       if p.is_file() and p.suffix != ".csv")
        outputs.append({str(rel): (d / rel).read_bytes() for rel in files})
    same = outputs[0].keys() == outputs[1].keys() and all(
        outputs[0][k] == outputs[1][k] for k in outputs[0])
    _line("cli-determinism",
          same,
          f"{len(outputs[0])} artifacts bit-identical across two runs "
          "(dataset, codec, 200-step model, generated clip)")


# ------------------------------------------------------------ detector


def test_detector_recovers_truth_on_noiseless_clips():
    bands = default_intensity_bands(4)
    ious = []
    for seed in range(50):
        specs = sample_structure_specs(np.random.default_rng(seed))
        clip = render_phantom(specs, 12, 64, 64, seed=seed, noise_strength=0.0)
        det_boxes, det_present = detect_boxes(clip.frames, bands)
        both = det_present & clip.present
        for t, c in zip(*np.nonzero(both)):
            ious.append(box_iou(det_boxes[t, c], clip.boxes[t, c]))
    mean_iou = float(np.mean(ious))
    _line("detector-validity",
          mean_iou >= 0.90,
          f"mean IoU {mean_iou:.4f} over {len(ious)} boxes in 50 clips")


# ------------------------------------------------------------ round trips


def test_files_round_trip_bit_exactly(tmp_path):
    specs = sample_structure_specs(np.random.default_rng(3))
    clip = render_phantom(specs, 6, 64, 64, seed=3)

    clip_path = tmp_path / "clip.ecmv"
    write_clip(clip, clip_path)
    first = clip_path.read_bytes()
    loaded = read_clip(clip_path)
    clip_ok = (np.array_equal(clip.frames, loaded.frames)
               and np.array_equal(clip.boxes, loaded.boxes)
               and np.array_equal(clip.present, loaded.present))
    write_clip(loaded, clip_path)
    clip_ok = clip_ok and clip_path.read_bytes() == first

    curves = extract_curves(clip.boxes, clip.present, 64, 64)
    curve_path = tmp_path / "curves.json"
    save_curves(curves, curve_path)
    first = curve_path.read_bytes()
    loaded_curves = load_curves(curve_path)
    curves_ok = (np.array_equal(curves.coords, loaded_curves.coords)
                 and np.array_equal(curves.present, loaded_curves.present))
    save_curves(loaded_curves, curve_path)
    curves_ok = curves_ok and curve_path.read_bytes() == first

    rng = np.random.default_rng(0)
    tensors = {
        "w": rng.normal(size=(3, 4)).astype(np.float32),
        "b": rng.normal(size=(7,)),
        "steps": np.array([1, 2, 3], dtype=np.int64),
        "flags": np.array([True, False]),
    }
    meta = {"kind": "test", "nested": {"a": 1, "b": [1.5, "x"]}}
    ckpt_path = tmp_path / "state.ecmc"
    save_checkpoint(ckpt_path, tensors, meta)
    first = ckpt_path.read_bytes()
    loaded_tensors, loaded_meta = load_checkpoint(ckpt_path)
    ckpt_ok = loaded_meta == meta and all(
        np.array_equal(tensors[k], loaded_tensors[k])
        and tensors[k].dtype == loaded_tensors[k].dtype
        for k in tensors)
    save_checkpoint(ckpt_path, loaded_tensors, loaded_meta)
    ckpt_ok = ckpt_ok and ckpt_path.read_bytes() == first

    _line("file-round-trips",
          clip_ok and curves_ok and ckpt_ok,
          f"clip {clip_ok}, curves {curves_ok}, checkpoint {ckpt_ok}")


# ------------------------------------------------------------ end to end


SMOKE_TRAIN_STEPS = 17000
SMOKE_DDIM_STEPS = 50
SMOKE_HELD_OUT = 16


@pytest.fixture(scope="module")
def smoke_model(tmp_path_factory):
    """The full desk-scale model: 200 clips, trained codec + denoiser."""
    cfg = RunConfig(
        clip_count=200,
        base_channels=32, cond_dim=96, motion_dim=128, time_dim=128,
        codec_steps=800,
        train_steps=SMOKE_TRAIN_STEPS, batch_size=4, lr=2e-4,
        ddim_steps=SMOKE_DDIM_STEPS, log_every=1000, checkpoint_every=10**9,
    )
    data_dir = tmp_path_factory.mktemp("smoke") / "data"
    clips, _ = generate_dataset(cfg, data_dir)
    train_clips = clips[: cfg.clip_count - SMOKE_HELD_OUT]
    held_out = clips[cfg.clip_count - SMOKE_HELD_OUT:]
    frames = np.concatenate([c.frames for c in train_clips], axis=0)
    codec = FrameAutoencoder(
        downsample=cfg.downsample, latent_channels=cfg.latent_channels,
        hidden=cfg.codec_hidden, steps=cfg.codec_steps, lr=cfg.codec_lr,
        batch_size=cfg.codec_batch, seed=cfg.codec_seed,
    ).fit(frames)
    codec_mae = codec.reconstruction_mae(frames[:512])
    pipe, _ = train_diffusion(train_clips, codec, cfg)
    return cfg, train_clips, held_out, codec_mae, pipe


def _mean_curves(train_clips, cfg):
    """Per-category mean corner coordinates, broadcast to a constant curve."""
    n = cfg.n_frames
    total = np.zeros((cfg.n_categories, 8))
    count = np.zeros((cfg.n_categories, 1))
    for clip in train_clips:
        cur = extract_curves(clip.boxes[:n], clip.present[:n], cfg.height, cfg.width)
        for cat in range(cfg.n_categories):
            sel = cur.present[:, cat]
            total[cat] += cur.coords[sel, cat].sum(axis=0)
            count[cat] += sel.sum()
    return MotionCurveSet(
        coords=np.broadcast_to(total / np.maximum(count, 1),
                               (n, cfg.n_categories, 8)).copy(),
        present=np.ones((n, cfg.n_categories), dtype=bool),
    )


@pytest.mark.slow
def test_generation_tracks_held_out_curves(smoke_model):
    cfg, train_clips, held_out, codec_mae, pipe = smoke_model
    assert codec_mae <= 0.05, f"codec reconstruction MAE {codec_mae:.4f}"
    bands = default_intensity_bands(cfg.n_categories)
    base_curves = _mean_curves(train_clips, cfg)
    n = cfg.n_frames
    true_scores, base_scores = [], []
    for i, clip in enumerate(held_out):
        curves = extract_curves(clip.boxes[:n], clip.present[:n],
                                cfg.height, cfg.width)
        gen_true = pipe.generate(clip.frames[0], curves, seed=1000 + i)
        gen_base = pipe.generate(clip.frames[0], base_curves, seed=1000 + i)
        st = iou_consistency(gen_true.frames, curves, bands)
        sb = iou_consistency(gen_base.frames, curves, bands)
        true_scores.append(st if st is not None else 0.0)
        base_scores.append(sb if sb is not None else 0.0)
    true_mean = float(np.mean(true_scores))
    base_mean = float(np.mean(base_scores))
    _line("held-out-curve-tracking",
          true_mean >= 0.5 and true_mean - base_mean >= 0.1,
          f"codec MAE {codec_mae:.4f}, true-curve iou_consistency "
          f"{true_mean:.4f}, constant-curve baseline {base_mean:.4f}, "
          f"gap {true_mean - base_mean:+.4f} over {len(held_out)} held-out clips")


@pytest.mark.slow
def test_curve_scaling_steers_generated_motion(smoke_model):
    cfg, _, held_out, _, pipe = smoke_model
    bands = default_intensity_bands(cfg.n_categories)
    n = cfg.n_frames
    clip = held_out[0]
    curves = extract_curves(clip.boxes[:n], clip.present[:n], cfg.height, cfg.width)
    target_boxes, target_present = curves_to_boxes(curves, cfg.height, cfg.width)
    factors = (0.5, 1.0, 1.5)
    n_seeds = 10
    amp_means = []
    others_iou = {}
    for factor in factors:
        edited = scale_curve(curves, 0, factor)
        amps, iou_vals = [], []
        for seed in range(n_seeds):
            gen = pipe.generate(clip.frames[0], edited, seed=2000 + seed)
            det_boxes, det_present = detect_boxes(gen.frames, bands)
            widths = [det_boxes[t, 0, 2] - det_boxes[t, 0, 0]
                      for t in range(n) if det_present[t, 0]]
            if len(widths) > 1:
                amps.append(max(widths) - min(widths))
            for cat in range(1, cfg.n_categories):
                for t in range(n):
                    if det_present[t, cat] and target_present[t, cat]:
                        iou_vals.append(box_iou(det_boxes[t, cat],
                                                target_boxes[t, cat]))
        amp_means.append(float(np.mean(amps)))
        others_iou[factor] = float(np.mean(iou_vals))
    rho = sstats.spearmanr(factors, amp_means).statistic
    worst_drop = max(others_iou[1.0] - others_iou[f] for f in (0.5, 1.5))
    _line("curve-scaling-controllability",
          rho == 1.0 and worst_drop <= 0.1,
          f"seed-mean width amplitudes {[f'{a:.2f}' for a in amp_means]} "
          f"for factors {factors}, spearman {rho:.2f}; "
          f"other-structure IoU {['%.3f' % others_iou[f] for f in factors]}, "
          f"worst drop {worst_drop:+.4f}")
