"""Release gates for the enhancement stack, numbered A1 through A9.

Each gate is one test; ``pytest -v`` therefore emits one pass/fail line
per gate, and each body also prints an ``A<n>: PASS`` line on success
(visible with ``-s`` or in captured output).  A7/A8 train two desk-scale
models from scratch, so this module dominates the suite's runtime.
"""

import functools
import subprocess
import sys
import time
from math import ceil

import numpy as np
import pytest
import torch

import cle.diffusion
from cle.conditioning import build_codebook, illum_embedding
from cle.data import SynthConfig, synth_pair
from cle.diffusion import (NoiseSchedule, cfg_combine, ddim_step,
                           make_schedule, predict_x0, q_sample)
from cle.imaging import color_map, gaussian_blur, save_image
from cle.losses import (FeatureExtractor, LossWeights, brightness_loss,
                        color_angle_loss, perceptual_loss, simple_loss,
                        ssim_loss)
from cle.metrics import (brightness_sweep, classify_curve, default_extractor,
                         gamma_enhancer, li_lpips, psnr)
from cle.trainer import TrainConfig, save_checkpoint, train

# Narrow gain range: input brightness then barely predicts target brightness
# (as with real varied-exposure pairs), so the model must read the requested
# level instead of amplifying the input. Target brightness stays in a
# realistic exposure band rather than the full unit interval.
DESK_SYNTH = SynthConfig(size=(64, 64), gain=(0.05, 0.15),
                         noise=(0.005, 0.02), brightness=(0.25, 0.85))
EVAL_STEPS = 25
EVAL_SEED = 11
# Mild guidance stretches the brightness map about its center and roughly
# triples the worst-case requested-level margin over the pure conditional.
EVAL_GUIDANCE = 1.5


def gate(name):
    """Print a single '<name>: PASS/FAIL' verdict line for the gate."""
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"{name}: FAIL")
                raise
            print(f"{name}: PASS")
        return wrapper
    return deco


# ------------------------------------------------------------ fixtures

@pytest.fixture(scope="module")
def train_pairs():
    return [synth_pair(i, DESK_SYNTH) for i in range(256)]


@pytest.fixture(scope="module")
def held_pairs():
    return [synth_pair(10_000 + i, DESK_SYNTH) for i in range(8)]


def desk_config(**overrides):
    # T=100 needs beta_end=0.1 to keep alpha_bar_T under 0.01, so sampling's
    # pure-noise start still matches the forward marginal at t=T; the short
    # schedule concentrates the step budget on few noise levels.
    base = dict(learning_rate=3e-4, weight_decay=1e-5, batch_size=16,
                epochs=500, crop=32, T=100, beta_end=0.1,
                cond_dropout=0.1, ema_decay=0.999,
                loss_weights=LossWeights(w_br=100.0),
                seed=0, codebook_n=8, base_channels=32,
                channel_multipliers=(1, 2, 4), blocks_per_level=2,
                attention=True)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def desk_model(train_pairs, tmp_path_factory):
    cfg = desk_config()
    steps = cfg.epochs * ceil(len(train_pairs) / cfg.batch_size)
    assert steps <= 20_000
    t0 = time.time()
    model = train(cfg, train_pairs)
    print(f"desk model: {steps} steps in {time.time() - t0:.0f}s")
    path = tmp_path_factory.mktemp("desk") / "desk.ckpt"
    save_checkpoint(model, path)
    return model, path


@pytest.fixture(scope="module")
def mask_model(train_pairs):
    cfg = desk_config(mask_mode=True, seed=1)
    steps = cfg.epochs * ceil(len(train_pairs) / cfg.batch_size)
    assert steps <= 20_000
    t0 = time.time()
    model = train(cfg, train_pairs)
    print(f"mask model: {steps} steps in {time.time() - t0:.0f}s")
    return model


def micro_model():
    cfg = TrainConfig(learning_rate=1e-3, weight_decay=1e-4, batch_size=2,
                      epochs=2, crop=16, T=50, seed=0, codebook_n=8,
                      base_channels=8, channel_multipliers=(1, 2),
                      blocks_per_level=1, attention=False)
    pairs = [synth_pair(s, SynthConfig(size=(32, 32))) for s in (0, 1)]
    return train(cfg, pairs)


# ------------------------------------------------------------ A1 .. A6

@gate("A1")
def test_a1_oracle_math():
    start = time.time()
    crafted = NoiseSchedule(T=2, beta=np.zeros(2), alpha=np.zeros(2),
                            alpha_bar=np.array([0.8, 0.5]))
    got = ddim_step(1.0, 2, 1, 0.2, crafted)
    want = (np.sqrt(0.8) * (1.0 - np.sqrt(0.5) * 0.2) / np.sqrt(0.5)
            + np.sqrt(0.2) * 0.2)
    assert abs(got - want) < 1e-6
    assert abs(want - 1.1754683) < 1e-6

    sched = make_schedule()
    rng = np.random.default_rng(1)
    for _ in range(100):
        y0 = rng.uniform(-1, 1, size=16)
        eps = rng.standard_normal(16)
        t = int(rng.integers(1, sched.T + 1))
        back = predict_x0(q_sample(y0, t, eps, sched), t, eps, sched)
        assert np.abs(back - y0).max() < 1e-5
    assert time.time() - start < 1.0


@gate("A2")
def test_a2_schedule_statistics():
    sched = make_schedule()
    rng = np.random.default_rng(2)
    n = 10_000
    y0 = 0.7
    for t in (1, sched.T // 2, sched.T):
        ab = sched.alpha_bar_at(t)
        eps = rng.standard_normal(n)
        y_t = q_sample(y0, t, eps, sched)
        want_mean = np.sqrt(ab) * y0
        want_var = 1.0 - ab
        mean_tol = 3.0 * np.sqrt(want_var / n)
        assert abs(y_t.mean() - want_mean) < mean_tol
        assert abs(y_t.var(ddof=1) - want_var) < 0.05 * want_var


@gate("A3")
def test_a3_conditioning_invariances():
    rng = np.random.default_rng(3)
    x = np.clip(rng.random((16, 16, 3)), 0.05, 1.0)
    cx = color_map(x)
    assert np.abs(color_map(cx) - cx).max() < 1e-6
    for k in (0.25, 0.5, 2.0):
        assert np.abs(color_map(k * x) - cx).max() < 1e-6

    cb = build_codebook(64, seed=0)
    eye_dev = np.abs(cb.matrix.T @ cb.matrix - np.eye(64)).max()
    assert eye_dev < 1e-6
    for i in (0, 7, 33, 63):
        emb = illum_embedding(float(cb.anchors[i]), cb)
        assert abs(np.linalg.norm(emb.vector) - 1.0) < 1e-6
        assert np.abs(emb.vector - cb.matrix[:, i]).max() < 1e-9
    for i in (0, 30, 62):
        mid = float(0.5 * (cb.anchors[i] + cb.anchors[i + 1]))
        emb = illum_embedding(mid, cb)
        assert abs(np.linalg.norm(emb.vector) - np.sqrt(2) / 2) < 1e-6


def _autograd_vs_fd(make_loss, base, rel_tol=1e-3, h=1e-6):
    x = torch.tensor(base, dtype=torch.float64, requires_grad=True)
    loss = make_loss(x)
    loss.backward()
    auto = x.grad.numpy().copy()

    flat = base.reshape(-1)
    fd = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = float(make_loss(torch.tensor(base, dtype=torch.float64)))
        flat[i] = orig - h
        lo = float(make_loss(torch.tensor(base, dtype=torch.float64)))
        flat[i] = orig
        fd[i] = (hi - lo) / (2.0 * h)
    fd = fd.reshape(base.shape)
    rel = np.linalg.norm(auto - fd) / max(np.linalg.norm(fd), 1e-12)
    assert rel < rel_tol, rel


@gate("A4")
def test_a4_loss_gradients():
    rng = np.random.default_rng(4)
    eps = torch.tensor(rng.standard_normal((1, 3, 2, 2)), dtype=torch.float64)
    _autograd_vs_fd(lambda x: simple_loss(eps, x),
                    rng.standard_normal((1, 3, 2, 2)))

    y = torch.tensor(rng.random((1, 3, 4, 4)), dtype=torch.float64)
    _autograd_vs_fd(lambda x: brightness_loss(x, y), rng.random((1, 3, 4, 4)))

    yc = torch.tensor(rng.uniform(0.3, 0.9, (1, 3, 3, 3)), dtype=torch.float64)
    _autograd_vs_fd(lambda x: color_angle_loss(x, yc),
                    rng.uniform(0.3, 0.9, (1, 3, 3, 3)))

    ys = torch.tensor(rng.random((1, 3, 12, 12)), dtype=torch.float64)
    _autograd_vs_fd(lambda x: ssim_loss(x, ys), rng.random((1, 3, 12, 12)))

    extractor = FeatureExtractor(seed=0)
    yp = torch.tensor(rng.random((1, 3, 4, 4)), dtype=torch.float64)
    _autograd_vs_fd(lambda x: perceptual_loss(x, yp, extractor),
                    rng.random((1, 3, 4, 4)))


@gate("A5")
def test_a5_guidance(monkeypatch):
    rng = np.random.default_rng(5)
    for s in (0.0, 0.25, 0.5, 1.0, 1.5, 2.5, -0.5):
        c = torch.tensor(rng.standard_normal((2, 3, 4, 4)))
        u = torch.tensor(rng.standard_normal((2, 3, 4, 4)))
        assert torch.equal(cfg_combine(c, u, s), s * c + (1.0 - s) * u)

    model = micro_model()
    img = synth_pair(9, SynthConfig(size=(16, 16))).low
    mixed, _ = model.enhance(img, 0.5, s=1.0, steps=5, seed=3)
    monkeypatch.setattr(cle.diffusion, "cfg_combine", lambda c, u, s: c)
    cond_only, _ = model.enhance(img, 0.5, s=1.0, steps=5, seed=3)
    assert np.array_equal(mixed, cond_only)


@gate("A6")
def test_a6_light_independent_metric():
    rng = np.random.default_rng(5)
    t = gaussian_blur(rng.random((64, 64, 3)), 2.0)
    tex = 0.15 + 0.75 * (t - t.min()) / (t.max() - t.min())
    assert li_lpips(tex, 0.5 * tex) == 0.0

    ref = gamma_enhancer(tex, 0.5)
    inp = np.clip(0.3 * ref ** 2.2, 0.0, 1.0)
    lams = np.linspace(0.2, 0.7, 15)
    rep = brightness_sweep(ref, inp, lams,
                           lambda img, lam: gamma_enhancer(img, lam),
                           extractor=default_extractor())
    assert np.abs(np.asarray(rep.brightness) - lams).max() < 0.01
    assert np.ptp(rep.curves["li_lpips"]) < 0.5 * np.ptp(rep.curves["perceptual"])
    assert classify_curve(rep.curves["psnr"]) == "inverted-V"
    assert classify_curve(rep.curves["perceptual"]) == "V"


# ------------------------------------------------------------ A7 .. A9

@gate("A7")
def test_a7_desk_training_gate(desk_model, held_pairs):
    model, _ = desk_model
    lams = (0.3, 0.5, 0.7)
    bright = np.zeros((len(held_pairs), len(lams)))
    for i, pair in enumerate(held_pairs):
        for j, lam in enumerate(lams):
            out, _ = model.enhance(pair.low, lam, s=EVAL_GUIDANCE,
                                   steps=EVAL_STEPS, seed=EVAL_SEED)
            bright[i, j] = out.mean()
    means = bright.mean(axis=0)
    print("mean brightness at (0.3, 0.5, 0.7):", np.round(means, 3))
    for j, lam in enumerate(lams):
        assert abs(means[j] - lam) <= 0.10          # (a) requested-lambda fidelity
    assert np.all(np.diff(bright, axis=1) > 0)      # (b) monotone control

    in_ps, out_ps = [], []
    for pair in held_pairs:
        lam = float(pair.normal.mean())
        out, _ = model.enhance(pair.low, lam, s=EVAL_GUIDANCE,
                               steps=EVAL_STEPS, seed=EVAL_SEED)
        in_ps.append(psnr(pair.low, pair.normal))
        out_ps.append(psnr(out, pair.normal))
    gain = np.median(out_ps) - np.median(in_ps)
    print(f"median PSNR: input {np.median(in_ps):.2f} dB, "
          f"output {np.median(out_ps):.2f} dB, gain {gain:.2f} dB")
    assert gain >= 3.0                              # (c) enhancement


@gate("A8")
def test_a8_mask_gate(mask_model, held_pairs):
    ratios = []
    for pair in held_pairs:
        h, w = pair.low.shape[:2]
        mask = np.zeros((h, w))
        mask[:, w // 2:] = 1.0
        out, _ = mask_model.enhance(pair.low, 0.7, mask=mask, s=EVAL_GUIDANCE,
                                    steps=EVAL_STEPS, seed=EVAL_SEED)
        inc_masked = out[:, w // 2:].mean() - pair.low[:, w // 2:].mean()
        inc_unmasked = abs(out[:, :w // 2].mean() - pair.low[:, :w // 2].mean())
        ratios.append(inc_masked / max(inc_unmasked, 1e-9))
    print("masked/unmasked change ratios:", np.round(ratios, 1))
    assert np.median(ratios) >= 2.0

    for pair in held_pairs:                         # full mask behaves globally
        bright = []
        for lam in (0.3, 0.5, 0.7):
            out, _ = mask_model.enhance(pair.low, lam, s=EVAL_GUIDANCE,
                                        steps=EVAL_STEPS, seed=EVAL_SEED)
            bright.append(out.mean())
        assert bright[0] < bright[1] < bright[2]


@gate("A9")
def test_a9_cross_process_determinism(desk_model, held_pairs, tmp_path):
    _, ckpt = desk_model
    inp = tmp_path / "in.png"
    save_image(held_pairs[0].low, inp)
    payloads = []
    for name in ("first.png", "second.png"):
        out = tmp_path / name
        proc = subprocess.run(
            [sys.executable, "-m", "cle.cli", "sample", "--ckpt", str(ckpt),
             "--input", str(inp), "--lambda", "0.6", "--steps", "10",
             "--seed", "7", "--out", str(out)],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        payloads.append(out.read_bytes())
    assert payloads[0] == payloads[1]
