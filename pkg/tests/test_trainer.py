"""Trainer tests: config handling, the decoupled-weight-decay optimizer
against a numpy reference, deterministic short runs, the smoke-run loss
decrease, EMA behavior, checkpoint round trips, and evaluation."""

import json

import numpy as np
import pytest
import torch

from cle._container import read_arrays, write_arrays
from cle.data import PairedSample, SynthConfig, synth_pair
from cle.errors import ArgumentError, DatasetError, FormatError, StateError
from cle.losses import LossWeights
from cle.trainer import (
    DecoupledAdamW,
    EnhanceModel,
    TrainConfig,
    _embedding_matrix,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)
from cle.conditioning import build_codebook
from cle.denoiser import init_denoiser
from cle.diffusion import make_schedule


def tiny_config(**kw):
    base = dict(learning_rate=1e-3, weight_decay=1e-4, batch_size=2, epochs=10,
                crop=16, T=50, seed=0, codebook_n=8, base_channels=8,
                channel_multipliers=(1, 2), blocks_per_level=1, attention=False)
    base.update(kw)
    return TrainConfig(**base)


def tiny_pairs(n=2, seed=0, size=32):
    return [synth_pair(seed + i, SynthConfig(size=(size, size))) for i in range(n)]


def run_losses(config, pairs):
    log = []
    train(config, pairs, progress=lambda s, t, d: log.append(d))
    return log


def test_config_defaults_validation_json(tmp_path):
    cfg = TrainConfig()
    assert cfg.learning_rate == 5e-5
    assert cfg.weight_decay == 1e-4
    assert cfg.batch_size == 16
    assert cfg.crop == 128
    assert cfg.cond_dropout == 0.02
    cfg.validate()
    assert cfg.denoiser_config().in_channels == 10
    assert TrainConfig(mask_mode=True).denoiser_config().in_channels == 11
    assert TrainConfig(codebook_n=32).denoiser_config().illum_embed_dim == 32

    for bad in (dict(learning_rate=-1), dict(batch_size=0),
                dict(cond_dropout=1.5), dict(ema_decay=1.0),
                dict(loss_weights=LossWeights(w_br=-1))):
        with pytest.raises(ArgumentError):
            TrainConfig(**bad).validate()

    path = tmp_path / "train.json"
    path.write_text(json.dumps({
        "learning_rate": 2e-4, "epochs": 5, "mask_mode": True,
        "loss_weights": {"w_br": 1.0, "w_col": 2.0, "w_ssim": 3.0, "w_lpips": 4.0},
        "channel_multipliers": [1, 2],
    }))
    loaded = TrainConfig.from_json(path)
    assert loaded.learning_rate == 2e-4
    assert loaded.mask_mode is True
    assert loaded.loss_weights.w_col == 2.0
    assert loaded.channel_multipliers == (1, 2)


def test_adamw_decay_decoupled_from_lr():
    p = torch.nn.Parameter(torch.tensor([1.0, -2.0]))
    opt = DecoupledAdamW([p], lr=0.0, weight_decay=0.1)
    p.grad = torch.tensor([1000.0, -1000.0])   # must be ignored at lr 0
    opt.step()
    assert torch.allclose(p.detach(), torch.tensor([0.9, -1.8]))
    p.grad = torch.tensor([-7.0, 7.0])
    opt.step()
    assert torch.allclose(p.detach(), torch.tensor([0.81, -1.62]))


def test_adamw_matches_numpy_reference():
    lr, wd, b1, b2, eps = 1e-2, 0.05, 0.9, 0.999, 1e-8
    rng = np.random.default_rng(0)
    p0 = rng.standard_normal(4)
    grads = rng.standard_normal((5, 4))

    ref = p0.copy()
    m = np.zeros(4)
    v = np.zeros(4)
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        ref *= 1.0 - wd
        ref -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)

    p = torch.nn.Parameter(torch.tensor(p0, dtype=torch.float64))
    opt = DecoupledAdamW([p], lr=lr, weight_decay=wd, betas=(b1, b2), eps=eps)
    for g in grads:
        p.grad = torch.tensor(g, dtype=torch.float64)
        opt.step()
    assert np.allclose(p.detach().numpy(), ref, rtol=1e-12, atol=1e-12)


def test_train_deterministic_first_steps():
    pairs = tiny_pairs()
    a = run_losses(tiny_config(), pairs)
    b = run_losses(tiny_config(), pairs)
    assert len(a) == 10
    for da, db in zip(a, b):
        assert da["total"] == db["total"]
        assert da["simple"] == db["simple"]


def test_train_smoke_loss_decreases():
    pairs = tiny_pairs(8)
    log = run_losses(tiny_config(batch_size=4, epochs=25), pairs)   # 50 steps
    assert len(log) == 50
    first = np.mean([d["total"] for d in log[:10]])
    last = np.mean([d["total"] for d in log[-10:]])
    assert last < first
    assert all(0.0 <= d["uncond_fraction"] <= 1.0 for d in log)


def test_zero_aux_weights_reduce_to_simple():
    pairs = tiny_pairs()
    log = run_losses(tiny_config(epochs=3, loss_weights=LossWeights(0, 0, 0, 0)),
                     pairs)
    for d in log:
        assert d["total"] == d["simple"]


def test_aux_t_threshold_zero_disables_aux_terms():
    pairs = tiny_pairs()
    log = run_losses(tiny_config(epochs=3, aux_t_threshold=0), pairs)
    for d in log:
        assert d["brightness"] == 0.0
        assert d["perceptual"] == 0.0
        assert d["total"] == d["simple"]


def test_ema_tracks_params():
    pairs = tiny_pairs()
    cfg = tiny_config(epochs=1, ema_decay=0.5)
    net0 = init_denoiser(cfg.denoiser_config(), cfg.seed)
    model = train(cfg, pairs)
    assert model.ema_net is not None
    for (name, pe), p0, p1 in zip(model.ema_net.state_dict().items(),
                                  net0.state_dict().values(),
                                  model.net.state_dict().values()):
        if not torch.is_floating_point(pe):
            continue
        want = 0.5 * p0 + 0.5 * p1
        assert torch.allclose(pe, want, atol=1e-7), name

    # lr 0 and wd 0: params never move, so the EMA stays bit-identical
    frozen = train(tiny_config(epochs=3, learning_rate=0.0, weight_decay=0.0,
                               ema_decay=0.5), pairs)
    for pe, pn in zip(frozen.ema_net.state_dict().values(),
                      frozen.net.state_dict().values()):
        assert torch.equal(pe, pn)


def test_train_rejects():
    with pytest.raises(DatasetError):
        train(tiny_config(), [])
    small = [synth_pair(0, SynthConfig(size=(8, 8)))]
    with pytest.raises(ArgumentError):
        train(tiny_config(), small)
    with pytest.raises(ArgumentError):
        train(tiny_config(batch_size=0), tiny_pairs())


def test_checkpoint_round_trip(tmp_path):
    pairs = tiny_pairs()
    model = train(tiny_config(epochs=2, standardize_inputs=True), pairs)
    assert model.normalization is not None

    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(model, p1)
    loaded = load_checkpoint(p1)
    save_checkpoint(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()

    assert loaded.step == model.step
    assert loaded.mask_mode == model.mask_mode
    assert loaded.codebook.seed == model.codebook.seed
    assert np.allclose(loaded.normalization[0], model.normalization[0])
    for a, b in zip(model.net.state_dict().values(),
                    loaded.net.state_dict().values()):
        assert torch.equal(a, b)

    x = pairs[0].low[:16, :16]
    before, _ = model.enhance(x, 0.5, steps=2, seed=3)
    after, _ = loaded.enhance(x, 0.5, steps=2, seed=3)
    assert np.array_equal(before, after)


def test_checkpoint_truncation_gives_integrity_error(tmp_path):
    model = train(tiny_config(epochs=1), tiny_pairs())
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    data = path.read_bytes()
    path.write_bytes(data[:-1])
    with pytest.raises(Exception) as exc:
        load_checkpoint(path)
    from cle.errors import IntegrityError
    assert isinstance(exc.value, IntegrityError)


def test_checkpoint_version_and_kind_checks(tmp_path):
    model = train(tiny_config(epochs=1), tiny_pairs())
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    data = bytearray(path.read_bytes())
    # patch the version digit inside the JSON manifest, keeping length fixed
    idx = data.find(b'"format_version": 1')
    assert idx > 0
    data[idx:idx + len(b'"format_version": 1')] = b'"format_version": 9'
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(data))
    with pytest.raises(FormatError):
        load_checkpoint(bad)

    other = tmp_path / "other.ckpt"
    write_arrays(other, {"x": np.zeros(3, dtype=np.float32)}, {"kind": "misc"})
    with pytest.raises(StateError):
        load_checkpoint(other)

    missing = tmp_path / "missing.ckpt"
    manifest, arrays = read_arrays(path)
    arrays.pop("net.stem.weight")
    write_arrays(missing, arrays, {k: v for k, v in manifest.items()
                                   if k not in ("arrays", "payload_bytes",
                                                "format_version")})
    with pytest.raises(StateError):
        load_checkpoint(missing)


class IdentityModel:
    """Stand-in whose enhancement returns the input unchanged."""

    def enhance(self, x, lam, mask=None, s=1.0, steps=50, seed=0,
                on_step=None, traj_every=5):
        return x.copy(), []


def test_evaluate_ground_truth_oracle():
    img = synth_pair(0, SynthConfig(size=(32, 32))).normal
    entries = [PairedSample(low=img, normal=img, id=f"p{i}") for i in range(3)]
    report = evaluate(IdentityModel(), entries, steps=1)
    assert len(report.rows) == 3
    for row in report.rows:
        assert row["psnr"] == 100.0
        assert row["ssim"] == pytest.approx(1.0, abs=1e-9)
        assert row["perceptual"] == 0.0
        assert row["li_lpips"] == 0.0
    assert report.extractor_id == "random-pyramid-seed0"
    with pytest.raises(DatasetError):
        evaluate(IdentityModel(), [])


def test_dropout_bookkeeping_fraction():
    codebook = build_codebook(8, 0)
    rng = np.random.default_rng(0)
    counters = {"total": 0, "dropped": 0}
    lam_rng = np.random.default_rng(1)
    for _ in range(100):
        _embedding_matrix(lam_rng.random(1000), codebook, 0.02, rng, counters)
    frac = counters["dropped"] / counters["total"]
    assert counters["total"] == 100_000
    assert abs(frac - 0.02) < 0.005


def test_enhance_guards():
    cfg = tiny_config()
    net = init_denoiser(cfg.denoiser_config(), 0)
    model = EnhanceModel(net, make_schedule(50, 1e-4, 0.02), build_codebook(8, 0),
                         mask_mode=False, step=1)
    x = np.full((16, 16, 3), 0.2)
    with pytest.raises(ArgumentError):
        model.enhance(x, 0.5, mask=np.ones((16, 16)))

    mask_cfg = tiny_config(mask_mode=True)
    mask_net = init_denoiser(mask_cfg.denoiser_config(), 0)
    mask_model = EnhanceModel(mask_net, make_schedule(50, 1e-4, 0.02),
                              build_codebook(8, 0), mask_mode=True, step=1)
    out, _ = mask_model.enhance(x, 0.5, steps=1)    # absent mask -> full mask
    assert out.shape == (16, 16, 3)
