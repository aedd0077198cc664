"""Training loop, decoupled-weight-decay optimizer, checkpoints, evaluation."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import torch

from . import diffusion
from ._container import read_arrays, write_arrays
from .conditioning import (ConditionBundle, IlluminationCodebook, assemble_condition,
                           build_codebook, dropout_condition, illum_embedding)
from .data import PairedSample, Prefetcher, batch_stream, extract_lambda, load_pair
from .denoiser import Denoiser, DenoiserConfig, init_denoiser
from .errors import ArgumentError, DatasetError, NumericError, StateError
from .losses import (FeatureExtractor, LossComponents, LossWeights, brightness_loss,
                     color_angle_loss, perceptual_loss, simple_loss, ssim_loss,
                     total_aux_loss)
from .metrics import MetricReport, li_lpips, perceptual_distance, psnr, ssim_metric

__all__ = [
    "TrainConfig",
    "EnhanceModel",
    "DecoupledAdamW",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "evaluate",
]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-5
    weight_decay: float = 1e-4
    batch_size: int = 16
    epochs: int = 100
    crop: int = 128
    cond_dropout: float = 0.02
    loss_weights: LossWeights = field(default_factory=LossWeights)
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    seed: int = 0
    codebook_n: int = 64
    codebook_seed: int = 0
    mask_mode: bool = False
    standardize_inputs: bool = False
    ema_decay: float | None = None
    aux_t_threshold: int | None = None      # apply aux losses only where t <= this
    base_channels: int = 32
    channel_multipliers: tuple[int, ...] = (1, 2, 4)
    blocks_per_level: int = 2
    attention: bool = True

    def validate(self) -> None:
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ArgumentError("learning_rate and weight_decay must be >= 0")
        if self.batch_size < 1 or self.epochs < 1 or self.crop < 1:
            raise ArgumentError("batch_size, epochs, crop must be >= 1")
        if not 0.0 <= self.cond_dropout <= 1.0:
            raise ArgumentError("cond_dropout must lie in [0,1]")
        if self.ema_decay is not None and not 0.0 < self.ema_decay < 1.0:
            raise ArgumentError("ema_decay must lie in (0,1)")
        self.loss_weights.validate()

    def denoiser_config(self) -> DenoiserConfig:
        return DenoiserConfig(
            base_channels=self.base_channels,
            channel_multipliers=tuple(self.channel_multipliers),
            blocks_per_level=self.blocks_per_level,
            illum_embed_dim=self.codebook_n,
            in_channels=11 if self.mask_mode else 10,
            attention=self.attention,
        )

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path) as f:
            raw = json.load(f)
        if "loss_weights" in raw:
            raw["loss_weights"] = LossWeights(**raw["loss_weights"])
        if "channel_multipliers" in raw:
            raw["channel_multipliers"] = tuple(raw["channel_multipliers"])
        return cls(**raw)


class DecoupledAdamW:
    """Adam moments plus multiplicative weight decay applied independently of lr.

    p <- (1 - wd) * p - lr * m_hat / (sqrt(v_hat) + eps), so decay still acts
    when the learning rate is zero.
    """

    def __init__(self, params, lr: float, weight_decay: float = 0.0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [torch.zeros_like(p) for p in self.params]
        self.v = [torch.zeros_like(p) for p in self.params]

    @torch.no_grad()
    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m.mul_(self.b1).add_(g, alpha=1.0 - self.b1)
            v.mul_(self.b2).addcmul_(g, g, value=1.0 - self.b2)
            if self.weight_decay:
                p.mul_(1.0 - self.weight_decay)
            denom = (v / bc2).sqrt_().add_(self.eps)
            p.addcdiv_(m, denom * bc1, value=-self.lr)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class EnhanceModel:
    """A trained (or initializing) enhancement model: everything sampling needs."""

    def __init__(self, net: Denoiser, schedule: diffusion.NoiseSchedule,
                 codebook: IlluminationCodebook, mask_mode: bool,
                 normalization: tuple[np.ndarray, np.ndarray] | None = None,
                 ema_net: Denoiser | None = None, step: int = 0,
                 train_config: dict | None = None):
        self.net = net
        self.ema_net = ema_net
        self.schedule = schedule
        self.codebook = codebook
        self.mask_mode = mask_mode
        self.normalization = normalization
        self.step = step
        self.train_config = train_config or {}

    @property
    def is_trained(self) -> bool:
        return self.step > 0

    def _eval_net(self) -> Denoiser:
        return self.ema_net if self.ema_net is not None else self.net

    def eps(self, bundle: ConditionBundle, y_t: torch.Tensor, t,
            embedding: torch.Tensor) -> torch.Tensor:
        """Predict noise for the stacked condition channels at step t."""
        net = self._eval_net()
        if bundle.channels() != net.config.in_channels:
            raise ArgumentError(
                f"bundle provides {bundle.channels()} channels, "
                f"model expects {net.config.in_channels}")
        stack = bundle.stack(y_t, norm=self.normalization)
        t_tensor = t if torch.is_tensor(t) else torch.tensor([int(t)])
        return net(stack, t_tensor, embedding)

    def enhance(self, x: np.ndarray, lam: float, mask: np.ndarray | None = None,
                s: float = 1.0, steps: int = 50, seed: int = 0,
                on_step=None, traj_every: int = 5):
        """Convenience wrapper: assemble the bundle and run the sampler."""
        if mask is not None and not self.mask_mode:
            raise ArgumentError("this model has no mask channel")
        if self.mask_mode and mask is None:
            mask = np.ones(x.shape[:2])     # absent mask means enhance everywhere
        bundle = assemble_condition(x, mask if self.mask_mode else None)
        return diffusion.sample(self, bundle, lam, s=s, steps=steps, seed=seed,
                                on_step=on_step, traj_every=traj_every)


def _embedding_matrix(lams: np.ndarray, codebook: IlluminationCodebook,
                      p_drop: float, rng: np.random.Generator,
                      counters: dict | None = None) -> torch.Tensor:
    rows = []
    for lam in lams:
        emb = illum_embedding(float(np.clip(lam, 0.0, 1.0)), codebook)
        emb = dropout_condition(emb, p_drop, rng)
        if counters is not None:
            counters["total"] += 1
            if emb.lam is None:
                counters["dropped"] += 1
        rows.append(emb.vector)
    return torch.from_numpy(np.stack(rows).astype(np.float32))


def _compute_normalization(pairs, crop: int, mask_mode: bool, seed: int):
    # Per-channel moments of the fixed conditioning stack over a small sample.
    stream = batch_stream(pairs, batch_size=min(8, len(pairs)), crop=crop,
                          seed=seed, mask_mode=mask_mode)
    chunks = [next(stream).fixed for _ in range(8)]
    fixed = torch.cat(chunks)
    mean = fixed.mean(dim=(0, 2, 3)).numpy()
    std = np.maximum(fixed.std(dim=(0, 2, 3)).numpy(), 1e-3)
    return mean.astype(np.float64), std.astype(np.float64)


def train(config: TrainConfig, pairs: list[PairedSample],
          progress: Callable[[int, int, dict], None] | None = None,
          extractor: FeatureExtractor | None = None) -> EnhanceModel:
    """Run the full optimization loop and return the trained model."""
    config.validate()
    if not pairs:
        raise DatasetError("no training pairs")
    for p in pairs:
        if p.low.shape[0] < config.crop or p.low.shape[1] < config.crop:
            raise ArgumentError(f"pair {p.id} smaller than crop {config.crop}")

    torch.manual_seed(config.seed)
    net = init_denoiser(config.denoiser_config(), config.seed)
    schedule = diffusion.make_schedule(config.T, config.beta_start, config.beta_end)
    codebook = build_codebook(config.codebook_n, config.codebook_seed)
    if extractor is None:
        extractor = FeatureExtractor(seed=0)

    normalization = None
    if config.standardize_inputs:
        normalization = _compute_normalization(
            pairs, config.crop, config.mask_mode, config.seed + 7)

    ema_net = None
    if config.ema_decay is not None:
        ema_net = init_denoiser(config.denoiser_config(), config.seed)
        ema_net.load_state_dict(net.state_dict())

    opt = DecoupledAdamW(net.parameters(), lr=config.learning_rate,
                         weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed + 1)
    steps_per_epoch = max(1, math.ceil(len(pairs) / config.batch_size))
    total_steps = config.epochs * steps_per_epoch
    ab_torch = torch.from_numpy(
        np.concatenate([[1.0], schedule.alpha_bar]).astype(np.float32))

    counters = {"total": 0, "dropped": 0}
    loader = Prefetcher(batch_stream(
        pairs, config.batch_size, config.crop, seed=config.seed + 2,
        mask_mode=config.mask_mode))
    model = EnhanceModel(net, schedule, codebook, config.mask_mode,
                         normalization=normalization, ema_net=ema_net,
                         train_config=asdict(config))
    try:
        for step in range(1, total_steps + 1):
            batch = next(loader)
            b = batch.target.shape[0]
            t_np = rng.integers(1, config.T + 1, size=b)
            t = torch.from_numpy(t_np)
            eps = torch.from_numpy(rng.standard_normal(
                batch.target.shape).astype(np.float32))

            y0_model = batch.target * 2.0 - 1.0
            ab = ab_torch[t].reshape(b, 1, 1, 1)
            y_t = ab.sqrt() * y0_model + (1.0 - ab).sqrt() * eps

            emb = _embedding_matrix(batch.lam, codebook, config.cond_dropout,
                                    rng, counters)
            fixed = batch.fixed
            if normalization is not None:
                mean = torch.as_tensor(normalization[0], dtype=fixed.dtype
                                       ).reshape(1, -1, 1, 1)
                std = torch.as_tensor(normalization[1], dtype=fixed.dtype
                                      ).reshape(1, -1, 1, 1)
                fixed = (fixed - mean) / std
            eps_hat = net(torch.cat([y_t, fixed], dim=1), t, emb)

            y0_hat = (y_t - (1.0 - ab).sqrt() * eps_hat) / ab.sqrt()
            y0_hat = (y0_hat + 1.0) / 2.0
            # Structural terms need a valid image range; the brightness term
            # must see the raw estimate, because clamping zeroes the gradient
            # on saturated pixels and an estimate stuck below black could then
            # never be pulled back up.
            y0_clamped = y0_hat.clamp(0.0, 1.0)

            # Weight brightness supervision by 1 - alpha_bar_t: y_t hands the
            # model alpha_bar of the answer, so the brightness of the estimate
            # must come from the illumination code exactly where alpha_bar is
            # small, and supervision mass should sit there too.
            bright_w = (1.0 - ab).reshape(-1)
            if config.aux_t_threshold is not None:
                keep = torch.from_numpy(t_np <= config.aux_t_threshold)
                aux_raw = y0_hat[keep]
                aux_pred = y0_clamped[keep]
                aux_ref = batch.target[keep]
                aux_w = bright_w[keep]
            else:
                aux_raw, aux_pred, aux_ref = y0_hat, y0_clamped, batch.target
                aux_w = bright_w

            if aux_pred.shape[0] == 0:
                zero = eps_hat.sum() * 0.0
                comps = LossComponents(simple=simple_loss(eps, eps_hat),
                                       brightness=zero, color=zero,
                                       ssim=zero, perceptual=zero)
            else:
                comps = LossComponents(
                    simple=simple_loss(eps, eps_hat),
                    brightness=brightness_loss(aux_raw, aux_ref, aux_w),
                    color=color_angle_loss(aux_pred, aux_ref),
                    ssim=ssim_loss(aux_pred, aux_ref),
                    perceptual=perceptual_loss(aux_pred, aux_ref, extractor),
                )
            try:
                total = total_aux_loss(comps, config.loss_weights)
            except NumericError as e:
                raise NumericError(f"{e} at step {step}; batch ids: {batch.ids}") from e

            opt.zero_grad()
            total.backward()
            opt.step()
            model.step = step

            if ema_net is not None:
                with torch.no_grad():
                    d = config.ema_decay
                    for pe, pn in zip(ema_net.parameters(), net.parameters()):
                        pe.mul_(d).add_(pn, alpha=1.0 - d)

            if progress is not None:
                progress(step, total_steps, {
                    "total": float(total.detach()),
                    "simple": float(comps.simple.detach()),
                    "brightness": float(comps.brightness.detach()),
                    "color": float(comps.color.detach()),
                    "ssim": float(comps.ssim.detach()),
                    "perceptual": float(comps.perceptual.detach()),
                    "uncond_fraction": counters["dropped"] / max(counters["total"], 1),
                })
    finally:
        loader.close()
    return model


CHECKPOINT_KIND = "enhance-model"


def save_checkpoint(model: EnhanceModel, path) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, tensor in model.net.state_dict().items():
        arrays[f"net.{name}"] = tensor.detach().cpu().numpy()
    if model.ema_net is not None:
        for name, tensor in model.ema_net.state_dict().items():
            arrays[f"ema.{name}"] = tensor.detach().cpu().numpy()
    if model.normalization is not None:
        arrays["norm.mean"] = model.normalization[0]
        arrays["norm.std"] = model.normalization[1]
    net_cfg = model.net.config
    extra = {
        "kind": CHECKPOINT_KIND,
        "step": model.step,
        "mask_mode": model.mask_mode,
        "codebook": {"n": model.codebook.n, "seed": model.codebook.seed},
        "schedule": {"T": model.schedule.T,
                     "beta_start": float(model.schedule.beta[0]),
                     "beta_end": float(model.schedule.beta[-1])},
        "denoiser": {
            "base_channels": net_cfg.base_channels,
            "channel_multipliers": list(net_cfg.channel_multipliers),
            "blocks_per_level": net_cfg.blocks_per_level,
            "time_embed_dim": net_cfg.time_embed_dim,
            "illum_embed_dim": net_cfg.illum_embed_dim,
            "in_channels": net_cfg.in_channels,
            "out_channels": net_cfg.out_channels,
            "attention": net_cfg.attention,
        },
        "train_config": _json_safe(model.train_config),
        "has_ema": model.ema_net is not None,
        "has_normalization": model.normalization is not None,
    }
    write_arrays(path, arrays, extra)


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    return obj


def _load_net(arrays: dict, prefix: str, cfg: DenoiserConfig) -> Denoiser:
    net = Denoiser(cfg)
    state = {}
    for name, tensor in net.state_dict().items():
        key = prefix + name
        if key not in arrays:
            raise StateError(f"checkpoint is missing array {key}")
        state[name] = torch.from_numpy(arrays[key].reshape(tensor.shape))
    net.load_state_dict(state)
    net.eval()
    return net


def load_checkpoint(path) -> EnhanceModel:
    manifest, arrays = read_arrays(path)
    if manifest.get("kind") != CHECKPOINT_KIND:
        raise StateError(f"{path} is not an enhancement-model checkpoint")
    d = manifest["denoiser"]
    cfg = DenoiserConfig(
        base_channels=d["base_channels"],
        channel_multipliers=tuple(d["channel_multipliers"]),
        blocks_per_level=d["blocks_per_level"],
        time_embed_dim=d["time_embed_dim"],
        illum_embed_dim=d["illum_embed_dim"],
        in_channels=d["in_channels"],
        out_channels=d["out_channels"],
        attention=d["attention"],
    )
    net = _load_net(arrays, "net.", cfg)
    ema_net = _load_net(arrays, "ema.", cfg) if manifest.get("has_ema") else None
    normalization = None
    if manifest.get("has_normalization"):
        normalization = (arrays["norm.mean"].astype(np.float64),
                         arrays["norm.std"].astype(np.float64))
    sched = manifest["schedule"]
    cb = manifest["codebook"]
    return EnhanceModel(
        net=net,
        schedule=diffusion.make_schedule(sched["T"], sched["beta_start"],
                                         sched["beta_end"]),
        codebook=build_codebook(cb["n"], cb["seed"]),
        mask_mode=manifest["mask_mode"],
        normalization=normalization,
        ema_net=ema_net,
        step=manifest["step"],
        train_config=manifest.get("train_config", {}),
    )


def evaluate(model: EnhanceModel, entries: list, steps: int = 50,
             guidance: float = 1.0, seed: int = 0,
             progress: Callable[[int, int], None] | None = None) -> MetricReport:
    """Enhance every pair at the ground truth's brightness and score it."""
    if not entries:
        raise DatasetError("nothing to evaluate")
    rows = []
    for i, entry in enumerate(entries):
        pair = load_pair(entry) if isinstance(entry, dict) else entry
        lam = extract_lambda(pair.normal)
        out, _ = model.enhance(pair.low, lam, s=guidance, steps=steps, seed=seed)
        rows.append({
            "id": pair.id,
            "psnr": psnr(out, pair.normal),
            "ssim": ssim_metric(out, pair.normal),
            "perceptual": perceptual_distance(out, pair.normal),
            "li_lpips": li_lpips(out, pair.normal),
        })
        if progress is not None:
            progress(i + 1, len(entries))
    return MetricReport(rows=rows, extractor_id="random-pyramid-seed0")
