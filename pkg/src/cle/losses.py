"""Training objective: noise MSE plus brightness, color, SSIM, perceptual terms.

All losses take torch tensors shaped (B, 3, H, W) (a leading batch dim is
optional) with values in [0, 1] for the image-space terms, and return scalar
tensors that support autograd. The perceptual term runs on a frozen
fixed-seed convolutional pyramid so no pretrained weights are required.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ._container import read_arrays
from .errors import ArgumentError, NumericError
from .imaging import GRAY_WEIGHTS

__all__ = [
    "LossWeights",
    "LossComponents",
    "FeatureExtractor",
    "simple_loss",
    "brightness_loss",
    "color_angle_loss",
    "ssim_loss",
    "ssim_value",
    "perceptual_loss",
    "total_aux_loss",
]

COS_CEILING = 1.0 - 1e-12
COLOR_EPS = 1e-6
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass(frozen=True)
class LossWeights:
    w_br: float = 20.0
    w_col: float = 100.0
    w_ssim: float = 2.83
    w_lpips: float = 50.0

    def validate(self) -> None:
        for name in ("w_br", "w_col", "w_ssim", "w_lpips"):
            if getattr(self, name) < 0:
                raise ArgumentError(f"{name} must be >= 0")


@dataclass
class LossComponents:
    simple: torch.Tensor
    brightness: torch.Tensor
    color: torch.Tensor
    ssim: torch.Tensor
    perceptual: torch.Tensor


def _batched(x: torch.Tensor) -> torch.Tensor:
    if x.ndim == 3:
        return x[None]
    if x.ndim == 4:
        return x
    raise ArgumentError(f"expected (B,3,H,W) or (3,H,W), got shape {tuple(x.shape)}")


def _pair(a: torch.Tensor, b: torch.Tensor):
    a, b = _batched(a), _batched(b)
    if a.shape != b.shape:
        raise ArgumentError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return a, b


def simple_loss(eps: torch.Tensor, eps_hat: torch.Tensor) -> torch.Tensor:
    """Mean squared error between true and predicted noise."""
    if eps.shape != eps_hat.shape:
        raise ArgumentError(f"shape mismatch {tuple(eps.shape)} vs {tuple(eps_hat.shape)}")
    return ((eps - eps_hat) ** 2).mean()


def _gray(x: torch.Tensor) -> torch.Tensor:
    w = torch.tensor(GRAY_WEIGHTS, dtype=x.dtype, device=x.device)
    return (x * w[None, :, None, None]).sum(dim=1)


def brightness_loss(y0_hat: torch.Tensor, y: torch.Tensor,
                    weights: torch.Tensor | None = None) -> torch.Tensor:
    """Mean absolute difference of the two grayscales.

    ``weights`` (per sample, optional) rebalances the batch mean; the result
    is normalized by the weight mean so the magnitude stays comparable to the
    unweighted form and one w_br setting serves both.
    """
    a, b = _pair(y0_hat, y)
    diff = (_gray(a) - _gray(b)).abs()
    if weights is None:
        return diff.mean()
    w = weights.reshape(-1, *([1] * (diff.dim() - 1)))
    return (diff * w).mean() / (w.mean() + 1e-12)


def color_angle_loss(y0_hat: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean angle (radians) between per-pixel RGB vectors.

    Computed in double precision with a guarded cosine
    (dot + eps) / (|a||b| + eps) so identical pixels and zero-zero pixels both
    contribute a zero angle, and a ceiling just under 1 keeps acos
    differentiable.
    """
    a, b = _pair(y0_hat, y)
    a = a.double()
    b = b.double()
    dot = (a * b).sum(dim=1)
    norms = a.norm(dim=1) * b.norm(dim=1)
    cos = (dot + COLOR_EPS) / (norms + COLOR_EPS)
    cos = cos.clamp(-1.0, COS_CEILING)
    return torch.acos(cos).mean()


def _ssim_window(dtype, device) -> torch.Tensor:
    t = torch.arange(SSIM_WINDOW, dtype=torch.float64) - (SSIM_WINDOW - 1) / 2
    k = torch.exp(-(t * t) / (2 * SSIM_SIGMA ** 2))
    k = k / k.sum()
    return (k[:, None] * k[None, :]).to(dtype=dtype, device=device)


def ssim_value(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean local SSIM over an 11x11 Gaussian window (sigma 1.5), L=1."""
    a, b = _pair(a, b)
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ArgumentError(
            f"image {tuple(a.shape[-2:])} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    c = a.shape[1]
    win = _ssim_window(a.dtype, a.device).expand(c, 1, -1, -1)

    mu_a = F.conv2d(a, win, groups=c)
    mu_b = F.conv2d(b, win, groups=c)
    var_a = F.conv2d(a * a, win, groups=c) - mu_a ** 2
    var_b = F.conv2d(b * b, win, groups=c) - mu_b ** 2
    cov = F.conv2d(a * b, win, groups=c) - mu_a * mu_b

    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return (num / den).mean()


def ssim_loss(y0_hat: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """1 - mean SSIM; the similarity itself is what the metric module reports."""
    return 1.0 - ssim_value(y0_hat, y)


class FeatureExtractor(nn.Module):
    """Frozen 5-stage strided conv pyramid used as a perceptual feature proxy.

    Weights come from a fixed seed by default; ``from_file`` loads externally
    supplied weights from the same container format the trainer checkpoints
    use (arrays named conv0.weight, conv0.bias, ...).
    """

    CHANNELS = (3, 16, 32, 64, 96, 128)

    def __init__(self, seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.seed = seed
        self.convs = nn.ModuleList(
            nn.Conv2d(cin, cout, 3, stride=2, padding=1)
            for cin, cout in zip(self.CHANNELS[:-1], self.CHANNELS[1:]))
        self.act = nn.LeakyReLU(0.2)
        self.requires_grad_(False)
        self.eval()

    @classmethod
    def from_file(cls, path) -> "FeatureExtractor":
        _, arrays = read_arrays(path)
        inst = cls(seed=0)
        with torch.no_grad():
            for i, conv in enumerate(inst.convs):
                conv.weight.copy_(torch.from_numpy(arrays[f"conv{i}.weight"]
                                                   .reshape(conv.weight.shape)))
                conv.bias.copy_(torch.from_numpy(arrays[f"conv{i}.bias"]
                                                 .reshape(conv.bias.shape)))
        return inst

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        h = x * 2.0 - 1.0
        feats = []
        for conv in self.convs:
            weight = conv.weight.to(h.dtype)
            bias = conv.bias.to(h.dtype)
            h = self.act(F.conv2d(h, weight, bias, stride=2, padding=1))
            feats.append(h)
        return feats


def _perceptual(a: torch.Tensor, b: torch.Tensor, extractor: FeatureExtractor,
                sqrt_eps: float) -> torch.Tensor:
    a, b = _pair(a, b)
    total = None
    for fa, fb in zip(extractor(a), extractor(b)):
        na = fa / (fa.norm(dim=1, keepdim=True) + 1e-10)
        nb = fb / (fb.norm(dim=1, keepdim=True) + 1e-10)
        sq = ((na - nb) ** 2).sum(dim=1)
        dist = torch.sqrt(sq + sqrt_eps) if sqrt_eps else torch.sqrt(sq)
        layer = dist.mean()
        total = layer if total is None else total + layer
    return total


def perceptual_loss(y0_hat: torch.Tensor, y: torch.Tensor,
                    extractor: FeatureExtractor) -> torch.Tensor:
    """Per-position L2 between unit-normalized features, meaned, layer-summed.

    A tiny constant inside the square root keeps the gradient finite when the
    feature difference vanishes; it perturbs the value by well under 1e-6.
    The metric module evaluates the same expression without the constant.
    """
    return _perceptual(y0_hat, y, extractor, sqrt_eps=1e-16)


def total_aux_loss(components: LossComponents,
                   weights: LossWeights = LossWeights()) -> torch.Tensor:
    """simple + w_br*brightness + w_col*color + w_ssim*ssim + w_lpips*perceptual."""
    weights.validate()
    parts = {
        "simple": components.simple,
        "brightness": components.brightness,
        "color": components.color,
        "ssim": components.ssim,
        "perceptual": components.perceptual,
    }
    for name, value in parts.items():
        scalar = float(value.detach() if torch.is_tensor(value) else value)
        if not np.isfinite(scalar):
            raise NumericError(f"{name} loss is non-finite: {scalar}")
    return (components.simple
            + weights.w_br * components.brightness
            + weights.w_col * components.color
            + weights.w_ssim * components.ssim
            + weights.w_lpips * components.perceptual)
