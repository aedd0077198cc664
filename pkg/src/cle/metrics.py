"""Evaluation metrics: PSNR, SSIM, perceptual distance, light-independent
perceptual distance, and the brightness-sweep analyzer.

All metrics are pure functions of numpy images in [0, 1]. The perceptual
distance runs the same frozen feature pyramid as the training loss; reports
carry the extractor identity because absolute values are only comparable
within one extractor.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
import torch

from . import losses
from .errors import ArgumentError
from .imaging import canny, color_map

__all__ = [
    "psnr",
    "ssim_metric",
    "perceptual_distance",
    "li_lpips",
    "default_extractor",
    "gamma_enhancer",
    "classify_curve",
    "brightness_sweep",
    "SweepReport",
    "MetricReport",
]

PSNR_CAP_DB = 100.0
PSNR_CAP_MSE = 1e-10
CANNY_LOW = 50.0
CANNY_HIGH = 250.0

_default_extractor: losses.FeatureExtractor | None = None


def default_extractor() -> losses.FeatureExtractor:
    global _default_extractor
    if _default_extractor is None:
        _default_extractor = losses.FeatureExtractor(seed=0)
    return _default_extractor


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ArgumentError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) for [0,1] images, capped at 100 dB for MSE < 1e-10."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < PSNR_CAP_MSE:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(1.0 / mse))


def _to_torch(img: np.ndarray) -> torch.Tensor:
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return torch.from_numpy(arr.transpose(2, 0, 1))[None]


def ssim_metric(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _check_pair(a, b)
    with torch.no_grad():
        return float(losses.ssim_value(_to_torch(a).double(), _to_torch(b).double()))


def perceptual_distance(a: np.ndarray, b: np.ndarray,
                        extractor: losses.FeatureExtractor | None = None) -> float:
    """Frozen-pyramid feature distance; identical inputs give exactly 0."""
    a, b = _check_pair(a, b)
    if extractor is None:
        extractor = default_extractor()
    with torch.no_grad():
        return float(losses._perceptual(_to_torch(a), _to_torch(b), extractor,
                                        sqrt_eps=0.0))


def li_lpips(a: np.ndarray, b: np.ndarray,
             extractor: losses.FeatureExtractor | None = None) -> float:
    """Perceptual distance between Canny edge maps of color-map-normalized inputs.

    Because the color map cancels global positive scaling, uniformly dimmed
    copies of an image produce identical edge maps and a distance of exactly 0.
    Edge maps enter the extractor as 3-channel {0,1} rasters.
    """
    a, b = _check_pair(a, b)
    edges = []
    for img in (a, b):
        e = canny(color_map(img), CANNY_LOW, CANNY_HIGH).astype(np.float64)
        edges.append(np.repeat(e[:, :, None], 3, axis=2))
    return perceptual_distance(edges[0], edges[1], extractor)


def gamma_enhancer(x: np.ndarray, lam: float) -> np.ndarray:
    """Exposure-curve stand-in enhancer: solve x**g for mean brightness lam.

    Metric-only studies use this in place of a trained sampler. Bisection on
    the exponent; degenerate inputs (all black/white) return unchanged.
    """
    if not 0.0 < lam < 1.0:
        raise ArgumentError(f"target brightness must lie in (0,1), got {lam}")
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    if x.max() <= 0.0 or x.min() >= 1.0:
        return x
    lo, hi = 1e-3, 1e3
    if not np.mean(x ** lo) >= lam >= np.mean(x ** hi):
        return np.clip(x ** (lo if np.mean(x ** lo) < lam else hi), 0.0, 1.0)
    for _ in range(80):
        mid = np.sqrt(lo * hi)
        if np.mean(x ** mid) > lam:
            lo = mid
        else:
            hi = mid
    return np.clip(x ** np.sqrt(lo * hi), 0.0, 1.0)


def classify_curve(values, tol: float = 1e-4) -> str:
    """Classify a 1-D curve: flat, monotone, inverted-V, V, or irregular.

    Differences within +-tol count as flat. Inverted-V means strictly rising
    then strictly falling (unimodal, interior peak); V is the mirror image.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size < 3:
        raise ArgumentError("need at least 3 points to classify a curve")
    d = np.diff(v)
    signs = [int(np.sign(x)) for x in d if abs(x) > tol]
    if not signs:
        return "flat"
    if all(s > 0 for s in signs) or all(s < 0 for s in signs):
        return "monotone"
    flips = [i for i in range(1, len(signs)) if signs[i] != signs[i - 1]]
    if len(flips) == 1:
        return "inverted-V" if signs[0] > 0 else "V"
    return "irregular"


@dataclass
class SweepReport:
    lambdas: list[float]
    brightness: list[float]              # measured mean brightness per output
    curves: dict[str, list[float]]
    ranges: dict[str, float] = field(default_factory=dict)
    shapes: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for name, curve in self.curves.items():
            self.ranges[name] = float(max(curve) - min(curve))
            self.shapes[name] = classify_curve(curve)

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump({"lambdas": self.lambdas, "brightness": self.brightness,
                       "curves": self.curves, "ranges": self.ranges,
                       "shapes": self.shapes}, f, indent=2)


def brightness_sweep(reference: np.ndarray, input_img: np.ndarray, lambdas,
                     enhancer, extractor: losses.FeatureExtractor | None = None
                     ) -> SweepReport:
    """Evaluate all four metrics against the reference across a brightness sweep.

    ``enhancer(image, lam)`` may be the trained sampler or the gamma stand-in.
    """
    lambdas = [float(v) for v in lambdas]
    if len(lambdas) < 3:
        raise ArgumentError(f"need at least 3 brightness levels, got {len(lambdas)}")
    if any(b <= a for a, b in zip(lambdas, lambdas[1:])):
        raise ArgumentError("brightness levels must be strictly increasing")
    if extractor is None:
        extractor = default_extractor()
    curves = {"psnr": [], "ssim": [], "perceptual": [], "li_lpips": []}
    measured = []
    for lam in lambdas:
        out = enhancer(input_img, lam)
        measured.append(float(np.mean(out)))
        curves["psnr"].append(psnr(out, reference))
        curves["ssim"].append(ssim_metric(out, reference))
        curves["perceptual"].append(perceptual_distance(out, reference, extractor))
        curves["li_lpips"].append(li_lpips(out, reference, extractor))
    return SweepReport(lambdas=lambdas, brightness=measured, curves=curves)


@dataclass
class MetricReport:
    rows: list[dict]
    extractor_id: str

    @property
    def aggregate(self) -> dict:
        keys = ("psnr", "ssim", "perceptual", "li_lpips")
        return {k: float(np.mean([r[k] for r in self.rows])) for k in keys}

    def to_csv(self, path) -> None:
        cols = ["id", "psnr", "ssim", "perceptual", "li_lpips"]
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=cols)
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: row[k] for k in cols})
            agg = dict(self.aggregate, id="mean")
            writer.writerow(agg)

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump({"rows": self.rows, "aggregate": self.aggregate,
                       "extractor": self.extractor_id}, f, indent=2)
