"""Brightness conditioning: illumination codebook, FiLM, masks, bundles, dropout.

The brightness level lives in [0, 1] and is encoded by interpolating columns
of a seeded random orthogonal matrix. The unconditional pathway for guidance
zeroes only this embedding; image-derived channels always stay attached.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import ArgumentError
from .imaging import color_map, gaussian_blur, snr_map

__all__ = [
    "IlluminationCodebook",
    "IlluminationEmbedding",
    "build_codebook",
    "illum_embedding",
    "zero_embedding",
    "FilmParams",
    "apply_film",
    "MaskParams",
    "synth_mask",
    "blend_target",
    "ConditionBundle",
    "assemble_condition",
    "dropout_condition",
]

ANCHOR_SNAP = 1e-9


@dataclass(frozen=True)
class IlluminationCodebook:
    matrix: np.ndarray      # n x n, orthonormal columns
    anchors: np.ndarray     # n uniformly spaced values in [0, 1]
    seed: int

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class IlluminationEmbedding:
    vector: np.ndarray
    lam: float | None       # None marks the unconditional (zero) embedding


def build_codebook(n: int = 64, seed: int = 0) -> IlluminationCodebook:
    """Random orthogonal matrix via QR of a seeded normal draw, sign-fixed.

    Sign fixing (positive R diagonal) makes the decomposition unique, so the
    matrix is a pure function of (n, seed).
    """
    if n < 2:
        raise ArgumentError(f"codebook size must be >= 2, got {n}")
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    q = q * np.sign(np.diag(r))
    return IlluminationCodebook(matrix=q, anchors=np.linspace(0.0, 1.0, n), seed=seed)


def illum_embedding(lam: float, codebook: IlluminationCodebook) -> IlluminationEmbedding:
    """Encode a brightness level as a codebook column or a blend of two.

    Anchor values map to their column exactly; interior values linearly
    interpolate the two bracketing columns, so the norm dips to sqrt(2)/2 at
    segment midpoints and returns to 1 at anchors.
    """
    if not 0.0 <= lam <= 1.0:
        raise ArgumentError(f"lambda must lie in [0,1], got {lam}")
    n = codebook.n
    pos = lam * (n - 1)
    nearest = int(round(pos))
    if abs(pos - nearest) < ANCHOR_SNAP:
        return IlluminationEmbedding(vector=codebook.matrix[:, nearest].copy(), lam=lam)
    d = int(np.floor(pos))
    w = pos - d
    vec = (1.0 - w) * codebook.matrix[:, d] + w * codebook.matrix[:, d + 1]
    return IlluminationEmbedding(vector=vec, lam=lam)


def zero_embedding(n: int) -> IlluminationEmbedding:
    if n < 2:
        raise ArgumentError(f"embedding size must be >= 2, got {n}")
    return IlluminationEmbedding(vector=np.zeros(n), lam=None)


class FilmParams(nn.Module):
    """Projects an illumination embedding to per-channel (gamma, beta).

    Two-layer perceptron n -> 4n -> 2C. The final layer starts at zero weight
    with bias (1,...,1, 0,...,0), so modulation is the identity at init no
    matter what embedding comes in.
    """

    def __init__(self, n: int, channels: int):
        super().__init__()
        self.n = n
        self.channels = channels
        self.hidden = nn.Linear(n, 4 * n)
        self.act = nn.SiLU()
        self.out = nn.Linear(4 * n, 2 * channels)
        with torch.no_grad():
            self.out.weight.zero_()
            self.out.bias[:channels] = 1.0
            self.out.bias[channels:] = 0.0

    def forward(self, embedding: torch.Tensor) -> torch.Tensor:
        return self.out(self.act(self.hidden(embedding)))


def apply_film(feature: torch.Tensor, embedding: torch.Tensor,
               params: FilmParams) -> torch.Tensor:
    """out[c] = feature[c] * gamma[c] + beta[c], broadcast over space."""
    if feature.shape[1] != params.channels:
        raise ArgumentError(
            f"feature has {feature.shape[1]} channels, params expect {params.channels}")
    if embedding.shape[-1] != params.n:
        raise ArgumentError(
            f"embedding dim {embedding.shape[-1]} does not match codebook n={params.n}")
    gamma_beta = params(embedding)
    gamma, beta = gamma_beta.chunk(2, dim=-1)
    return feature * gamma[:, :, None, None] + beta[:, :, None, None]


@dataclass(frozen=True)
class MaskParams:
    strokes: tuple[int, int] = (1, 4)
    width: tuple[float, float] = (8.0, 48.0)    # pixels at a 128-wide canvas
    vertices: tuple[int, int] = (4, 12)
    feather: tuple[float, float] = (0.0, 4.0)
    coverage: tuple[float, float] = (0.05, 0.5)
    size: tuple[int, int] = (128, 128)


MASK_ATTEMPTS = 20


def _raster_strokes(rng: np.random.Generator, p: MaskParams) -> np.ndarray:
    h, w = p.size
    scale = min(h, w) / 128.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    mask = np.zeros((h, w), dtype=bool)
    n_strokes = rng.integers(p.strokes[0], p.strokes[1] + 1)
    for _ in range(n_strokes):
        n_vert = rng.integers(p.vertices[0], p.vertices[1] + 1)
        width = rng.uniform(*p.width) * scale
        pt = np.array([rng.uniform(0, h), rng.uniform(0, w)])
        pts = [pt]
        for _ in range(n_vert - 1):
            ang = rng.uniform(0, 2 * np.pi)
            step = rng.uniform(min(h, w) / 8, min(h, w) / 3)
            pt = pt + step * np.array([np.sin(ang), np.cos(ang)])
            pt = np.clip(pt, [0, 0], [h - 1, w - 1])
            pts.append(pt)
        for a, b in zip(pts[:-1], pts[1:]):
            d = b - a
            len2 = float(d @ d)
            if len2 == 0:
                dist2 = (yy - a[0]) ** 2 + (xx - a[1]) ** 2
            else:
                t = ((yy - a[0]) * d[0] + (xx - a[1]) * d[1]) / len2
                t = np.clip(t, 0.0, 1.0)
                dist2 = (yy - (a[0] + t * d[0])) ** 2 + (xx - (a[1] + t * d[1])) ** 2
            mask |= dist2 <= (width / 2.0) ** 2
    return mask


def synth_mask(seed: int, params: MaskParams = MaskParams()) -> np.ndarray:
    """Free-form brush-stroke mask, feathered, with bounded coverage.

    Coverage is measured on the binary raster before feathering; the stroke
    set is resampled until it lands inside the configured bounds.
    """
    lo, hi = params.coverage
    if not 0.0 < lo < hi < 1.0:
        raise ArgumentError(f"impossible coverage bounds ({lo}, {hi})")
    rng = np.random.default_rng(seed)
    for _ in range(MASK_ATTEMPTS):
        binary = _raster_strokes(rng, params)
        cov = binary.mean()
        if lo <= cov <= hi:
            sigma = rng.uniform(*params.feather)
            out = binary.astype(np.float64)
            if sigma > 0:
                out = np.clip(gaussian_blur(out, sigma), 0.0, 1.0)
            return out
    raise ArgumentError(
        f"no stroke set reached coverage in [{lo}, {hi}] after {MASK_ATTEMPTS} attempts")


def blend_target(x: np.ndarray, y: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Region-limited target M*y + (1-M)*x."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if x.shape != y.shape:
        raise ArgumentError(f"image shapes differ: {x.shape} vs {y.shape}")
    if m.ndim == 2:
        m = m[:, :, None]
    if m.shape[:2] != x.shape[:2] or m.shape[2] not in (1, x.shape[2]):
        raise ArgumentError(f"mask shape {mask.shape} does not align with {x.shape}")
    return m * y + (1.0 - m) * x


@dataclass
class ConditionBundle:
    """Everything the denoiser sees besides y_t and the embedding.

    Channel stack order is fixed: [y_t(3) | x(3) | cmap(3) | snr(1) | mask(1)],
    with the mask slot present only for mask-mode models. Image-valued
    channels (x, cmap) are mapped to [-1, 1] like y_t; snr and mask stay in
    [0, 1].
    """

    x: np.ndarray
    cmap: np.ndarray
    snr: np.ndarray
    mask: np.ndarray | None = None
    _fixed: torch.Tensor | None = field(default=None, repr=False, compare=False)

    def channels(self) -> int:
        return 11 if self.mask is not None else 10

    def fixed_tensor(self) -> torch.Tensor:
        """The non-y_t channels as a cached (1, 7|8, H, W) float32 tensor."""
        if self._fixed is None:
            parts = [
                self.x * 2.0 - 1.0,
                self.cmap * 2.0 - 1.0,
                self.snr[:, :, None],
            ]
            if self.mask is not None:
                parts.append(self.mask[:, :, None])
            stacked = np.concatenate(parts, axis=2).astype(np.float32)
            self._fixed = torch.from_numpy(stacked.transpose(2, 0, 1))[None]
        return self._fixed

    def stack(self, y_t: torch.Tensor, norm=None) -> torch.Tensor:
        """Concatenate y_t with the fixed channels, broadcasting over batch.

        ``norm`` optionally holds per-channel (mean, std) for the fixed
        channels, applied after the base mapping.
        """
        fixed = self.fixed_tensor().to(y_t.dtype)
        if norm is not None:
            mean, std = norm
            mean = torch.as_tensor(mean, dtype=y_t.dtype).reshape(1, -1, 1, 1)
            std = torch.as_tensor(std, dtype=y_t.dtype).reshape(1, -1, 1, 1)
            fixed = (fixed - mean) / std
        if fixed.shape[-2:] != y_t.shape[-2:]:
            raise ArgumentError(
                f"y_t spatial shape {tuple(y_t.shape[-2:])} does not match "
                f"bundle {tuple(fixed.shape[-2:])}")
        return torch.cat([y_t, fixed.expand(y_t.shape[0], -1, -1, -1)], dim=1)


def assemble_condition(x: np.ndarray, mask: np.ndarray | None = None) -> ConditionBundle:
    """Build the condition bundle: color map, SNR map, optional mask."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != 3:
        raise ArgumentError(f"expected (H, W, 3) image, got {x.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.ndim == 3 and mask.shape[2] == 1:
            mask = mask[:, :, 0]
        if mask.shape != x.shape[:2]:
            raise ArgumentError(
                f"mask shape {mask.shape} does not match image {x.shape[:2]}")
        if mask.min() < 0 or mask.max() > 1:
            raise ArgumentError("mask values must lie in [0,1]")
    return ConditionBundle(x=x, cmap=color_map(x), snr=snr_map(x), mask=mask)


def dropout_condition(embedding: IlluminationEmbedding, p: float,
                      rng: np.random.Generator) -> IlluminationEmbedding:
    """With probability p, replace the embedding by the zero embedding."""
    if not 0.0 <= p <= 1.0:
        raise ArgumentError(f"dropout probability must lie in [0,1], got {p}")
    if rng.random() < p:
        return zero_embedding(len(embedding.vector))
    return embedding
