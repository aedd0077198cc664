"""Pixel-level primitives: image I/O, color map, SNR map, blur, Canny edges.

Images are numpy float arrays in [0, 1] of shape (H, W, C) with C in {1, 3};
single-channel maps may also travel as (H, W). All functions are pure and
safe to call from multiple threads.
"""

from __future__ import annotations

import numpy as np
import scipy.ndimage
from PIL import Image as PILImage

from .errors import ArgumentError, FormatError

__all__ = [
    "load_image",
    "save_image",
    "save_edge_map",
    "color_map",
    "grayscale",
    "gaussian_blur",
    "snr_map",
    "canny",
]

# Rec.601 luma weights; the conditioning maps and the brightness loss share them.
GRAY_WEIGHTS = (0.299, 0.587, 0.114)

# Floor for the per-channel maximum in color_map, one 8-bit step. Keeps the
# normalization defined for black channels.
COLOR_MAP_FLOOR = 1.0 / 255.0

SNR_SIGMA = 3.0
SNR_EPS = 1e-4
SNR_MAX = 100.0


def load_image(path) -> np.ndarray:
    """Load an 8- or 16-bit PNG/JPEG as float RGB in [0, 1].

    Grayscale files are replicated to 3 channels. Alpha is dropped.
    """
    with PILImage.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif im.mode in ("L", "RGB", "RGBA", "LA", "P", "1"):
            arr = np.asarray(im.convert("RGB") if im.mode != "L" else im,
                             dtype=np.float64) / 255.0
        else:
            raise FormatError(f"unsupported image mode {im.mode!r} in {path}")
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    return np.clip(arr, 0.0, 1.0)


def save_image(img: np.ndarray, path) -> None:
    """Write an image as 8-bit PNG. Out-of-range or non-finite input is an error."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if not np.all(np.isfinite(arr)):
        raise ArgumentError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ArgumentError(
            f"image values outside [0,1] (min {arr.min():.4g}, max {arr.max():.4g})"
        )
    data = np.round(arr * 255.0).astype(np.uint8)
    if data.shape[2] == 1:
        PILImage.fromarray(data[:, :, 0], mode="L").save(path, format="PNG")
    else:
        PILImage.fromarray(data, mode="RGB").save(path, format="PNG")


def save_edge_map(edges: np.ndarray, path) -> None:
    """Write a boolean edge map as a 1-bit PNG (debugging aid)."""
    PILImage.fromarray(np.asarray(edges, dtype=bool)).save(path, format="PNG")


def color_map(x: np.ndarray) -> np.ndarray:
    """Per-channel max normalization C(x) = x / x_max.

    The per-channel maximum is clamped to at least 1/255 so all-black channels
    stay defined. Invariant to global positive scaling of the input, which is
    what the light-independent metric relies on.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != 3:
        raise ArgumentError(f"color_map expects an (H, W, 3) image, got {x.shape}")
    ch_max = np.maximum(x.max(axis=(0, 1)), COLOR_MAP_FLOOR)
    return x / ch_max


def grayscale(x: np.ndarray) -> np.ndarray:
    """Rec.601 luma, returned as (H, W)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x
    if x.shape[2] == 1:
        return x[:, :, 0]
    r, g, b = GRAY_WEIGHTS
    return r * x[:, :, 0] + g * x[:, :, 1] + b * x[:, :, 2]


def _gauss_kernel(sigma: float) -> np.ndarray:
    radius = int(np.ceil(3.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(x: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian convolution, kernel radius ceil(3*sigma), reflect padding.

    Linear in the input; for inputs in [0, 1] the output stays in [0, 1]
    because the normalized kernel forms a convex combination.
    """
    if sigma <= 0:
        raise ArgumentError(f"sigma must be > 0, got {sigma}")
    x = np.asarray(x, dtype=np.float64)
    k = _gauss_kernel(sigma)
    # scipy's 'mirror' is edge-pixel-unrepeated reflection, i.e. np.pad 'reflect'.
    out = scipy.ndimage.convolve1d(x, k, axis=0, mode="mirror")
    out = scipy.ndimage.convolve1d(out, k, axis=1, mode="mirror")
    return out


def snr_map(x: np.ndarray, sigma: float = SNR_SIGMA, eps: float = SNR_EPS,
            s_max: float = SNR_MAX) -> np.ndarray:
    """Signal-to-noise prior S(x) = F(g) / |g - F(g) + eps| on the grayscale image.

    F is a Gaussian blur. The raw ratio is unbounded, so it is clamped to
    [0, s_max] and rescaled to [0, 1]. Returns (H, W).
    """
    if sigma <= 0:
        raise ArgumentError(f"sigma must be > 0, got {sigma}")
    if eps <= 0:
        raise ArgumentError(f"eps must be > 0, got {eps}")
    g = grayscale(x)
    f = gaussian_blur(g, sigma)
    s = f / np.abs(g - f + eps)
    return np.clip(s, 0.0, s_max) / s_max


_SOBEL_X = np.array([[-1.0, 0.0, 1.0],
                     [-2.0, 0.0, 2.0],
                     [-1.0, 0.0, 1.0]])


def canny(x: np.ndarray, low: float, high: float) -> np.ndarray:
    """Canny edge detection, returning a boolean (H, W) map.

    The input is taken to [0, 255] scale before thresholding so the usual
    8-bit threshold values apply. Pipeline: Gaussian smooth (sigma 1.4),
    Sobel gradients, 4-direction non-maximum suppression, double-threshold
    hysteresis (weak pixels survive when 8-connected to a strong pixel).
    """
    if not 0 <= low < high:
        raise ArgumentError(f"need 0 <= low < high, got low={low} high={high}")
    g = grayscale(np.asarray(x, dtype=np.float64)) * 255.0
    g = gaussian_blur(g, 1.4)

    gx = scipy.ndimage.convolve(g, _SOBEL_X, mode="mirror")
    gy = scipy.ndimage.convolve(g, _SOBEL_X.T, mode="mirror")
    mag = np.hypot(gx, gy)

    # Quantize gradient direction to 0/45/90/135 degrees and keep pixels that
    # are >= both neighbours along the gradient line.
    angle = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    bins = np.zeros(angle.shape, dtype=np.int8)
    bins[(angle >= 22.5) & (angle < 67.5)] = 1
    bins[(angle >= 67.5) & (angle < 112.5)] = 2
    bins[(angle >= 112.5) & (angle < 157.5)] = 3

    padded = np.pad(mag, 1, mode="constant")
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    nms = np.zeros_like(mag, dtype=bool)
    for b, (dy, dx) in offsets.items():
        sel = bins == b
        n1 = padded[1 + dy:1 + dy + mag.shape[0], 1 + dx:1 + dx + mag.shape[1]]
        n2 = padded[1 - dy:1 - dy + mag.shape[0], 1 - dx:1 - dx + mag.shape[1]]
        nms |= sel & (mag >= n1) & (mag >= n2)

    weak = nms & (mag >= low)
    strong = nms & (mag >= high)
    if not strong.any():
        return np.zeros(mag.shape, dtype=bool)
    labels, n = scipy.ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    keep = np.zeros(n + 1, dtype=bool)
    keep[np.unique(labels[strong])] = True
    keep[0] = False
    return keep[labels]
