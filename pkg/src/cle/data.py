"""Datasets: paired-folder ingestion, synthetic pair generation, augmentation.

Synthetic scenes (gradient backgrounds, random shapes, soft texture) stand in
for real paired data at desk scale: the normal-light image is rendered
noise-free at a randomly chosen mean brightness, and the low-light twin is a
gamma-crushed, gain-darkened, noise-corrupted copy.
"""

from __future__ import annotations

import queue
import threading
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .conditioning import MaskParams, assemble_condition, blend_target, synth_mask
from .errors import ArgumentError, DatasetError
from .imaging import gaussian_blur, load_image, save_image
from .metrics import gamma_enhancer

__all__ = [
    "PairedSample",
    "SynthConfig",
    "DatasetScan",
    "scan_paired_dataset",
    "load_pair",
    "synth_pair",
    "make_synth_dataset",
    "augment",
    "extract_lambda",
    "with_mask",
    "TrainBatch",
    "batch_stream",
    "Prefetcher",
]


@dataclass
class PairedSample:
    low: np.ndarray
    normal: np.ndarray
    id: str
    mask: np.ndarray | None = None
    blended_target: np.ndarray | None = None


@dataclass(frozen=True)
class SynthConfig:
    gamma: tuple[float, float] = (2.0, 5.0)
    gain: tuple[float, float] = (0.1, 0.5)
    noise: tuple[float, float] = (0.01, 0.05)
    size: tuple[int, int] = (128, 128)
    shapes: tuple[int, int] = (3, 8)
    texture_amp: float = 0.08
    brightness: tuple[float, float] = (0.03, 0.95)

    def validate(self) -> None:
        for name in ("gamma", "gain", "noise", "shapes", "brightness"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ArgumentError(f"{name} range ({lo}, {hi}) must be ordered and >= 0")


@dataclass(frozen=True)
class DatasetScan:
    pairs: list[dict]       # {"id", "low", "normal"} path entries
    excluded: list[str]


def scan_paired_dataset(root) -> DatasetScan:
    """Match low/ and high/ files by identical filename, lexicographic order.

    A root containing manifest.json instead uses its explicit
    [{"id","low","normal"}] entries. Unmatched files are reported, not fatal;
    an empty intersection is.
    """
    root = Path(root)
    manifest = root / "manifest.json"
    if manifest.exists():
        import json
        entries = json.loads(manifest.read_text())
        pairs = [{"id": e["id"], "low": str(root / e["low"]),
                  "normal": str(root / e["normal"])} for e in entries]
        if not pairs:
            raise DatasetError(f"{manifest} lists no pairs")
        return DatasetScan(pairs=pairs, excluded=[])
    low_dir, high_dir = root / "low", root / "high"
    if not low_dir.is_dir() or not high_dir.is_dir():
        raise DatasetError(f"{root} must contain low/ and high/ directories")
    low = {p.name: p for p in low_dir.iterdir() if p.is_file()}
    high = {p.name: p for p in high_dir.iterdir() if p.is_file()}
    names = sorted(low.keys() & high.keys())
    excluded = sorted(low.keys() ^ high.keys())
    if not names:
        raise DatasetError(f"{root}: no filename appears in both low/ and high/")
    pairs = [{"id": n, "low": str(low[n]), "normal": str(high[n])} for n in names]
    return DatasetScan(pairs=pairs, excluded=excluded)


def load_pair(entry: dict) -> PairedSample:
    return PairedSample(low=load_image(entry["low"]),
                        normal=load_image(entry["normal"]), id=entry["id"])


def _render_scene(rng: np.random.Generator, config: SynthConfig) -> np.ndarray:
    h, w = config.size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy /= max(h - 1, 1)
    xx /= max(w - 1, 1)
    c0, c1 = rng.random(3), rng.random(3)
    ang = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(ang) * xx + np.sin(ang) * yy)
    ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-9)
    img = c0[None, None, :] + ramp[:, :, None] * (c1 - c0)[None, None, :]

    n_shapes = rng.integers(config.shapes[0], config.shapes[1] + 1)
    for _ in range(n_shapes):
        color = rng.random(3)
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(h / 12, h / 3), rng.uniform(w / 12, w / 3)
        if rng.random() < 0.5:
            inside = ((yy * (h - 1) - cy) / ry) ** 2 + ((xx * (w - 1) - cx) / rx) ** 2 <= 1.0
        else:
            inside = (np.abs(yy * (h - 1) - cy) <= ry) & (np.abs(xx * (w - 1) - cx) <= rx)
        img[inside] = color

    if config.texture_amp > 0:
        tex = gaussian_blur(rng.standard_normal((h, w)), 1.5)
        img += config.texture_amp * tex[:, :, None]
    return np.clip(img, 0.0, 1.0)


def synth_pair(seed: int, config: SynthConfig = SynthConfig()) -> PairedSample:
    """Procedural (low, normal) pair, deterministic per seed."""
    config.validate()
    rng = np.random.default_rng(seed)
    scene = _render_scene(rng, config)
    target_b = rng.uniform(*config.brightness)
    normal = gamma_enhancer(scene, target_b)

    gamma = rng.uniform(*config.gamma)
    gain = rng.uniform(*config.gain)
    sigma = rng.uniform(*config.noise)
    base = np.clip(gain * normal ** gamma, 0.0, 1.0)
    noise = rng.normal(0.0, sigma, normal.shape) if sigma > 0 else 0.0
    low = np.clip(base + noise, 0.0, 1.0)
    return PairedSample(low=low, normal=normal, id=f"synth-{seed:06d}")


def make_synth_dataset(out_dir, count: int, seed: int,
                       config: SynthConfig = SynthConfig()) -> DatasetScan:
    """Write count synthetic pairs in the low/ high/ layout and rescan."""
    out = Path(out_dir)
    (out / "low").mkdir(parents=True, exist_ok=True)
    (out / "high").mkdir(parents=True, exist_ok=True)
    for i in range(count):
        pair = synth_pair(seed + i, config)
        name = f"{pair.id}.png"
        save_image(pair.low, out / "low" / name)
        save_image(pair.normal, out / "high" / name)
    return scan_paired_dataset(out)


def augment(pair: PairedSample, seed: int, crop: int) -> PairedSample:
    """Shared random crop and flips across low/normal/mask/blended images."""
    h, w = pair.low.shape[:2]
    if h < crop or w < crop:
        raise ArgumentError(f"image {h}x{w} smaller than crop {crop}")
    rng = np.random.default_rng(seed)
    top = int(rng.integers(0, h - crop + 1))
    left = int(rng.integers(0, w - crop + 1))
    hflip = bool(rng.random() < 0.5)
    vflip = bool(rng.random() < 0.5)

    def tf(img):
        if img is None:
            return None
        out = img[top:top + crop, left:left + crop]
        if hflip:
            out = out[:, ::-1]
        if vflip:
            out = out[::-1, :]
        return np.ascontiguousarray(out)

    return replace(pair, low=tf(pair.low), normal=tf(pair.normal),
                   mask=tf(pair.mask), blended_target=tf(pair.blended_target))


def extract_lambda(y: np.ndarray) -> float:
    """Brightness level of an image: mean over all pixels and channels."""
    return float(np.mean(y))


def with_mask(pair: PairedSample, rng: np.random.Generator,
              params: MaskParams | None = None) -> PairedSample:
    """Attach mask-mode training fields.

    Half the time a synthetic free-form mask with a blended target; otherwise
    a full mask with the normal image, so the model also learns global
    enhancement.
    """
    h, w = pair.low.shape[:2]
    if params is None:
        params = MaskParams(size=(h, w))
    elif params.size != (h, w):
        params = replace(params, size=(h, w))
    if rng.random() < 0.5:
        mask = synth_mask(int(rng.integers(2 ** 31)), params)
        blended = blend_target(pair.low, pair.normal, mask)
    else:
        mask = np.ones((h, w), dtype=np.float64)
        blended = pair.normal
    return replace(pair, mask=mask, blended_target=blended)


@dataclass
class TrainBatch:
    target: torch.Tensor        # (B,3,h,w) float32 in [0,1]; blended in mask mode
    fixed: torch.Tensor         # (B,7|8,h,w) conditioning channels
    lam: np.ndarray             # (B,) float64 brightness of each target crop
    ids: list[str]


def batch_stream(pairs: list[PairedSample], batch_size: int, crop: int,
                 seed: int, mask_mode: bool = False,
                 mask_params: MaskParams | None = None):
    """Endless deterministic batch generator over in-memory pairs."""
    if not pairs:
        raise DatasetError("no training pairs")
    rng = np.random.default_rng(seed)
    while True:
        targets, fixeds, lams, ids = [], [], [], []
        for _ in range(batch_size):
            pair = pairs[int(rng.integers(len(pairs)))]
            if mask_mode:
                pair = with_mask(pair, rng, mask_params)
            pair = augment(pair, int(rng.integers(2 ** 31)), crop)
            target = pair.blended_target if mask_mode else pair.normal
            bundle = assemble_condition(pair.low, pair.mask if mask_mode else None)
            fixeds.append(bundle.fixed_tensor()[0])
            targets.append(torch.from_numpy(
                target.transpose(2, 0, 1).astype(np.float32)))
            lams.append(extract_lambda(target))
            ids.append(pair.id)
        yield TrainBatch(target=torch.stack(targets), fixed=torch.stack(fixeds),
                         lam=np.array(lams), ids=ids)


class Prefetcher:
    """Background-thread prefetch over any iterator, bounded queue."""

    def __init__(self, source, depth: int = 4):
        self._queue: queue.Queue = queue.Queue(maxsize=depth)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, args=(source,), daemon=True)
        self._thread.start()

    def _run(self, source):
        try:
            for item in source:
                while not self._stop.is_set():
                    try:
                        self._queue.put(item, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if self._stop.is_set():
                    return
        finally:
            self._queue.put(StopIteration)

    def __iter__(self):
        return self

    def __next__(self):
        item = self._queue.get()
        if item is StopIteration:
            raise StopIteration
        return item

    def close(self):
        self._stop.set()
        while True:
            try:
                self._queue.get_nowait()
            except queue.Empty:
                break
