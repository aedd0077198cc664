"""The noise-prediction U-Net with time embedding and brightness FiLM.

Residual blocks follow the usual norm -> act -> conv pattern with the time
projection added between the convolutions; the brightness modulation is
applied right after the second (time-conditioned) normalization. Downsampling
uses average pooling and upsampling nearest-neighbor interpolation, both of
which commute with horizontal flips.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .conditioning import FilmParams, apply_film
from .errors import ArgumentError

__all__ = ["DenoiserConfig", "Denoiser", "init_denoiser", "sinusoidal_embedding"]


@dataclass(frozen=True)
class DenoiserConfig:
    base_channels: int = 32
    channel_multipliers: tuple[int, ...] = (1, 2, 4)
    blocks_per_level: int = 2
    time_embed_dim: int = 128
    illum_embed_dim: int = 64
    in_channels: int = 10       # 10 global, 11 mask mode
    out_channels: int = 3
    attention: bool = True      # self-attention at the lowest resolution

    @property
    def levels(self) -> int:
        return len(self.channel_multipliers)

    def validate(self) -> None:
        if self.in_channels not in (10, 11):
            raise ArgumentError(f"in_channels must be 10 or 11, got {self.in_channels}")
        if self.out_channels != 3:
            raise ArgumentError(f"out_channels must be 3, got {self.out_channels}")
        if self.base_channels < 8 or self.base_channels % 8:
            raise ArgumentError("base_channels must be a positive multiple of 8")
        if not self.channel_multipliers:
            raise ArgumentError("channel_multipliers must be non-empty")
        if self.blocks_per_level < 1:
            raise ArgumentError("blocks_per_level must be >= 1")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2:
            raise ArgumentError("time_embed_dim must be a positive even number")
        if self.illum_embed_dim < 2:
            raise ArgumentError("illum_embed_dim must be >= 2")


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sin/cos position encoding of integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float32) / (half - 1))
    args = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, time_dim: int, illum_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, cout)
        self.norm2 = nn.GroupNorm(8, cout)
        self.film = FilmParams(illum_dim, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, temb, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(F.silu(temb))[:, :, None, None]
        h = apply_film(self.norm2(h), emb, self.film)
        h = self.conv2(F.silu(h))
        return h + self.skip(x)


class SelfAttention(nn.Module):
    """Single-head self-attention over spatial positions, pre-normalized."""

    def __init__(self, channels: int):
        super().__init__()
        self.norm = nn.GroupNorm(8, channels)
        self.qkv = nn.Conv2d(channels, 3 * channels, 1)
        self.proj = nn.Conv2d(channels, channels, 1)

    def forward(self, x):
        b, c, h, w = x.shape
        q, k, v = self.qkv(self.norm(x)).reshape(b, 3, c, h * w).unbind(1)
        attn = torch.softmax(q.transpose(1, 2) @ k / math.sqrt(c), dim=-1)
        out = (v @ attn.transpose(1, 2)).reshape(b, c, h, w)
        return x + self.proj(out)


class Denoiser(nn.Module):
    """U-Net epsilon predictor over the stacked condition channels."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        config.validate()
        self.config = config
        c = config
        td, ed = c.time_embed_dim, c.illum_embed_dim
        chs = [c.base_channels * m for m in c.channel_multipliers]

        self.time_mlp = nn.Sequential(
            nn.Linear(td, td), nn.SiLU(), nn.Linear(td, td))
        self.stem = nn.Conv2d(c.in_channels, c.base_channels, 3, padding=1)

        self.down_blocks = nn.ModuleList()
        skip_chs = []
        prev = c.base_channels
        for ch in chs:
            for _ in range(c.blocks_per_level):
                self.down_blocks.append(ResBlock(prev, ch, td, ed))
                prev = ch
                skip_chs.append(ch)

        self.mid1 = ResBlock(prev, prev, td, ed)
        self.attn = SelfAttention(prev) if c.attention else None
        self.mid2 = ResBlock(prev, prev, td, ed)

        self.up_blocks = nn.ModuleList()
        for ch in reversed(chs):
            for _ in range(c.blocks_per_level):
                self.up_blocks.append(ResBlock(prev + skip_chs.pop(), ch, td, ed))
                prev = ch

        self.out_norm = nn.GroupNorm(8, prev)
        self.out_conv = nn.Conv2d(prev, c.out_channels, 3, padding=1)

    def forward(self, stack: torch.Tensor, t: torch.Tensor,
                emb: torch.Tensor) -> torch.Tensor:
        c = self.config
        if stack.shape[1] != c.in_channels:
            raise ArgumentError(
                f"expected {c.in_channels} input channels, got {stack.shape[1]}")
        h_sz, w_sz = stack.shape[-2:]
        div = 2 ** (c.levels - 1)
        if h_sz % div or w_sz % div:
            raise ArgumentError(
                f"spatial size {(h_sz, w_sz)} must be divisible by {div}")
        if t.ndim == 0:
            t = t[None]
        if t.shape[0] == 1 and stack.shape[0] != 1:
            t = t.expand(stack.shape[0])
        if emb.shape[0] == 1 and stack.shape[0] != 1:
            emb = emb.expand(stack.shape[0], -1)

        temb = self.time_mlp(sinusoidal_embedding(t, c.time_embed_dim))
        h = self.stem(stack)
        skips = []
        i = 0
        for lvl in range(c.levels):
            for _ in range(c.blocks_per_level):
                h = self.down_blocks[i](h, temb, emb)
                skips.append(h)
                i += 1
            if lvl < c.levels - 1:
                h = F.avg_pool2d(h, 2)

        h = self.mid1(h, temb, emb)
        if self.attn is not None:
            h = self.attn(h)
        h = self.mid2(h, temb, emb)

        j = 0
        for lvl in range(c.levels):
            for _ in range(c.blocks_per_level):
                skip = skips.pop()
                if skip.shape[-2:] != h.shape[-2:]:
                    h = F.interpolate(h, size=skip.shape[-2:], mode="nearest")
                h = self.up_blocks[j](torch.cat([h, skip], dim=1), temb, emb)
                j += 1

        return self.out_conv(F.silu(self.out_norm(h)))

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def init_denoiser(config: DenoiserConfig, seed: int) -> Denoiser:
    """Deterministically initialized network for a given (config, seed)."""
    torch.manual_seed(seed)
    return Denoiser(config)
