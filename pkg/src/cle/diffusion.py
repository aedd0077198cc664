"""Noise schedule, forward diffusion, DDIM stepping, guidance, and sampling.

The math helpers are dtype-agnostic: they accept numpy arrays, torch tensors,
or plain floats, with scalar or per-item integer timesteps. Model space is
[-1, 1]; `sample` maps its output back to a [0, 1] image at the end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ArgumentError, StateError

__all__ = [
    "NoiseSchedule",
    "make_schedule",
    "q_sample",
    "predict_x0",
    "ddim_step",
    "cfg_combine",
    "uniform_time_grid",
    "sample",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear beta schedule with cached cumulative products.

    ``alpha_bar_at(0)`` is defined as 1 so t_prev=0 is a valid terminal step.
    """

    T: int
    beta: np.ndarray        # beta_1..beta_T, index t-1
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def alpha_bar_at(self, t):
        """Cumulative product at step t (scalar or integer array), t in [0, T]."""
        t_arr = np.asarray(t)
        if t_arr.min() < 0 or t_arr.max() > self.T:
            raise ArgumentError(f"t must lie in [0, {self.T}], got {t}")
        padded = np.concatenate([[1.0], self.alpha_bar])
        out = padded[t_arr]
        return float(out) if np.isscalar(t) or t_arr.ndim == 0 else out


def make_schedule(T: int = 1000, beta_start: float = 1e-4,
                  beta_end: float = 0.02) -> NoiseSchedule:
    if T < 2:
        raise ArgumentError(f"T must be >= 2, got {T}")
    if not 0.0 < beta_start < beta_end < 1.0:
        raise ArgumentError(
            f"need 0 < beta_start < beta_end < 1, got ({beta_start}, {beta_end})")
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def _coef(value, like):
    """Shape an alpha_bar lookup (scalar or per-item array) for broadcasting."""
    if np.isscalar(value) or np.asarray(value).ndim == 0:
        return float(value)
    if torch.is_tensor(like):
        v = torch.as_tensor(value, dtype=like.dtype, device=like.device)
        return v.reshape(-1, *([1] * (like.ndim - 1)))
    v = np.asarray(value)
    return v.reshape(-1, *([1] * (np.asarray(like).ndim - 1)))


def _as_int_index(t):
    if torch.is_tensor(t):
        return t.detach().cpu().numpy()
    return t


def q_sample(y0, t, eps, schedule: NoiseSchedule):
    """Forward marginal: y_t = sqrt(ab_t) * y0 + sqrt(1 - ab_t) * eps."""
    t_idx = _as_int_index(t)
    if np.asarray(t_idx).min() < 1:
        raise ArgumentError(f"q_sample needs t >= 1, got {t}")
    ab = schedule.alpha_bar_at(t_idx)
    a = _coef(np.sqrt(ab), y0)
    b = _coef(np.sqrt(1.0 - np.asarray(ab)), y0)
    return a * y0 + b * eps


def predict_x0(y_t, t, eps_hat, schedule: NoiseSchedule):
    """Clean-image estimate: (y_t - sqrt(1 - ab_t) * eps_hat) / sqrt(ab_t)."""
    t_idx = _as_int_index(t)
    if np.asarray(t_idx).min() < 1:
        raise ArgumentError(f"predict_x0 needs t >= 1, got {t}")
    ab = schedule.alpha_bar_at(t_idx)
    a = _coef(np.sqrt(ab), y_t)
    b = _coef(np.sqrt(1.0 - np.asarray(ab)), y_t)
    return (y_t - b * eps_hat) / a


def ddim_step(y_t, t: int, t_prev: int, eps_hat, schedule: NoiseSchedule):
    """Deterministic step: sqrt(ab_prev) * y0_hat + sqrt(1 - ab_prev) * eps_hat."""
    if not 0 <= t_prev < t <= schedule.T:
        raise ArgumentError(f"need 0 <= t_prev < t <= T, got t={t} t_prev={t_prev}")
    y0_hat = predict_x0(y_t, t, eps_hat, schedule)
    ab_prev = schedule.alpha_bar_at(t_prev)
    return np.sqrt(ab_prev) * y0_hat + np.sqrt(1.0 - ab_prev) * eps_hat


def cfg_combine(eps_cond, eps_uncond, s: float):
    """Guidance mix s * eps_cond + (1 - s) * eps_uncond, elementwise."""
    if np.shape(eps_cond) != np.shape(eps_uncond):
        raise ArgumentError(
            f"shape mismatch {np.shape(eps_cond)} vs {np.shape(eps_uncond)}")
    return s * eps_cond + (1.0 - s) * eps_uncond


def uniform_time_grid(T: int, steps: int) -> list[tuple[int, int]]:
    """Descending (t, t_prev) pairs over a uniformly spaced sub-sequence of [0, T]."""
    if not 1 <= steps <= T:
        raise ArgumentError(f"steps must lie in [1, T={T}], got {steps}")
    ts = np.unique(np.round(np.linspace(0, T, steps + 1)).astype(int))
    pairs = list(zip(ts[1:], ts[:-1]))
    pairs.reverse()
    return [(int(t), int(tp)) for t, tp in pairs]


def _to_image01(y_model: torch.Tensor) -> np.ndarray:
    arr = y_model.detach().cpu().numpy()[0].transpose(1, 2, 0).astype(np.float64)
    return np.clip((arr + 1.0) / 2.0, 0.0, 1.0)


def sample(model, bundle, lam: float, s: float = 1.0, steps: int = 50,
           seed: int = 0, traj_every: int = 5, on_step=None):
    """Run the full guided DDIM sampling loop.

    Each iteration evaluates the denoiser twice: once with the illumination
    embedding of ``lam`` and once with the zero embedding, mixed through the
    module-level :func:`cfg_combine`. Returns ``(image, trajectory)`` where the
    image is (H, W, 3) in [0, 1] and the trajectory holds intermediate clean
    estimates every ``traj_every`` iterations plus the final one. ``on_step``
    is called as ``on_step(i, total, y0_hat_image)`` after every iteration.

    Deterministic for fixed (seed, inputs, parameters).
    """
    if not getattr(model, "is_trained", False):
        raise StateError("model is not trained; sampling would emit noise")
    if not 0.0 <= lam <= 1.0:
        raise ArgumentError(f"lambda must lie in [0,1], got {lam}")
    if s < 0:
        raise ArgumentError(f"guidance scale must be >= 0, got {s}")
    schedule = model.schedule
    grid = uniform_time_grid(schedule.T, steps)

    h, w = bundle.x.shape[:2]
    rng = np.random.default_rng(seed)
    y = torch.from_numpy(
        rng.standard_normal((1, 3, h, w)).astype(np.float32))

    n = model.codebook.n
    from .conditioning import illum_embedding, zero_embedding
    cond = torch.from_numpy(
        illum_embedding(lam, model.codebook).vector.astype(np.float32))[None]
    uncond = torch.from_numpy(
        zero_embedding(n).vector.astype(np.float32))[None]

    trajectory: list[np.ndarray] = []
    total = len(grid)
    with torch.no_grad():
        for i, (t, t_prev) in enumerate(grid, start=1):
            eps_c = model.eps(bundle, y, t, cond)
            eps_u = model.eps(bundle, y, t, uncond)
            eps = cfg_combine(eps_c, eps_u, s)
            y0_hat = predict_x0(y, t, eps, schedule)
            y = ddim_step(y, t, t_prev, eps, schedule)
            y0_img = _to_image01(y0_hat)
            if i % traj_every == 0 or i == total:
                trajectory.append(y0_img)
            if on_step is not None:
                on_step(i, total, y0_img)
    return _to_image01(y), trajectory
