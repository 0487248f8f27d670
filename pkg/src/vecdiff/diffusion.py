"""DDPM machinery: cosine schedule, forward noising, ancestral sampling, CFG.

The state being diffused is the (28, 32) normalized SVG tensor. Padded slots
are noised like real slots; masking only matters in losses and decoding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import NumericalGuard

__all__ = [
    "NoiseSchedule",
    "cosine_schedule",
    "q_sample",
    "predict_s0",
    "ddpm_step",
    "sample",
]

ALPHA_BAR_FLOOR = 1e-8  # below this, predict_s0 refuses to divide


@dataclass
class NoiseSchedule:
    """Per-step beta/alpha tables, 1-indexed by timestep (index 0 unused/identity)."""

    T: int
    betas: np.ndarray       # (T+1,), betas[0] = 0
    alphas: np.ndarray      # (T+1,), alphas[0] = 1
    alpha_bars: np.ndarray  # (T+1,), alpha_bars[0] = 1

    def validate(self):
        b = self.betas[1:]
        if not ((b > 0).all() and (b < 1).all()):
            raise ValueError("betas must lie in (0, 1)")
        ab = self.alpha_bars
        if not (np.diff(ab[1:]) < 0).all():
            raise ValueError("alpha_bar must be strictly decreasing")
        # the cosine ramp's first step intrinsically exceeds 1% signal loss
        # for very small T; the endpoint contract applies from T >= 20
        if self.T >= 20 and not (ab[1] > 0.99 and ab[self.T] < 0.01):
            raise ValueError("alpha_bar endpoints out of contract")


def cosine_schedule(T: int, s: float = 0.008, beta_max: float = 0.999) -> NoiseSchedule:
    """Cosine alpha-bar ramp, betas clipped at beta_max then re-accumulated."""
    if T < 2:
        raise ValueError("T must be >= 2")
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((t / T + s) / (1.0 + s)) * math.pi / 2.0) ** 2
    alpha_bar_raw = f / f[0]
    betas = np.zeros(T + 1)
    betas[1:] = 1.0 - alpha_bar_raw[1:] / alpha_bar_raw[:-1]
    betas[1:] = np.clip(betas[1:], 1e-12, beta_max)
    alphas = 1.0 - betas
    alphas[0] = 1.0
    alpha_bars = np.cumprod(alphas)
    sched = NoiseSchedule(T=T, betas=betas, alphas=alphas, alpha_bars=alpha_bars)
    sched.validate()
    return sched


def _ab(sched: NoiseSchedule, t, like: torch.Tensor) -> torch.Tensor:
    """alpha_bar[t] broadcastable against `like` (t scalar or batch)."""
    ab = torch.as_tensor(sched.alpha_bars, dtype=like.dtype)[torch.as_tensor(t)]
    while ab.dim() < like.dim():
        ab = ab.unsqueeze(-1)
    return ab


def q_sample(s0: torch.Tensor, t, eps: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """Forward diffusion: sqrt(ab_t) s0 + sqrt(1 - ab_t) eps."""
    if s0.shape != eps.shape:
        raise ValueError(f"shape mismatch {tuple(s0.shape)} vs {tuple(eps.shape)}")
    ab = _ab(sched, t, s0)
    return ab.sqrt() * s0 + (1.0 - ab).sqrt() * eps


def predict_s0(s_t: torch.Tensor, t, eps_pred: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """Algebraic inversion of q_sample given a noise prediction."""
    ab = _ab(sched, t, s_t)
    if float(ab.min()) < ALPHA_BAR_FLOOR:
        raise NumericalGuard(f"alpha_bar[t] below {ALPHA_BAR_FLOOR:g}; refusing division")
    return (s_t - (1.0 - ab).sqrt() * eps_pred) / ab.sqrt()


def ddpm_step(s_t: torch.Tensor, t: int, eps_pred: torch.Tensor, sched: NoiseSchedule,
              generator: torch.Generator | None = None, clip_range=None) -> torch.Tensor:
    """One ancestral step t -> t-1 with the small posterior variance.

    sigma_t^2 = beta_t (1 - ab_{t-1}) / (1 - ab_t); the final step (t=1) is
    deterministic. With clip_range=(lo, hi) the mean is computed through the
    implied clean-tensor estimate clamped to that range (algebraically the
    same mean when the estimate is in range); prediction errors at the
    beta-clipped high-noise steps are amplified by 1/sqrt(alpha) otherwise.
    """
    beta = sched.betas[t]
    alpha = sched.alphas[t]
    ab_t = sched.alpha_bars[t]
    ab_prev = sched.alpha_bars[t - 1]
    if clip_range is None:
        mean = (s_t - (beta / math.sqrt(1.0 - ab_t)) * eps_pred) / math.sqrt(alpha)
    else:
        s0_hat = (s_t - math.sqrt(1.0 - ab_t) * eps_pred) / math.sqrt(ab_t)
        s0_hat = s0_hat.clamp(*clip_range)
        c0 = math.sqrt(ab_prev) * beta / (1.0 - ab_t)
        ct = math.sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab_t)
        mean = c0 * s0_hat + ct * s_t
    if t == 1:
        return mean
    var = beta * (1.0 - ab_prev) / (1.0 - ab_t)
    noise = torch.randn(s_t.shape, generator=generator, dtype=s_t.dtype)
    return mean + math.sqrt(var) * noise


def sample(denoiser, cond, null_cond, cfg_scale: float, sched: NoiseSchedule,
           generator: torch.Generator, shape=(28, 32), clip_range=(-1.0, 1.0)) -> torch.Tensor:
    """Full DDPM sampling with classifier-free guidance.

    denoiser(s_t, t, cond) -> eps prediction; guided noise is
    eps_null + w (eps_cond - eps_null). cond/null_cond are passed through
    untouched, so batched conditioning works as long as the denoiser
    broadcasts. Bit-reproducible given the generator state.
    """
    if cfg_scale < 0:
        raise ValueError("cfg_scale must be >= 0")
    s = torch.randn(shape, generator=generator, dtype=torch.float32)
    for t in range(sched.T, 0, -1):
        eps_c = denoiser(s, t, cond)
        if cfg_scale == 1.0:
            eps = eps_c
        else:
            eps_n = denoiser(s, t, null_cond)
            eps = eps_n + cfg_scale * (eps_c - eps_n)
        s = ddpm_step(s, t, eps, sched, generator, clip_range=clip_range)
    return s
