"""Deterministic DDIM sampling in v-prediction form, plus the SR pipeline.

A K-step run walks the uniform grid t_k = 1 - k/K from pure noise at
t=1 down to t=0, calling the denoiser exactly K times. Each step
converts v_hat into (x0_hat, eps_hat) and re-noises to the next knot.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .degradation import resize_like
from .diffusion import NoiseSchedule, from_v, schedule_eval
from .autoencoder import Autoencoder, decode_batch, encode_batch


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 1
    seed: int = 0
    sched: NoiseSchedule = field(default_factory=NoiseSchedule)

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"sampler steps must be >= 1, got {self.steps}")


def ddim_timegrid(steps: int):
    """K+1 uniformly spaced knots from 1.0 down to exactly 0.0."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    return [1.0 - k / steps for k in range(steps)] + [0.0]


def ddim_step(net, z_t, z_l, t_from: float, t_to: float, sched: NoiseSchedule):
    """One deterministic DDIM update from t_from to t_to (< t_from)."""
    if t_from <= t_to:
        raise ValueError(f"ddim_step needs t_from > t_to, got {t_from} <= {t_to}")
    v_hat = net.forward(z_t, z_l, t_from)
    x0_hat, eps_hat = from_v(z_t, v_hat, t_from, sched)
    a_to, s_to, _ = schedule_eval(sched, t_to)
    return (a_to * x0_hat + s_to * eps_hat).astype(np.asarray(z_t).dtype)


def ddim_sample(net, z_l: np.ndarray, cfg: SamplerConfig) -> np.ndarray:
    """Sample a clean latent conditioned on z_l, starting from seeded noise."""
    if not net.frozen:
        raise ValueError("ddim_sample requires a frozen net")
    return ddim_sample_batch(net, np.asarray(z_l)[None], cfg, [cfg.seed])[0]


def ddim_sample_batch(net, z_l: np.ndarray, cfg: SamplerConfig, seeds) -> np.ndarray:
    """Batched sampler; each element draws its initial noise from its own
    seed, so results are independent of batching."""
    z_l = np.asarray(z_l, dtype=np.float32)
    if z_l.ndim != 4:
        raise ValueError(f"expected (N, C, h, w) conditioning, got {z_l.shape}")
    if len(seeds) != z_l.shape[0]:
        raise ValueError("one seed per batch element required")
    z = np.stack([
        np.random.Generator(np.random.PCG64(int(s))).standard_normal(z_l.shape[1:]).astype(np.float32)
        for s in seeds
    ])
    grid = ddim_timegrid(cfg.steps)
    for t_from, t_to in zip(grid[:-1], grid[1:]):
        z = ddim_step(net, z, z_l, t_from, t_to, cfg.sched)
    return z


@dataclass
class SRPipeline:
    ae: Autoencoder
    net: object
    scale: int


def super_resolve(pipe: SRPipeline, x_l: np.ndarray, cfg: SamplerConfig) -> np.ndarray:
    """LR image -> HR image: bicubic upsample, encode, sample, decode."""
    return super_resolve_batch(pipe, np.asarray(x_l)[None], cfg, [cfg.seed])[0]


def super_resolve_batch(pipe: SRPipeline, x_l: np.ndarray, cfg: SamplerConfig, seeds) -> np.ndarray:
    x_l = np.asarray(x_l, dtype=np.float32)
    if x_l.ndim != 3:
        raise ValueError(f"expected (N, h, w) LR batch, got {x_l.shape}")
    hr_h, hr_w = x_l.shape[1] * pipe.scale, x_l.shape[2] * pipe.scale
    f = pipe.ae.f
    if hr_h % f or hr_w % f:
        raise ValueError(f"HR dims {hr_h}x{hr_w} not divisible by autoencoder factor {f}")
    up = np.stack([resize_like(im, np.empty((hr_h, hr_w))) for im in x_l])
    z_l = encode_batch(pipe.ae, up)
    z0 = ddim_sample_batch(pipe.net, z_l, cfg, seeds)
    return decode_batch(pipe.ae, z0)
