"""Variance-preserving cosine noise schedule and the two training losses.

The schedule maps t in [0, 1] to (alpha, sigma, lambda) with
alpha = cos(pi t / 2), sigma = sin(pi t / 2), lambda = log(alpha^2 / sigma^2);
lambda uses t clamped away from the endpoints where it diverges.

Both losses measure plain MSE in v-space. Under a variance-preserving
schedule this equals the (1 + alpha^2/sigma^2)-weighted MSE on the
x0-prediction, since x0_hat - x0 = -sigma (v_hat - v) and the weight
times sigma^2 is exactly 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .nn import DenoiserNet, FrozenNetError


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str = "cosine"
    t_clip: float = 1e-5

    def __post_init__(self):
        if self.kind != "cosine":
            raise ValueError(f"unsupported schedule kind: {self.kind}")
        if not (0 < self.t_clip < 0.5):
            raise ValueError(f"t_clip must be in (0, 0.5), got {self.t_clip}")


def schedule_eval(sched: NoiseSchedule, t):
    """Return (alpha_t, sigma_t, lambda_t); t may be scalar or array."""
    ts = np.asarray(t, dtype=np.float64)
    if np.any(ts < 0) or np.any(ts > 1):
        raise ValueError(f"t must lie in [0, 1], got {t}")
    alpha = np.cos(0.5 * math.pi * ts)
    sigma = np.sin(0.5 * math.pi * ts)
    tc = np.clip(ts, sched.t_clip, 1.0 - sched.t_clip)
    ac = np.cos(0.5 * math.pi * tc)
    sc = np.sin(0.5 * math.pi * tc)
    lam = np.log(ac * ac) - np.log(sc * sc)
    if ts.ndim == 0:
        return float(alpha), float(sigma), float(lam)
    return alpha, sigma, lam


def loss_weight(sched: NoiseSchedule, t):
    """Eq.-style weight omega(lambda_t) = 1 + alpha^2/sigma^2 (t clamped)."""
    ts = np.asarray(t, dtype=np.float64)
    tc = np.clip(ts, sched.t_clip, 1.0 - sched.t_clip)
    a = np.cos(0.5 * math.pi * tc)
    s = np.sin(0.5 * math.pi * tc)
    w = 1.0 + (a * a) / (s * s)
    return float(w) if ts.ndim == 0 else w


def _coeffs(sched, t, ref):
    """Per-sample (alpha, sigma) broadcastable against a latent batch."""
    alpha, sigma, _ = schedule_eval(sched, t)
    a = np.asarray(alpha, dtype=ref.dtype)
    s = np.asarray(sigma, dtype=ref.dtype)
    if a.ndim == 1:  # (N,) against (N, ...) batch
        extra = (1,) * (ref.ndim - 1)
        a = a.reshape((-1,) + extra)
        s = s.reshape((-1,) + extra)
    return a, s


def _check_shapes(*arrs):
    shapes = {np.shape(a) for a in arrs}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch: {sorted(shapes)}")


def add_noise(z_h, eps, t, sched: NoiseSchedule):
    """Forward process sample: alpha_t * z_h + sigma_t * eps."""
    _check_shapes(z_h, eps)
    a, s = _coeffs(sched, t, np.asarray(z_h))
    return (a * z_h + s * eps).astype(np.asarray(z_h).dtype)


def v_target(z_h, eps, t, sched: NoiseSchedule):
    """Velocity target: alpha_t * eps - sigma_t * z_h."""
    _check_shapes(z_h, eps)
    a, s = _coeffs(sched, t, np.asarray(z_h))
    return (a * eps - s * z_h).astype(np.asarray(z_h).dtype)


def from_v(z_t, v_hat, t, sched: NoiseSchedule):
    """Invert a v prediction into (x0_hat, eps_hat)."""
    _check_shapes(z_t, v_hat)
    a, s = _coeffs(sched, t, np.asarray(z_t))
    x0_hat = (a * z_t - s * v_hat).astype(np.asarray(z_t).dtype)
    eps_hat = (s * z_t + a * v_hat).astype(np.asarray(z_t).dtype)
    return x0_hat, eps_hat


# ---------------------------------------------------------------------------
# training losses (graph-building; inputs are NCHW single samples or batches)


def _nchw_batch(x):
    x = np.asarray(x)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4:
        raise ValueError(f"expected (C,H,W) or (N,C,H,W), got {x.shape}")
    return x.transpose(0, 2, 3, 1)


def sr_loss(net: DenoiserNet, z_h, z_l, t, eps, sched: NoiseSchedule) -> ad.Var:
    """Standard conditional SR training loss: MSE(v_hat, v_target).

    Builds the loss graph; pass the result (via a closure) to
    nn.loss_and_grads for gradients.
    """
    _check_shapes(z_h, z_l, eps)
    zh = _nchw_batch(z_h)
    zl = _nchw_batch(z_l)
    ep = _nchw_batch(eps)
    ts = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if ts.size == 1 and zh.shape[0] > 1:
        ts = np.full(zh.shape[0], ts[0])
    a, s = _coeffs(sched, ts, zh)
    z_t = (a * zh + s * ep).astype(zh.dtype)
    v = (a * ep - s * zh).astype(zh.dtype)
    v_hat = net.forward_vars(ad.leaf(z_t), ad.leaf(zl), ts)
    if not np.all(np.isfinite(v_hat.value)):
        raise FloatingPointError("non-finite denoiser output in sr_loss")
    return ad.mse(v_hat, ad.leaf(v))


def distill_loss(
    student: DenoiserNet,
    teacher: DenoiserNet,
    z_t,
    z_l,
    z_l_prime,
    t,
    sched: NoiseSchedule,
) -> ad.Var:
    """Scale-distillation loss: student matches the frozen teacher's
    prediction on the same noisy latent, with the teacher conditioned on
    the less degraded input."""
    if not teacher.frozen:
        raise FrozenNetError("distillation teacher must be frozen")
    _check_shapes(z_t, z_l, z_l_prime)
    zt = _nchw_batch(z_t)
    zl = _nchw_batch(z_l)
    zlp = _nchw_batch(z_l_prime)
    ts = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if ts.size == 1 and zt.shape[0] > 1:
        ts = np.full(zt.shape[0], ts[0])
    with ad.no_grad():
        v_teacher = teacher.forward_vars(ad.leaf(zt), ad.leaf(zlp), ts).value
    v_student = student.forward_vars(ad.leaf(zt), ad.leaf(zl), ts)
    if not np.all(np.isfinite(v_student.value)) or not np.all(np.isfinite(v_teacher)):
        raise FloatingPointError("non-finite denoiser output in distill_loss")
    return ad.mse(v_student, ad.leaf(v_teacher))
