"""Conditional denoiser network, its optimizer, and gradient plumbing.

The denoiser is a small encoder-decoder U-Net over latent tensors:
residual conv blocks, group normalization (groups = min(8, channels)),
SiLU activations, stride-2 conv downsampling and nearest-neighbor
upsampling + conv. Conditioning enters as channel concatenation of the
noisy latent with the (encoded, bicubic-upsampled) low-resolution
latent; the diffusion time enters as a sinusoidal embedding passed
through a 2-layer MLP and added per-block as a channel bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad


class ConfigError(ValueError):
    pass


class FrozenNetError(RuntimeError):
    pass


def _snap_channels(raw: float) -> int:
    """Snap a channel width: multiples of 8 from 8 up, else the nearest
    small integer (minimum 2). Keeps groups = min(8, c) dividing c."""
    if raw < 6:
        return max(2, int(round(raw)))
    return max(8, int(round(raw / 8.0)) * 8)


@dataclass(frozen=True)
class NetworkConfig:
    base_channels: int = 16
    channel_mult: tuple = (1, 2)
    depth: int = 2
    width_scale: float = 1.0
    time_embed_dim: int = 32
    in_channels: int = 4
    out_channels: int = 2

    def validate(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if len(self.channel_mult) != self.depth:
            raise ConfigError(
                f"channel_mult needs one entry per level: got {len(self.channel_mult)} for depth {self.depth}"
            )
        if not (0.0 < self.width_scale <= 1.0):
            raise ConfigError(f"width_scale must be in (0, 1], got {self.width_scale}")
        if self.width_scale * self.base_channels < 4:
            raise ConfigError(
                f"width_scale*base_channels must be >= 4, got {self.width_scale * self.base_channels}"
            )
        if self.in_channels != 2 * self.out_channels:
            raise ConfigError(
                f"in_channels must equal 2*out_channels, got {self.in_channels} vs {self.out_channels}"
            )
        if self.time_embed_dim < 2 or self.time_embed_dim % 2:
            raise ConfigError(f"time_embed_dim must be even and >= 2, got {self.time_embed_dim}")

    def level_channels(self):
        return [
            _snap_channels(self.base_channels * m * self.width_scale)
            for m in self.channel_mult
        ]


def time_embedding(t, dim: int):
    """Sinusoidal embedding of diffusion time t in [0, 1].

    Layout is [sin(w_0 t) ... sin(w_{h-1} t), cos(...)] with geometric
    frequencies from 1000 down to 1, so the slowest component is
    monotone on [0, 1] and distinct times give distinct vectors.
    """
    if dim % 2:
        raise ValueError(f"embedding dim must be even, got {dim}")
    half = dim // 2
    if half == 1:
        freqs = np.array([1.0])
    else:
        freqs = 1000.0 ** (1.0 - np.arange(half) / (half - 1))
    ts = np.asarray(t, dtype=np.float64)
    ang = ts[..., None] * freqs
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)
    return emb.astype(np.float32)


def _res_block_params(layout, prefix, c_in, c_out, time_dim):
    layout.append((f"{prefix}.gn1.g", (c_in,), "ones"))
    layout.append((f"{prefix}.gn1.b", (c_in,), "zeros"))
    layout.append((f"{prefix}.conv1.w", (3, 3, c_in, c_out), "kaiming"))
    layout.append((f"{prefix}.conv1.b", (c_out,), "zeros"))
    layout.append((f"{prefix}.temb.w", (time_dim, c_out), "kaiming"))
    layout.append((f"{prefix}.temb.b", (c_out,), "zeros"))
    layout.append((f"{prefix}.gn2.g", (c_out,), "ones"))
    layout.append((f"{prefix}.gn2.b", (c_out,), "zeros"))
    layout.append((f"{prefix}.conv2.w", (3, 3, c_out, c_out), "kaiming"))
    layout.append((f"{prefix}.conv2.b", (c_out,), "zeros"))
    if c_in != c_out:
        layout.append((f"{prefix}.skip.w", (1, 1, c_in, c_out), "kaiming"))
        layout.append((f"{prefix}.skip.b", (c_out,), "zeros"))


def _param_layout(cfg: NetworkConfig):
    chs = cfg.level_channels()
    td = cfg.time_embed_dim
    layout = []
    layout.append(("temb.fc1.w", (td, td), "kaiming"))
    layout.append(("temb.fc1.b", (td,), "zeros"))
    layout.append(("temb.fc2.w", (td, td), "kaiming"))
    layout.append(("temb.fc2.b", (td,), "zeros"))
    layout.append(("stem.w", (3, 3, cfg.in_channels, chs[0]), "kaiming"))
    layout.append(("stem.b", (chs[0],), "zeros"))
    for i in range(cfg.depth):
        _res_block_params(layout, f"enc{i}", chs[i], chs[i], td)
        c_next = chs[i + 1] if i + 1 < cfg.depth else chs[-1]
        layout.append((f"down{i}.w", (3, 3, chs[i], c_next), "kaiming"))
        layout.append((f"down{i}.b", (c_next,), "zeros"))
    _res_block_params(layout, "mid", chs[-1], chs[-1], td)
    for i in reversed(range(cfg.depth)):
        c_above = chs[i + 1] if i + 1 < cfg.depth else chs[-1]
        layout.append((f"up{i}.w", (3, 3, c_above, chs[i]), "kaiming"))
        layout.append((f"up{i}.b", (chs[i],), "zeros"))
        _res_block_params(layout, f"dec{i}", 2 * chs[i], chs[i], td)
    layout.append(("out.gn.g", (chs[0],), "ones"))
    layout.append(("out.gn.b", (chs[0],), "zeros"))
    layout.append(("out.conv.w", (3, 3, chs[0], cfg.out_channels), "zeros"))
    layout.append(("out.conv.b", (cfg.out_channels,), "zeros"))
    return layout


def _init_array(rng, shape, kind):
    if kind == "zeros":
        return np.zeros(shape, dtype=np.float32)
    if kind == "ones":
        return np.ones(shape, dtype=np.float32)
    if kind == "kaiming":
        fan_in = int(np.prod(shape[:-1]))
        bound = math.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(np.float32)
    raise ValueError(kind)


class DenoiserNet:
    """v-prediction denoiser: maps (z_t, z_cond, t) -> v_hat."""

    def __init__(self, config: NetworkConfig, params: dict, frozen: bool = False):
        self.config = config
        self.params = params
        self.frozen = frozen

    # -- lifecycle -----------------------------------------------------

    def freeze(self):
        self.frozen = True
        for v in self.params.values():
            v.requires_grad = False
        return self

    def state_dict(self):
        return {name: v.value.copy() for name, v in self.params.items()}

    def load_state_dict(self, state):
        if set(state) != set(self.params):
            missing = set(self.params) - set(state)
            extra = set(state) - set(self.params)
            raise ValueError(f"state dict mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, arr in state.items():
            v = self.params[name]
            if v.value.shape != arr.shape:
                raise ValueError(f"shape mismatch for {name}: {v.value.shape} vs {arr.shape}")
            v.value = np.asarray(arr, dtype=v.value.dtype).copy()
        return self

    def astype(self, dtype):
        params = {
            name: ad.leaf(v.value.astype(dtype), requires_grad=v.requires_grad)
            for name, v in self.params.items()
        }
        return DenoiserNet(self.config, params, frozen=self.frozen)

    def param_count(self):
        return sum(v.value.size for v in self.params.values())

    # -- forward -------------------------------------------------------

    def _res_block(self, prefix, x, temb):
        p = self.params
        groups_in = min(8, x.value.shape[-1])
        h = ad.silu(ad.group_norm(x, p[f"{prefix}.gn1.g"], p[f"{prefix}.gn1.b"], groups_in))
        h = ad.conv2d(h, p[f"{prefix}.conv1.w"], p[f"{prefix}.conv1.b"])
        tb = ad.linear(temb, p[f"{prefix}.temb.w"], p[f"{prefix}.temb.b"])
        h = ad.add_channel_bias(h, tb)
        c_out = h.value.shape[-1]
        h = ad.silu(ad.group_norm(h, p[f"{prefix}.gn2.g"], p[f"{prefix}.gn2.b"], min(8, c_out)))
        h = ad.conv2d(h, p[f"{prefix}.conv2.w"], p[f"{prefix}.conv2.b"])
        if f"{prefix}.skip.w" in p:
            x = ad.conv2d(x, p[f"{prefix}.skip.w"], p[f"{prefix}.skip.b"])
        return ad.add(h, x)

    def forward_vars(self, z_t: ad.Var, z_cond: ad.Var, t: np.ndarray) -> ad.Var:
        """Graph-building forward over NHWC vars; t is a (N,) array."""
        cfg = self.config
        p = self.params
        emb = time_embedding(t, cfg.time_embed_dim).astype(z_t.value.dtype)
        temb = ad.leaf(emb)
        temb = ad.silu(ad.linear(temb, p["temb.fc1.w"], p["temb.fc1.b"]))
        temb = ad.silu(ad.linear(temb, p["temb.fc2.w"], p["temb.fc2.b"]))

        h = ad.concat_c(z_t, z_cond)
        h = ad.conv2d(h, p["stem.w"], p["stem.b"])
        skips = []
        for i in range(cfg.depth):
            h = self._res_block(f"enc{i}", h, temb)
            skips.append(h)
            h = ad.conv2d(h, p[f"down{i}.w"], p[f"down{i}.b"], stride=2)
        h = self._res_block("mid", h, temb)
        for i in reversed(range(cfg.depth)):
            h = ad.upsample2(h)
            h = ad.conv2d(h, p[f"up{i}.w"], p[f"up{i}.b"])
            h = ad.concat_c(h, skips[i])
            h = self._res_block(f"dec{i}", h, temb)
        c0 = h.value.shape[-1]
        h = ad.silu(ad.group_norm(h, p["out.gn.g"], p["out.gn.b"], min(8, c0)))
        return ad.conv2d(h, p["out.conv.w"], p["out.conv.b"])

    def forward(self, z_t: np.ndarray, z_cond: np.ndarray, t) -> np.ndarray:
        return forward_denoiser(self, z_t, z_cond, t)

    def __call__(self, z_t, z_cond, t):
        return forward_denoiser(self, z_t, z_cond, t)


def build_denoiser(config: NetworkConfig, seed: int) -> DenoiserNet:
    """Deterministically initialize a denoiser from (config, seed)."""
    config.validate()
    rng = np.random.Generator(np.random.PCG64(seed))
    params = {}
    for name, shape, kind in _param_layout(config):
        params[name] = ad.leaf(_init_array(rng, shape, kind), requires_grad=True)
    return DenoiserNet(config, params)


def _to_nhwc(x):
    x = np.asarray(x)
    if x.ndim == 3:  # (C, H, W) -> (1, H, W, C)
        return x.transpose(1, 2, 0)[None], True
    if x.ndim == 4:  # (N, C, H, W)
        return x.transpose(0, 2, 3, 1), False
    raise ValueError(f"expected (C,H,W) or (N,C,H,W), got shape {x.shape}")


def _from_nhwc(x, single):
    out = x.transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out[0] if single else out)


def forward_denoiser(net: DenoiserNet, z_t, z_cond, t) -> np.ndarray:
    """Pure inference forward: (params, z_t, z_cond, t) -> v_hat.

    Accepts a single (C, H, W) latent or an (N, C, H, W) batch; t is a
    float (or per-sample array for batches).
    """
    zt, single = _to_nhwc(z_t)
    zc, single_c = _to_nhwc(z_cond)
    if zt.shape != zc.shape or single != single_c:
        raise ValueError(f"z_t shape {np.shape(z_t)} != z_cond shape {np.shape(z_cond)}")
    cfg = net.config
    if zt.shape[-1] != cfg.out_channels:
        raise ValueError(f"expected {cfg.out_channels} channels, got {zt.shape[-1]}")
    div = 1 << cfg.depth
    if zt.shape[1] % div or zt.shape[2] % div:
        raise ValueError(f"spatial dims {zt.shape[1]}x{zt.shape[2]} not divisible by {div}")
    if not (np.all(np.isfinite(zt)) and np.all(np.isfinite(zc))):
        raise ValueError("non-finite values in denoiser input")
    ts = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if ts.size == 1 and zt.shape[0] > 1:
        ts = np.full(zt.shape[0], ts[0])
    if np.any(ts < 0) or np.any(ts > 1):
        raise ValueError(f"t must lie in [0, 1], got {ts}")
    dt = net.params["stem.w"].value.dtype
    with ad.no_grad():
        out = net.forward_vars(ad.leaf(zt.astype(dt)), ad.leaf(zc.astype(dt)), ts)
    return _from_nhwc(out.value, single)


# ---------------------------------------------------------------------------
# training plumbing


def loss_and_grads(net: DenoiserNet, loss_fn):
    """Evaluate a scalar loss closure and return (value, named grads).

    Gradients cover exactly the trainable parameters of `net`; frozen
    nets evaluated inside `loss_fn` contribute nothing.
    """
    if net.frozen:
        raise FrozenNetError("gradients requested for a frozen net")
    for v in net.params.values():
        v.grad = None
    out = loss_fn()
    if out.value.ndim != 0:
        raise ValueError(f"loss must be scalar, got shape {out.value.shape}")
    if not np.isfinite(out.value):
        raise FloatingPointError(f"non-finite loss: {out.value}")
    ad.backward(out)
    grads = {}
    for name, v in net.params.items():
        grads[name] = v.grad if v.grad is not None else np.zeros_like(v.value)
        v.grad = None
    return float(out.value), grads


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params: dict, lr: float, beta1=0.9, beta2=0.999, eps_adam=1e-8) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps_adam=eps_adam)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.value)
        state.v[name] = np.zeros_like(p.value)
    return state


def adam_step(params: dict, grads: dict, state: AdamState):
    """Bias-corrected Adam update, applied in parameter creation order."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.value.shape:
            raise ValueError(f"gradient shape mismatch for {name}: {g.shape} vs {p.value.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.value = p.value - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps_adam)
    return params, state
