"""Tiny convolutional autoencoder over texture images, plus decoder fine-tuning.

Two modes: "identity" (latents are the pixels; lets diffusion code run
without a trained autoencoder) and "learned" (conv encoder with spatial
downsample factor f, mirror decoder with a sigmoid output so decoded
pixels always land in [0, 1]). The encoder is deterministic: no
sampling at encode time, no KL term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .nn import ConfigError, FrozenNetError, _init_array, adam_init, adam_step, loss_and_grads


@dataclass(frozen=True)
class AEConfig:
    mode: str = "learned"  # "identity" | "learned"
    latent_channels: int = 2
    f: int = 4
    base_channels: int = 32
    blocks_deep: int = 2  # residual units at the latent resolution

    def __post_init__(self):
        if self.mode not in ("identity", "learned"):
            raise ConfigError(f"unknown autoencoder mode: {self.mode}")
        if self.mode == "learned":
            if self.f < 2 or self.f & (self.f - 1):
                raise ConfigError(f"downsample factor must be a power of two >= 2, got {self.f}")
            if self.latent_channels < 1:
                raise ConfigError("latent_channels must be >= 1")

    @property
    def effective_f(self):
        return 1 if self.mode == "identity" else self.f

    @property
    def effective_latent_channels(self):
        return 1 if self.mode == "identity" else self.latent_channels

    def n_down(self):
        return int(math.log2(self.f))


class _ParamGroup:
    """Duck-typed trainable group for loss_and_grads/adam."""

    def __init__(self, params, frozen=False):
        self.params = params
        self.frozen = frozen


def _res_unit_params(side, prefix, c):
    for j in (1, 2):
        side.append((f"{prefix}.gn{j}.g", (c,), "ones"))
        side.append((f"{prefix}.gn{j}.b", (c,), "zeros"))
        side.append((f"{prefix}.conv{j}.w", (3, 3, c, c), "kaiming"))
        side.append((f"{prefix}.conv{j}.b", (c,), "zeros"))


def _ae_layout(cfg: AEConfig):
    """(name, shape, init) tuples for encoder and decoder halves.

    The stem is a 2x pixel-unshuffle (and the output a 2x shuffle), so
    no conv ever runs at full image resolution; remaining downsampling
    uses stride-2 convs. Most residual units sit at the latent
    resolution where conv work is cheapest.
    """
    nd = cfg.n_down()
    widths = [cfg.base_channels * (2**i) for i in range(nd)]
    enc, dec = [], []

    def conv(side, name, cin, cout):
        side.append((f"{name}.w", (3, 3, cin, cout), "kaiming"))
        side.append((f"{name}.b", (cout,), "zeros"))

    def gn(side, name, c):
        side.append((f"{name}.g", (c,), "ones"))
        side.append((f"{name}.b", (c,), "zeros"))

    conv(enc, "enc.stem", 4, widths[0])  # after 2x space-to-depth
    gn(enc, "enc.stem.gn", widths[0])
    _res_unit_params(enc, "enc.res0", widths[0])
    for i in range(nd - 1):
        conv(enc, f"enc.down{i}", widths[i], widths[i + 1])
        gn(enc, f"enc.down{i}.gn", widths[i + 1])
    for j in range(cfg.blocks_deep):
        _res_unit_params(enc, f"enc.deep{j}", widths[-1])
    enc.append(("enc.out.w", (3, 3, widths[-1], cfg.latent_channels), "kaiming"))
    enc.append(("enc.out.b", (cfg.latent_channels,), "zeros"))

    conv(dec, "dec.stem", cfg.latent_channels, widths[-1])
    gn(dec, "dec.stem.gn", widths[-1])
    for j in range(cfg.blocks_deep):
        _res_unit_params(dec, f"dec.deep{j}", widths[-1])
    for i in reversed(range(nd - 1)):
        conv(dec, f"dec.up{i}", widths[i + 1], widths[i])
        gn(dec, f"dec.up{i}.gn", widths[i])
    _res_unit_params(dec, "dec.res0", widths[0])
    dec.append(("dec.out.w", (3, 3, widths[0], 4), "kaiming"))  # 2x depth-to-space
    dec.append(("dec.out.b", (4,), "zeros"))
    return enc, dec


class Autoencoder:
    def __init__(self, config: AEConfig, enc_params=None, dec_params=None,
                 frozen_encoder=False, frozen_decoder=False, latent_scale=1.0):
        self.config = config
        self.enc_params = enc_params or {}
        self.dec_params = dec_params or {}
        self.frozen_encoder = frozen_encoder
        self.frozen_decoder = frozen_decoder
        # learned latents are standardized to roughly unit scale at freeze
        # time so the diffusion forward process mixes signal and N(0,1)
        # noise at comparable magnitudes; identity mode keeps scale 1
        self.latent_scale = float(latent_scale)

    @property
    def mode(self):
        return self.config.mode

    @property
    def f(self):
        return self.config.effective_f

    @property
    def latent_channels(self):
        return self.config.effective_latent_channels

    def freeze(self):
        self.frozen_encoder = True
        self.frozen_decoder = True
        for v in list(self.enc_params.values()) + list(self.dec_params.values()):
            v.requires_grad = False
        return self

    def state_dict(self):
        out = {k: v.value.copy() for k, v in self.enc_params.items()}
        out.update({k: v.value.copy() for k, v in self.dec_params.items()})
        return out

    def load_state_dict(self, state):
        for name, arr in state.items():
            group = self.enc_params if name.startswith("enc.") else self.dec_params
            if name not in group:
                raise ValueError(f"unexpected autoencoder parameter: {name}")
            group[name].value = np.asarray(arr, dtype=np.float32).copy()
        return self

    def clone(self):
        other = build_autoencoder(self.config, seed=0) if self.mode == "learned" else Autoencoder(self.config)
        if self.mode == "learned":
            other.load_state_dict(self.state_dict())
        other.frozen_encoder = self.frozen_encoder
        other.frozen_decoder = self.frozen_decoder
        other.latent_scale = self.latent_scale
        return other

    # -- forward helpers (NHWC graph vars) -------------------------------

    def _gn_silu(self, params, name, h):
        c = h.value.shape[-1]
        return ad.silu(ad.group_norm(h, params[f"{name}.gn.g"], params[f"{name}.gn.b"], min(8, c)))

    def _res_unit(self, params, prefix, x):
        c = x.value.shape[-1]
        h = ad.silu(ad.group_norm(x, params[f"{prefix}.gn1.g"], params[f"{prefix}.gn1.b"], min(8, c)))
        h = ad.conv2d(h, params[f"{prefix}.conv1.w"], params[f"{prefix}.conv1.b"])
        h = ad.silu(ad.group_norm(h, params[f"{prefix}.gn2.g"], params[f"{prefix}.gn2.b"], min(8, c)))
        h = ad.conv2d(h, params[f"{prefix}.conv2.w"], params[f"{prefix}.conv2.b"])
        return ad.add(h, x)

    def _enc_vars(self, x: ad.Var) -> ad.Var:
        p = self.enc_params
        nd = self.config.n_down()
        h = ad.space_to_depth(x, 2)
        h = self._gn_silu(p, "enc.stem", ad.conv2d(h, p["enc.stem.w"], p["enc.stem.b"]))
        h = self._res_unit(p, "enc.res0", h)
        for i in range(nd - 1):
            h = ad.conv2d(h, p[f"enc.down{i}.w"], p[f"enc.down{i}.b"], stride=2)
            h = self._gn_silu(p, f"enc.down{i}", h)
        for j in range(self.config.blocks_deep):
            h = self._res_unit(p, f"enc.deep{j}", h)
        return ad.conv2d(h, p["enc.out.w"], p["enc.out.b"])

    def _dec_vars(self, z: ad.Var) -> ad.Var:
        p = self.dec_params
        nd = self.config.n_down()
        h = self._gn_silu(p, "dec.stem", ad.conv2d(z, p["dec.stem.w"], p["dec.stem.b"]))
        for j in range(self.config.blocks_deep):
            h = self._res_unit(p, f"dec.deep{j}", h)
        for i in reversed(range(nd - 1)):
            h = ad.upsample2(h)
            h = ad.conv2d(h, p[f"dec.up{i}.w"], p[f"dec.up{i}.b"])
            h = self._gn_silu(p, f"dec.up{i}", h)
        h = self._res_unit(p, "dec.res0", h)
        h = ad.conv2d(h, p["dec.out.w"], p["dec.out.b"])
        return ad.sigmoid(ad.depth_to_space(h, 2))


def build_autoencoder(cfg: AEConfig, seed: int) -> Autoencoder:
    if cfg.mode == "identity":
        return Autoencoder(cfg)
    rng = np.random.Generator(np.random.PCG64(seed))
    enc_layout, dec_layout = _ae_layout(cfg)
    enc = {name: ad.leaf(_init_array(rng, shape, kind), requires_grad=True)
           for name, shape, kind in enc_layout}
    dec = {name: ad.leaf(_init_array(rng, shape, kind), requires_grad=True)
           for name, shape, kind in dec_layout}
    return Autoencoder(cfg, enc, dec)


# ---------------------------------------------------------------------------
# public encode/decode


def encode_batch(ae: Autoencoder, xs: np.ndarray) -> np.ndarray:
    """(N, H, W) images -> (N, C, H/f, W/f) latents."""
    xs = np.asarray(xs, dtype=np.float32)
    if xs.ndim != 3:
        raise ValueError(f"encode_batch expects (N, H, W), got {xs.shape}")
    f = ae.f
    if xs.shape[1] % f or xs.shape[2] % f:
        raise ValueError(f"image dims {xs.shape[1]}x{xs.shape[2]} not divisible by f={f}")
    if ae.mode == "identity":
        return xs[:, None].copy()
    with ad.no_grad():
        z = ae._enc_vars(ad.leaf(xs[..., None]))
    out = z.value.transpose(0, 3, 1, 2) * np.float32(ae.latent_scale)
    return np.ascontiguousarray(out)


def decode_batch(ae: Autoencoder, zs: np.ndarray) -> np.ndarray:
    """(N, C, h, w) latents -> (N, H, W) images in [0, 1]."""
    zs = np.asarray(zs, dtype=np.float32)
    if zs.ndim != 4 or zs.shape[1] != ae.latent_channels:
        raise ValueError(f"decode_batch expects (N, {ae.latent_channels}, h, w), got {zs.shape}")
    if ae.mode == "identity":
        return np.clip(zs[:, 0], 0.0, 1.0)
    raw = zs.transpose(0, 2, 3, 1) / np.float32(ae.latent_scale)
    with ad.no_grad():
        x = ae._dec_vars(ad.leaf(np.ascontiguousarray(raw)))
    return np.ascontiguousarray(x.value[..., 0])


def encode(ae: Autoencoder, x: np.ndarray) -> np.ndarray:
    """Single (H, W) image -> (C, H/f, W/f) latent tensor."""
    return encode_batch(ae, np.asarray(x)[None])[0]


def decode(ae: Autoencoder, z: np.ndarray) -> np.ndarray:
    """Single (C, h, w) latent -> (H, W) image in [0, 1]."""
    z = np.asarray(z)
    if z.ndim != 3:
        raise ValueError(f"decode expects (C, h, w), got {z.shape}")
    return decode_batch(ae, z[None])[0]


# ---------------------------------------------------------------------------
# training


@dataclass
class AETrainConfig:
    steps: int = 6000
    batch: int = 16
    lr: float = 2e-3
    seed: int = 0
    crop: int = 32  # train on random crops; 0 trains on full images


def _recon_loss(recon: ad.Var, target: ad.Var) -> ad.Var:
    return ad.add(ad.mse(recon, target), ad.scale(ad.grad_diff_loss(recon, target), 0.1))


def train_autoencoder(dataset, cfg: AEConfig, train_cfg: AETrainConfig | None = None,
                      log=None) -> Autoencoder:
    """Train encoder+decoder on L2 + 0.1 * gradient-difference loss.

    Deterministic given (dataset, configs); the returned model is frozen.
    Raises FloatingPointError with step diagnostics if the loss diverges.
    """
    if len(dataset) == 0:
        raise ValueError("train_autoencoder: empty dataset")
    if cfg.mode == "identity":
        return Autoencoder(cfg).freeze()
    tc = train_cfg or AETrainConfig()
    ae = build_autoencoder(cfg, seed=tc.seed)
    group = _ParamGroup({**ae.enc_params, **ae.dec_params})
    state = adam_init(group.params, lr=tc.lr)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([tc.seed, 0xAE])))
    data = np.stack([np.asarray(im, dtype=np.float32) for im in dataset])
    hh, ww = data.shape[1], data.shape[2]
    crop = tc.crop if 0 < tc.crop < min(hh, ww) else 0
    for step in range(tc.steps):
        idx = rng.integers(0, data.shape[0], size=tc.batch)
        if crop:
            ys = rng.integers(0, hh - crop + 1, size=tc.batch)
            xs = rng.integers(0, ww - crop + 1, size=tc.batch)
            batch = np.stack([data[i, y : y + crop, x : x + crop]
                              for i, y, x in zip(idx, ys, xs)])
        else:
            batch = data[idx]
        xv = ad.leaf(batch[..., None])
        # cosine decay to lr/10 squeezes out the last reconstruction error
        state.lr = tc.lr * (0.55 + 0.45 * math.cos(math.pi * step / tc.steps))

        def loss_fn():
            z = ae._enc_vars(xv)
            recon = ae._dec_vars(z)
            return _recon_loss(recon, xv)

        try:
            loss, grads = loss_and_grads(group, loss_fn)
        except FloatingPointError as exc:
            raise FloatingPointError(
                f"autoencoder training diverged at step {step}: {exc}"
            ) from exc
        adam_step(group.params, grads, state)
        if log is not None:
            log(step, loss)
    sample = data[: min(len(data), 256)]
    z = encode_batch(ae, sample)  # latent_scale is still 1 here
    ae.latent_scale = float(1.0 / max(z.std(), 1e-6))
    return ae.freeze()


def finetune_decoder(ae: Autoencoder, unet, sampler_cfg, dataset, cfg) -> Autoencoder:
    """Fine-tune only the decoder on frozen one-step diffusion outputs.

    For every (x_l, x_h) pair: run a single DDIM step conditioned on
    encode(resize_like(x_l, x_h)), decode the resulting latent, and
    minimize the reconstruction loss against x_h. The encoder and the
    U-Net are byte-identical before and after.
    """
    from .degradation import degrade, resize_like
    from .sampler import ddim_sample_batch

    if sampler_cfg.steps != 1:
        raise ValueError(f"decoder fine-tuning requires steps=1, got {sampler_cfg.steps}")
    if not unet.frozen:
        raise FrozenNetError("decoder fine-tuning requires a frozen U-Net")
    if ae.mode != "learned":
        raise ValueError("decoder fine-tuning needs a learned autoencoder")

    tuned = ae.clone()
    tuned.frozen_decoder = False
    for v in tuned.dec_params.values():
        v.requires_grad = True
    group = _ParamGroup(tuned.dec_params)
    state = adam_init(group.params, lr=cfg.lr)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 0xDF])))
    hr = np.stack([np.asarray(im, dtype=np.float32) for im in dataset])

    for step in range(cfg.steps):
        idx = rng.integers(0, hr.shape[0], size=cfg.batch)
        batch_hr = hr[idx]
        lr_up = np.stack([
            resize_like(degrade(im, cfg.scale, cfg.degrade_mode, int(r)), im)
            for im, r in zip(batch_hr, rng.integers(0, 2**31, size=cfg.batch))
        ])
        z_l = encode_batch(tuned, lr_up)
        noise_seeds = rng.integers(0, 2**31, size=cfg.batch)
        z0 = ddim_sample_batch(unet, z_l, sampler_cfg, noise_seeds)
        target = ad.leaf(batch_hr[..., None])
        raw = z0.transpose(0, 2, 3, 1).astype(np.float32) / np.float32(tuned.latent_scale)
        zv = ad.leaf(np.ascontiguousarray(raw))

        def loss_fn():
            recon = tuned._dec_vars(zv)
            return _recon_loss(recon, target)

        _, grads = loss_and_grads(group, loss_fn)
        adam_step(group.params, grads, state)
    tuned.freeze()
    return tuned


@dataclass
class DecoderFinetuneConfig:
    steps: int = 1500
    batch: int = 16
    lr: float = 5e-4
    seed: int = 0
    scale: int = 4
    degrade_mode: object = None

    def __post_init__(self):
        if self.degrade_mode is None:
            from .degradation import DegradeMode

            self.degrade_mode = DegradeMode()
