"""Training loops: first-scale training, progressive scale distillation,
and architecture distillation into a narrower student.

Every stage draws its data/noise stream from a seed derived only from
(run seed, stage index, scale), so a schedule prefix trains bit-identically
whether or not later stages follow, and comparison runs (distilled vs.
direct) see identical batches, times and noise when given the same seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autoencoder import Autoencoder, encode_batch
from .degradation import DegradeMode, degrade, resize_like
from .diffusion import NoiseSchedule, add_noise, distill_loss, sr_loss
from .nn import (
    DenoiserNet,
    FrozenNetError,
    NetworkConfig,
    adam_init,
    adam_step,
    build_denoiser,
    loss_and_grads,
)

PROVENANCE_RAW = "raw_data"
PROVENANCE_SCALE = "scale_distilled"
PROVENANCE_ARCH = "arch_distilled"


@dataclass
class TrainConfig:
    model: NetworkConfig = field(default_factory=NetworkConfig)
    steps_per_stage: int = 6000
    batch: int = 16
    lr: float = 2e-4
    seed: int = 0
    sched: NoiseSchedule = field(default_factory=NoiseSchedule)
    degrade_mode: DegradeMode = field(default_factory=DegradeMode)


@dataclass
class ScaleSchedule:
    scales: list
    steps_per_stage: int = 6000
    batch: int = 16
    lr: float = 2e-4
    seed: int = 0

    def validate(self):
        if not self.scales:
            raise ValueError("schedule needs at least one scale")
        for a, b in zip(self.scales, self.scales[1:]):
            if b <= a:
                raise ValueError(f"scales must be strictly increasing, got {self.scales}")
            if b % a:
                raise ValueError(f"each scale must divide the next, got {self.scales}")


@dataclass
class TrainedStage:
    scale: int
    net: DenoiserNet
    provenance: str
    metrics_log: list
    meta: dict


def stage_seed(seed: int, stage_index: int, scale: int, tag: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(stage_index), int(scale), int(tag)])


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


class LatentBank:
    """Encoded training latents with per-scale conditioning.

    With the deterministic bicubic degradation the LR latents are
    precomputed once; the stochastic lite mode computes them per draw.
    """

    def __init__(self, images, ae: Autoencoder, mode: DegradeMode, chunk: int = 64):
        self.images = np.stack([np.asarray(im, dtype=np.float32) for im in images])
        self.ae = ae
        self.mode = mode
        self.chunk = chunk
        self._z_h = None
        self._z_l = {}

    def __len__(self):
        return self.images.shape[0]

    def _encode_all(self, pixel_batches):
        outs = [encode_batch(self.ae, pixel_batches[i : i + self.chunk])
                for i in range(0, pixel_batches.shape[0], self.chunk)]
        return np.concatenate(outs, axis=0)

    def z_h(self):
        if self._z_h is None:
            self._z_h = self._encode_all(self.images)
        return self._z_h

    def z_l(self, scale: int):
        if self.mode.kind != "bicubic":
            raise RuntimeError("cached LR latents only exist for the bicubic mode")
        if scale not in self._z_l:
            ups = np.stack([
                resize_like(degrade(im, scale, self.mode, 0), im) for im in self.images
            ])
            self._z_l[scale] = self._encode_all(ups)
        return self._z_l[scale]

    def z_l_fresh(self, idx, scale: int, seeds):
        """Lite-mode conditioning latents for one batch (fresh degradations)."""
        ups = np.stack([
            resize_like(degrade(self.images[i], scale, self.mode, int(s)), self.images[i])
            for i, s in zip(idx, seeds)
        ])
        return encode_batch(self.ae, ups)

    def batch_cond(self, idx, scale, rng):
        """Draw conditioning latents for a batch; the rng is consumed only
        in lite mode (one seed per sample, fixed order)."""
        if self.mode.kind == "bicubic":
            return self.z_l(scale)[idx]
        seeds = rng.integers(0, 2**31, size=len(idx))
        return self.z_l_fresh(idx, scale, seeds)


def _train_stage(
    bank: LatentBank,
    cfg: TrainConfig,
    stage_index: int,
    scale: int,
    provenance: str,
    step_fn,
    net: DenoiserNet,
    log=None,
):
    """Shared optimizer loop; step_fn builds the loss graph per batch."""
    state = adam_init(net.params, lr=cfg.lr)
    rng = np.random.Generator(np.random.PCG64(stage_seed(cfg.seed, stage_index, scale, tag=1)))
    t_lo, t_hi = cfg.sched.t_clip, 1.0 - cfg.sched.t_clip
    z_h = bank.z_h()
    lat_shape = z_h.shape[1:]
    records = []
    for step in range(cfg.steps_per_stage):
        t0 = time.perf_counter()
        idx = rng.integers(0, len(bank), size=cfg.batch)
        ts = rng.uniform(t_lo, t_hi, size=cfg.batch)
        eps = rng.standard_normal((cfg.batch,) + lat_shape).astype(np.float32)
        try:
            loss_graph = step_fn(idx, ts, eps, rng)
            loss, grads = loss_and_grads(net, lambda: loss_graph)
        except FloatingPointError as exc:
            raise FloatingPointError(
                f"training diverged at stage {stage_index} (scale x{scale}) step {step}: {exc}"
            ) from exc
        adam_step(net.params, grads, state)
        rec = {
            "stage": stage_index,
            "step": step,
            "loss": loss,
            "wall_ms": (time.perf_counter() - t0) * 1000.0,
        }
        records.append(rec)
        if log is not None:
            log(rec)
    net.freeze()
    meta = {
        "stage": stage_index,
        "scale": scale,
        "provenance": provenance,
        "steps": cfg.steps_per_stage,
        "batch": cfg.batch,
        "lr": cfg.lr,
        "seed": cfg.seed,
        "width_scale": cfg.model.width_scale,
    }
    return TrainedStage(scale=scale, net=net, provenance=provenance, metrics_log=records, meta=meta)


def train_first_scale(dataset, scale: int, cfg: TrainConfig, ae: Autoencoder,
                      stage_index: int = 0, log=None) -> TrainedStage:
    """Stage-0 training on raw data targets (standard conditional SR)."""
    bank = dataset if isinstance(dataset, LatentBank) else LatentBank(dataset, ae, cfg.degrade_mode)
    net = build_denoiser(cfg.model, _seed_int(stage_seed(cfg.seed, stage_index, scale, tag=0)))
    z_h = bank.z_h()

    def step_fn(idx, ts, eps, rng):
        z_l = bank.batch_cond(idx, scale, rng)
        return sr_loss(net, z_h[idx], z_l, ts, eps, cfg.sched)

    return _train_stage(bank, cfg, stage_index, scale, PROVENANCE_RAW, step_fn, net, log=log)


def train_scale_student(teacher: TrainedStage, dataset, scale: int, prev_scale: int,
                        cfg: TrainConfig, ae: Autoencoder, stage_index: int = 1,
                        log=None) -> TrainedStage:
    """One scale-distillation stage: student inherits the teacher's weights
    and regresses onto the teacher's prediction; both see the same noisy
    latent, the teacher sees the less degraded conditioning."""
    if not teacher.net.frozen:
        raise FrozenNetError("scale distillation requires a frozen teacher")
    if scale <= prev_scale:
        raise ValueError(f"student scale {scale} must exceed teacher scale {prev_scale}")
    if teacher.scale != prev_scale:
        raise ValueError(f"teacher was trained at x{teacher.scale}, expected x{prev_scale}")
    bank = dataset if isinstance(dataset, LatentBank) else LatentBank(dataset, ae, cfg.degrade_mode)
    net = build_denoiser(cfg.model, _seed_int(stage_seed(cfg.seed, stage_index, scale, tag=0)))
    net.load_state_dict(teacher.net.state_dict())
    z_h = bank.z_h()

    def step_fn(idx, ts, eps, rng):
        z_l = bank.batch_cond(idx, scale, rng)
        z_lp = bank.batch_cond(idx, prev_scale, rng)
        z_t = add_noise(z_h[idx], eps, ts, cfg.sched)
        return distill_loss(net, teacher.net, z_t, z_l, z_lp, ts, cfg.sched)

    return _train_stage(bank, cfg, stage_index, scale, PROVENANCE_SCALE, step_fn, net, log=log)


def train_arch_student(big_teacher: TrainedStage, small_cfg: NetworkConfig, dataset,
                       scale: int, cfg: TrainConfig, ae: Autoencoder,
                       stage_index: int = 0, log=None) -> TrainedStage:
    """Architecture distillation: a narrower, freshly initialized student
    matches the frozen full-width teacher at the same scale; both see the
    identical (z_t, z_l, t)."""
    if not big_teacher.net.frozen:
        raise FrozenNetError("architecture distillation requires a frozen teacher")
    if big_teacher.scale != scale:
        raise ValueError(
            f"teacher was trained at x{big_teacher.scale}, cannot distill at x{scale}"
        )
    if small_cfg.width_scale >= big_teacher.net.config.width_scale:
        raise ValueError(
            "architecture distillation needs a narrower student "
            f"(width_scale {small_cfg.width_scale} vs teacher {big_teacher.net.config.width_scale})"
        )
    cfg = TrainConfig(model=small_cfg, steps_per_stage=cfg.steps_per_stage, batch=cfg.batch,
                      lr=cfg.lr, seed=cfg.seed, sched=cfg.sched, degrade_mode=cfg.degrade_mode)
    bank = dataset if isinstance(dataset, LatentBank) else LatentBank(dataset, ae, cfg.degrade_mode)
    net = build_denoiser(small_cfg, _seed_int(stage_seed(cfg.seed, stage_index, scale, tag=0)))
    z_h = bank.z_h()

    def step_fn(idx, ts, eps, rng):
        z_l = bank.batch_cond(idx, scale, rng)
        z_t = add_noise(z_h[idx], eps, ts, cfg.sched)
        return distill_loss(net, big_teacher.net, z_t, z_l, z_l, ts, cfg.sched)

    return _train_stage(bank, cfg, stage_index, scale, PROVENANCE_ARCH, step_fn, net, log=log)


def run_scale_schedule(dataset, schedule: ScaleSchedule, model_cfg: NetworkConfig,
                       ae: Autoencoder, sched: NoiseSchedule | None = None,
                       degrade_mode: DegradeMode | None = None,
                       preloaded=None, on_stage_complete=None, log=None):
    """Progressive scale-distillation over an increasing scale list.

    `preloaded` may hold already-trained leading stages (resume); each
    newly finished stage is passed to `on_stage_complete`.
    """
    schedule.validate()
    cfg = TrainConfig(
        model=model_cfg,
        steps_per_stage=schedule.steps_per_stage,
        batch=schedule.batch,
        lr=schedule.lr,
        seed=schedule.seed,
        sched=sched or NoiseSchedule(),
        degrade_mode=degrade_mode or DegradeMode(),
    )
    bank = dataset if isinstance(dataset, LatentBank) else LatentBank(dataset, ae, cfg.degrade_mode)
    stages = list(preloaded or [])
    for i, scale in enumerate(schedule.scales):
        if i < len(stages):
            if stages[i].scale != scale:
                raise ValueError(
                    f"preloaded stage {i} is x{stages[i].scale}, schedule expects x{scale}"
                )
            continue
        if i == 0:
            stage = train_first_scale(bank, scale, cfg, ae, stage_index=0, log=log)
        else:
            stage = train_scale_student(
                stages[i - 1], bank, scale, schedule.scales[i - 1], cfg, ae,
                stage_index=i, log=log,
            )
        stages.append(stage)
        if on_stage_complete is not None:
            on_stage_complete(stage)
    return stages
