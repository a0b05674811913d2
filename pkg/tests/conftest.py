"""Shared fixtures and the on-disk artifact cache for expensive runs.

Trained models used by module tests and the acceptance suite are built
once per (config, code) fingerprint and cached under .test_artifacts/
(override with YONOS_TEST_CACHE), so a warm suite re-run avoids the
multi-hour training cost while a change to the generator, architecture
or training configs invalidates the right entries.
"""

import hashlib
import json
import os
from pathlib import Path

import numpy as np
import pytest

from yonos.autoencoder import AEConfig, AETrainConfig, train_autoencoder
from yonos.checkpoint import load_checkpoint, load_meta, save_checkpoint, save_meta
from yonos.degradation import gen_texture

CACHE_VERSION = 1  # bump to invalidate every cached artifact


def cache_dir() -> Path:
    root = os.environ.get("YONOS_TEST_CACHE", Path(__file__).resolve().parent.parent / ".test_artifacts")
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def fingerprint(parts) -> str:
    """Content key: explicit params plus a texture-generator probe."""
    probe = gen_texture(123456, 16, 16).tobytes()
    blob = json.dumps(parts, sort_keys=True, default=str).encode() + probe
    blob += str(CACHE_VERSION).encode()
    return hashlib.sha256(blob).hexdigest()[:20]


@pytest.fixture(scope="session")
def texture_corpus():
    """Default-scale corpus: 2000 train + 128 eval 64x64 textures."""
    train = np.stack([gen_texture(s, 64, 64) for s in range(2000)])
    evals = np.stack([gen_texture(100_000 + s, 64, 64) for s in range(128)])
    return train, evals


@pytest.fixture(scope="session")
def small_corpus():
    train = np.stack([gen_texture(s, 32, 32) for s in range(256)])
    evals = np.stack([gen_texture(50_000 + s, 32, 32) for s in range(66)])
    return train, evals


DEFAULT_AE_CONFIG = AEConfig()
DEFAULT_AE_TRAIN = AETrainConfig()


@pytest.fixture(scope="session")
def trained_ae(texture_corpus):
    """The default learned autoencoder, cached on disk."""
    from yonos.cli import load_autoencoder, save_autoencoder

    train, _ = texture_corpus
    key = fingerprint({
        "what": "default-ae",
        "cfg": DEFAULT_AE_CONFIG,
        "train": DEFAULT_AE_TRAIN,
        "n": len(train),
    })
    path = cache_dir() / f"ae_{key}.ysrc"
    if path.exists():
        return load_autoencoder(path)
    ae = train_autoencoder(train, DEFAULT_AE_CONFIG, DEFAULT_AE_TRAIN)
    save_autoencoder(path, ae)
    return ae


def cached_stage(name, key_parts, builder):
    """Generic disk cache for a TrainedStage."""
    from yonos.cli import load_denoiser, save_denoiser
    from yonos.distill import TrainedStage

    key = fingerprint({"what": name, **key_parts})
    path = cache_dir() / f"{name}_{key}.ysrc"
    if path.exists():
        net, meta = load_denoiser(path)
        return TrainedStage(scale=meta["scale"], net=net, provenance=meta["provenance"],
                            metrics_log=_load_log(path), meta=meta["stage"])
    stage = builder()
    save_denoiser(path, stage)
    _save_log(path, stage.metrics_log)
    return stage


def _log_path(path):
    return Path(str(path) + ".log.json")


def _save_log(path, records):
    slim = [{"stage": r["stage"], "step": r["step"], "loss": r["loss"]} for r in records]
    _log_path(path).write_text(json.dumps(slim), encoding="utf-8")


def _load_log(path):
    lp = _log_path(path)
    if lp.exists():
        return json.loads(lp.read_text(encoding="utf-8"))
    return []


# ---------------------------------------------------------------------------
# heavy trained artifacts for the directional acceptance criteria
# (all at the default experiment config; cached on disk across runs)


def default_experiment():
    from yonos.config import parse_config

    return parse_config({})


def default_train_cfg(model=None):
    from yonos.config import network_config
    from yonos.distill import TrainConfig

    cfg = default_experiment()
    return TrainConfig(
        model=model or network_config(cfg),
        steps_per_stage=cfg["train"]["steps_per_stage"],
        batch=cfg["train"]["batch"],
        lr=cfg["train"]["lr"],
        seed=cfg["train"]["seed"],
    )


def _train_key(tcfg):
    return {
        "model": tcfg.model,
        "steps": tcfg.steps_per_stage,
        "batch": tcfg.batch,
        "lr": tcfg.lr,
        "seed": tcfg.seed,
        "ae": (DEFAULT_AE_CONFIG, DEFAULT_AE_TRAIN),
    }


@pytest.fixture(scope="session")
def default_stages(texture_corpus, trained_ae):
    """Scale-distillation stages for [2, 4, 8] at the default config."""
    from yonos.distill import ScaleSchedule, run_scale_schedule

    train, _ = texture_corpus
    tcfg = default_train_cfg()
    cfg = default_experiment()
    schedule = ScaleSchedule(scales=cfg["scales"], steps_per_stage=tcfg.steps_per_stage,
                             batch=tcfg.batch, lr=tcfg.lr, seed=tcfg.seed)
    stages = []
    for i, scale in enumerate(cfg["scales"]):
        def build(i=i, scale=scale):
            got = run_scale_schedule(train, schedule, tcfg.model, trained_ae,
                                     preloaded=list(stages))
            return got[i]

        stages.append(cached_stage(f"dist_stage{i}_x{scale}",
                                   {**_train_key(tcfg), "stage": i, "scale": scale}, build))
    return stages


def _direct_stage(train, trained_ae, scale):
    from yonos.distill import train_first_scale

    tcfg = default_train_cfg()

    def build():
        return train_first_scale(train, scale, tcfg, trained_ae)

    return cached_stage(f"direct_x{scale}", {**_train_key(tcfg), "direct": scale}, build)


@pytest.fixture(scope="session")
def direct4_stage(texture_corpus, trained_ae):
    return _direct_stage(texture_corpus[0], trained_ae, 4)


@pytest.fixture(scope="session")
def direct8_stage(texture_corpus, trained_ae):
    return _direct_stage(texture_corpus[0], trained_ae, 8)


def small_model_config():
    from yonos.config import network_config

    return network_config(default_experiment(), width_scale=0.5)


@pytest.fixture(scope="session")
def small_direct4(texture_corpus, trained_ae):
    from yonos.distill import train_first_scale

    tcfg = default_train_cfg(small_model_config())

    def build():
        return train_first_scale(texture_corpus[0], 4, tcfg, trained_ae)

    return cached_stage("small_direct_x4", {**_train_key(tcfg), "direct": 4}, build)


@pytest.fixture(scope="session")
def small_arch4(texture_corpus, trained_ae, direct4_stage):
    from yonos.distill import train_arch_student

    tcfg = default_train_cfg(small_model_config())

    def build():
        return train_arch_student(direct4_stage, tcfg.model, texture_corpus[0], 4,
                                  tcfg, trained_ae)

    return cached_stage("small_arch_x4", {**_train_key(tcfg), "arch": 4}, build)


@pytest.fixture(scope="session")
def small_combined4(texture_corpus, trained_ae, default_stages):
    """Architecture distillation at x2, then scale distillation to x4."""
    from yonos.distill import train_arch_student, train_scale_student

    tcfg = default_train_cfg(small_model_config())

    def build_arch2():
        return train_arch_student(default_stages[0], tcfg.model, texture_corpus[0], 2,
                                  tcfg, trained_ae)

    arch2 = cached_stage("small_arch_x2", {**_train_key(tcfg), "arch": 2}, build_arch2)

    def build():
        return train_scale_student(arch2, texture_corpus[0], 4, 2, tcfg, trained_ae,
                                   stage_index=1)

    return cached_stage("small_combined_x4", {**_train_key(tcfg), "combined": (2, 4)}, build)


def cached_ft_decoder(name, trained_ae, stage, train_images):
    from yonos.autoencoder import DecoderFinetuneConfig, finetune_decoder
    from yonos.cli import apply_decoder, save_decoder
    from yonos.sampler import SamplerConfig

    ft_cfg = DecoderFinetuneConfig(scale=stage.scale)
    key = fingerprint({"what": name, "ft": ft_cfg, "stage": stage.meta,
                       "ae": (DEFAULT_AE_CONFIG, DEFAULT_AE_TRAIN)})
    path = cache_dir() / f"{name}_{key}.ysrc"
    if path.exists():
        return apply_decoder(trained_ae, path)
    tuned = finetune_decoder(trained_ae, stage.net, SamplerConfig(steps=1, seed=0),
                             train_images, ft_cfg)
    save_decoder(path, tuned)
    return tuned


@pytest.fixture(scope="session")
def ft_decoder_direct4(texture_corpus, trained_ae, direct4_stage):
    return cached_ft_decoder("ftdec_direct4", trained_ae, direct4_stage, texture_corpus[0])


@pytest.fixture(scope="session")
def ft_decoder_dist4(texture_corpus, trained_ae, default_stages):
    return cached_ft_decoder("ftdec_dist4", trained_ae, default_stages[1], texture_corpus[0])
