"""Command-line harness: dataset generation, training, evaluation, ablation.

Subcommands: gen-data, train-ae, train, finetune-decoder, eval, ablate.
Exit codes: 0 success, 1 user error (bad config/arguments/files),
2 internal error. YONOS_THREADS caps the eval worker count.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .autoencoder import (
    AEConfig,
    Autoencoder,
    DecoderFinetuneConfig,
    build_autoencoder,
    finetune_decoder,
    train_autoencoder,
)
from .checkpoint import CheckpointError, load_checkpoint, load_meta, save_checkpoint, save_meta
from .data import generate_corpus, load_corpus
from .degradation import degrade
from .diffusion import NoiseSchedule
from .distill import (
    PROVENANCE_RAW,
    ScaleSchedule,
    TrainConfig,
    TrainedStage,
    run_scale_schedule,
    train_arch_student,
    train_first_scale,
    train_scale_student,
)
from .metrics import evaluate_pairs
from .nn import ConfigError, DenoiserNet, NetworkConfig, build_denoiser
from .sampler import SamplerConfig, SRPipeline, super_resolve_batch


class UserError(Exception):
    pass


def _worker_count() -> int:
    workers = os.cpu_count() or 1
    cap = os.environ.get("YONOS_THREADS")
    if cap is not None:
        try:
            workers = min(workers, max(1, int(cap)))
        except ValueError as exc:
            raise UserError(f"YONOS_THREADS must be an integer, got {cap!r}") from exc
    return workers


# ---------------------------------------------------------------------------
# checkpoint helpers


def save_denoiser(path, stage: TrainedStage):
    save_checkpoint(path, stage.net.state_dict())
    cfg = stage.net.config
    save_meta(path, {
        "kind": "denoiser",
        "config": {
            "base_channels": cfg.base_channels,
            "channel_mult": list(cfg.channel_mult),
            "depth": cfg.depth,
            "width_scale": cfg.width_scale,
            "time_embed_dim": cfg.time_embed_dim,
            "in_channels": cfg.in_channels,
            "out_channels": cfg.out_channels,
        },
        "frozen": True,
        "stage": stage.meta,
        "scale": stage.scale,
        "provenance": stage.provenance,
    })


def load_denoiser(path) -> tuple:
    meta = load_meta(path)
    if meta.get("kind") != "denoiser":
        raise UserError(f"{path} is not a denoiser checkpoint (kind={meta.get('kind')})")
    c = meta["config"]
    net = build_denoiser(NetworkConfig(
        base_channels=c["base_channels"],
        channel_mult=tuple(c["channel_mult"]),
        depth=c["depth"],
        width_scale=c["width_scale"],
        time_embed_dim=c["time_embed_dim"],
        in_channels=c["in_channels"],
        out_channels=c["out_channels"],
    ), seed=0)
    net.load_state_dict(load_checkpoint(path))
    if meta.get("frozen", True):
        net.freeze()
    return net, meta


def save_autoencoder(path, ae: Autoencoder):
    save_checkpoint(path, ae.state_dict())
    c = ae.config
    save_meta(path, {
        "kind": "autoencoder",
        "config": {
            "mode": c.mode,
            "latent_channels": c.latent_channels,
            "f": c.f,
            "base_channels": c.base_channels,
            "blocks_deep": c.blocks_deep,
        },
        "latent_scale": ae.latent_scale,
        "frozen": True,
    })


def _ae_from_meta(meta) -> Autoencoder:
    c = meta["config"]
    ae = build_autoencoder(AEConfig(
        mode=c["mode"],
        latent_channels=c["latent_channels"],
        f=c["f"],
        base_channels=c["base_channels"],
        blocks_deep=c["blocks_deep"],
    ), seed=0)
    ae.latent_scale = meta.get("latent_scale", 1.0)
    return ae


def load_autoencoder(path) -> Autoencoder:
    meta = load_meta(path)
    if meta.get("kind") != "autoencoder":
        raise UserError(f"{path} is not an autoencoder checkpoint (kind={meta.get('kind')})")
    ae = _ae_from_meta(meta)
    ae.load_state_dict(load_checkpoint(path))
    return ae.freeze()


def save_decoder(path, ae: Autoencoder):
    save_checkpoint(path, {k: v.value.copy() for k, v in ae.dec_params.items()})
    c = ae.config
    save_meta(path, {
        "kind": "decoder",
        "config": {
            "mode": c.mode,
            "latent_channels": c.latent_channels,
            "f": c.f,
            "base_channels": c.base_channels,
            "blocks_deep": c.blocks_deep,
        },
        "latent_scale": ae.latent_scale,
        "frozen": True,
    })


def apply_decoder(ae: Autoencoder, path) -> Autoencoder:
    meta = load_meta(path)
    if meta.get("kind") != "decoder":
        raise UserError(f"{path} is not a decoder checkpoint (kind={meta.get('kind')})")
    if meta["config"] != {
        "mode": ae.config.mode,
        "latent_channels": ae.config.latent_channels,
        "f": ae.config.f,
        "base_channels": ae.config.base_channels,
        "blocks_deep": ae.config.blocks_deep,
    }:
        raise UserError(f"decoder checkpoint {path} does not match the autoencoder config")
    out = ae.clone()
    state = load_checkpoint(path)
    for name, arr in state.items():
        if name not in out.dec_params:
            raise UserError(f"unexpected decoder parameter {name} in {path}")
        out.dec_params[name].value = np.asarray(arr, dtype=np.float32).copy()
    return out.freeze()


# ---------------------------------------------------------------------------
# shared command plumbing


def _load_cfg(args):
    if args.config:
        cfg = cfgmod.load_config(args.config)
    else:
        cfg = cfgmod.parse_config({})
    cfg = cfgmod.apply_overrides(cfg, getattr(args, "set", None))
    return cfg


def _archive_config(cfg, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _require_data(args, cfg):
    if not args.data:
        raise UserError("--data DIR is required (run gen-data first)")
    try:
        train, evals = load_corpus(args.data)
    except FileNotFoundError as exc:
        raise UserError(str(exc)) from exc
    return train, evals


def _resolve_ae(args, cfg, train_images, out_dir=None) -> Autoencoder:
    acfg = cfgmod.ae_config(cfg)
    if acfg.mode == "identity":
        return Autoencoder(acfg).freeze()
    if getattr(args, "ae", None):
        return load_autoencoder(args.ae)
    if out_dir is not None:
        cached = Path(out_dir) / "ae.ysrc"
        if cached.exists():
            return load_autoencoder(cached)
    print("[yonos] no --ae given; training the autoencoder first", flush=True)
    ae = train_autoencoder(train_images, acfg)
    if out_dir is not None:
        save_autoencoder(Path(out_dir) / "ae.ysrc", ae)
    return ae


def _open_log(out_dir):
    fh = open(Path(out_dir) / "train_log.jsonl", "a", encoding="utf-8")

    def log(rec):
        fh.write(json.dumps(rec, sort_keys=True) + "\n")

    return fh, log


def _stage_path(out_dir, index, scale):
    return Path(out_dir) / f"stage{index}_x{scale}.ysrc"


def _load_existing_stages(out_dir, scales, cfg_hash):
    """Resume support: load completed stage checkpoints in schedule order."""
    stages = []
    for i, s in enumerate(scales):
        path = _stage_path(out_dir, i, s)
        if not path.exists():
            break
        meta = load_meta(path)
        if meta.get("config_hash") != cfg_hash:
            break
        net, m = load_denoiser(path)
        stages.append(TrainedStage(scale=s, net=net, provenance=m["provenance"],
                                   metrics_log=[], meta=m["stage"]))
    return stages


def _save_stage(out_dir, index, stage, cfg_hash):
    path = _stage_path(out_dir, index, stage.scale)
    save_denoiser(path, stage)
    meta = load_meta(path)
    meta["config_hash"] = cfg_hash
    save_meta(path, meta)
    return path


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args):
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = generate_corpus(out, cfg, fmt=args.format)
    _archive_config(cfg, out)
    print(f"[yonos] wrote {len(manifest['images'])} images to {out}")
    return 0


def cmd_train_ae(args):
    cfg = _load_cfg(args)
    train_images, _ = _require_data(args, cfg)
    acfg = cfgmod.ae_config(cfg)
    if acfg.mode == "identity":
        raise UserError("ae.mode=identity needs no training")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _archive_config(cfg, out)
    t0 = time.perf_counter()
    ae = train_autoencoder(train_images, acfg)
    save_autoencoder(out / "ae.ysrc", ae)
    print(f"[yonos] autoencoder trained in {time.perf_counter() - t0:.0f}s -> {out / 'ae.ysrc'}")
    return 0


def _train_cfg(cfg, model: NetworkConfig) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        model=model,
        steps_per_stage=t["steps_per_stage"],
        batch=t["batch"],
        lr=t["lr"],
        seed=t["seed"],
        sched=NoiseSchedule(),
        degrade_mode=cfgmod.degrade_mode(cfg),
    )


def cmd_train(args):
    cfg = _load_cfg(args)
    train_images, _ = _require_data(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _archive_config(cfg, out)
    ae = _resolve_ae(args, cfg, train_images, out_dir=out)
    cfg_hash = cfgmod.config_hash(cfg)
    scales = cfg["scales"]
    model = cfgmod.network_config(cfg)
    fh, log = _open_log(out)
    try:
        if args.mode == "direct":
            scale = scales[-1]
            path = _stage_path(out, 0, scale)
            if path.exists() and load_meta(path).get("config_hash") == cfg_hash:
                print(f"[yonos] {path} already trained; nothing to do")
                return 0
            stage = train_first_scale(train_images, scale, _train_cfg(cfg, model), ae, log=log)
            _save_stage(out, 0, stage, cfg_hash)
        elif args.mode == "scale-distill":
            schedule = ScaleSchedule(
                scales=scales,
                steps_per_stage=cfg["train"]["steps_per_stage"],
                batch=cfg["train"]["batch"],
                lr=cfg["train"]["lr"],
                seed=cfg["train"]["seed"],
            )
            preloaded = _load_existing_stages(out, scales, cfg_hash)
            if preloaded:
                print(f"[yonos] resuming after {len(preloaded)} completed stage(s)")
            counter = {"i": len(preloaded)}

            def on_done(stage):
                _save_stage(out, counter["i"], stage, cfg_hash)
                counter["i"] += 1

            run_scale_schedule(
                train_images, schedule, model, ae,
                degrade_mode=cfgmod.degrade_mode(cfg),
                preloaded=preloaded, on_stage_complete=on_done, log=log,
            )
        elif args.mode == "arch-distill":
            _train_arch_pipeline(args, cfg, train_images, ae, out, model, cfg_hash, log)
        else:
            raise UserError(f"unknown train mode {args.mode}")
    finally:
        fh.close()
    print(f"[yonos] training complete -> {out}")
    return 0


def _train_arch_pipeline(args, cfg, train_images, ae, out, model, cfg_hash, log):
    """Architecture distillation at scales[0], then scale distillation of
    the small student through the remaining scales."""
    scales = cfg["scales"]
    tcfg = _train_cfg(cfg, model)
    if args.teacher:
        teacher_net, tmeta = load_denoiser(args.teacher)
        teacher = TrainedStage(scale=tmeta["scale"], net=teacher_net,
                               provenance=tmeta["provenance"], metrics_log=[],
                               meta=tmeta["stage"])
        if teacher.scale != scales[0]:
            raise UserError(
                f"--teacher is an x{teacher.scale} model, config scales start at x{scales[0]}"
            )
    else:
        print(f"[yonos] no --teacher given; training the full-width x{scales[0]} teacher first")
        teacher = train_first_scale(train_images, scales[0], tcfg, ae, log=log)
        path = Path(out) / f"teacher_x{scales[0]}.ysrc"
        save_denoiser(path, teacher)
    small_model = cfgmod.network_config(cfg, width_scale=args.width_scale)
    small_cfg = _train_cfg(cfg, small_model)
    stage = train_arch_student(teacher, small_model, train_images, scales[0], small_cfg, ae, log=log)
    _save_stage(out, 0, stage, cfg_hash)
    for i, scale in enumerate(scales[1:], start=1):
        stage = train_scale_student(stage, train_images, scale, scales[i - 1],
                                    small_cfg, ae, stage_index=i, log=log)
        _save_stage(out, i, stage, cfg_hash)


def cmd_finetune_decoder(args):
    cfg = _load_cfg(args)
    train_images, _ = _require_data(args, cfg)
    if args.sampler_steps != 1:
        raise UserError(f"decoder fine-tuning requires a 1-step sampler, got {args.sampler_steps}")
    unet, meta = load_denoiser(args.unet)
    ae = load_autoencoder(args.ae)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _archive_config(cfg, out)
    ft_cfg = DecoderFinetuneConfig(
        steps=args.ft_steps,
        batch=cfg["train"]["batch"],
        seed=cfg["train"]["seed"],
        scale=meta["scale"],
        degrade_mode=cfgmod.degrade_mode(cfg),
    )
    scfg = SamplerConfig(steps=1, seed=cfg["eval"]["seed"])
    tuned = finetune_decoder(ae, unet, scfg, train_images, ft_cfg)
    save_decoder(out / "decoder_ft.ysrc", tuned)
    print(f"[yonos] fine-tuned decoder -> {out / 'decoder_ft.ysrc'}")
    return 0


def _eval_seeds(eval_seed, n):
    return [int(s) for s in
            np.random.SeedSequence([int(eval_seed), 0x5A]).generate_state(n, dtype=np.uint32)]


def _degrade_eval_set(evals, scale, mode, data_seed):
    out = []
    for i, im in enumerate(evals):
        seed = int(np.random.SeedSequence([int(data_seed), 0xE0, int(i), int(scale)])
                   .generate_state(1, dtype=np.uint32)[0])
        out.append(degrade(im, scale, mode, seed))
    return np.stack(out)


def evaluate_pipeline(pipe: SRPipeline, evals, step_counts, cfg, chunk=32):
    """Metric rows (one per K) for a pipeline over the eval corpus."""
    mode = cfgmod.degrade_mode(cfg)
    lr_set = _degrade_eval_set(evals, pipe.scale, mode, cfg["data"]["seed"])
    seeds = _eval_seeds(cfg["eval"]["seed"], len(evals))
    workers = _worker_count()
    rows = []
    for K in step_counts:
        scfg = SamplerConfig(steps=K, seed=cfg["eval"]["seed"])
        chunks = [(lr_set[i : i + chunk], seeds[i : i + chunk])
                  for i in range(0, len(evals), chunk)]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                parts = list(ex.map(lambda c: super_resolve_batch(pipe, c[0], scfg, c[1]), chunks))
        else:
            parts = [super_resolve_batch(pipe, c, scfg, s) for c, s in chunks]
        sr = np.concatenate(parts, axis=0)
        report = evaluate_pairs(list(sr), list(evals))
        rows.append({"steps": K, "psnr": report.psnr_db, "ssim": report.ssim, "pfid": report.pfid})
    return rows


def _write_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("steps,psnr,ssim,pfid\n")
        for r in rows:
            fh.write(f"{r['steps']},{r['psnr']:.6f},{r['ssim']:.6f},{r['pfid']:.6f}\n")


def _write_plot_script(csv_path):
    gp = Path(str(csv_path) + ".gp")
    name = Path(csv_path).name
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set logscale x 2",
        "set xlabel 'DDIM steps'",
        "set ylabel 'pFID'",
        f"plot '{name}' using 1:4 with linespoints title 'pFID'",
    ]
    gp.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_pipeline(paths_csv, cfg) -> SRPipeline:
    net = None
    ae = None
    decoder_path = None
    scale = None
    for p in paths_csv.split(","):
        p = p.strip()
        if not p:
            continue
        meta = load_meta(p)
        kind = meta.get("kind")
        if kind == "denoiser":
            net, m = load_denoiser(p)
            scale = m["scale"]
        elif kind == "autoencoder":
            ae = load_autoencoder(p)
        elif kind == "decoder":
            decoder_path = p
        else:
            raise UserError(f"unrecognized checkpoint kind {kind!r} for {p}")
    if net is None:
        raise UserError("--pipeline needs a denoiser checkpoint")
    if ae is None:
        acfg = cfgmod.ae_config(cfg)
        if acfg.mode != "identity":
            raise UserError("--pipeline needs an autoencoder checkpoint for learned mode")
        ae = Autoencoder(acfg).freeze()
    if decoder_path is not None:
        ae = apply_decoder(ae, decoder_path)
    return SRPipeline(ae=ae, net=net, scale=scale)


def cmd_eval(args):
    cfg = _load_cfg(args)
    _, evals = _require_data(args, cfg)
    pipe = _load_pipeline(args.pipeline, cfg)
    if args.steps:
        step_counts = [int(k) for k in args.steps.split(",")]
        if any(k < 1 for k in step_counts):
            raise UserError(f"step counts must be >= 1, got {args.steps}")
    else:
        step_counts = cfg["eval"]["step_counts"]
    rows = evaluate_pipeline(pipe, list(evals), step_counts, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(out, rows)
    _write_plot_script(out)
    for r in rows:
        print(f"[yonos] K={r['steps']}: psnr={r['psnr']:.3f} ssim={r['ssim']:.4f} pfid={r['pfid']:.3f}")
    return 0


def cmd_ablate(args):
    cfg = _load_cfg(args)
    train_images, evals = _require_data(args, cfg)
    scales = cfg["scales"]
    if len(scales) < 2:
        raise UserError("ablate needs at least two scales (teacher scale plus a target)")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _archive_config(cfg, out)
    ae = _resolve_ae(args, cfg, train_images, out_dir=out)
    cfg_hash = cfgmod.config_hash(cfg)
    model = cfgmod.network_config(cfg)
    fh, log = _open_log(out)
    try:
        schedule = ScaleSchedule(
            scales=scales,
            steps_per_stage=cfg["train"]["steps_per_stage"],
            batch=cfg["train"]["batch"],
            lr=cfg["train"]["lr"],
            seed=cfg["train"]["seed"],
        )
        dist_dir = out / "scale_distill"
        dist_dir.mkdir(exist_ok=True)
        preloaded = _load_existing_stages(dist_dir, scales, cfg_hash)
        counter = {"i": len(preloaded)}

        def on_done(stage):
            _save_stage(dist_dir, counter["i"], stage, cfg_hash)
            counter["i"] += 1

        stages = run_scale_schedule(train_images, schedule, model, ae,
                                    degrade_mode=cfgmod.degrade_mode(cfg),
                                    preloaded=preloaded, on_stage_complete=on_done, log=log)
        results = []
        for target in scales[1:]:
            distilled = stages[scales.index(target)]
            direct_dir = out / f"direct_x{target}"
            direct_dir.mkdir(exist_ok=True)
            dpath = _stage_path(direct_dir, 0, target)
            if dpath.exists() and load_meta(dpath).get("config_hash") == cfg_hash:
                dnet, dmeta = load_denoiser(dpath)
                direct = TrainedStage(scale=target, net=dnet, provenance=dmeta["provenance"],
                                      metrics_log=[], meta=dmeta["stage"])
            else:
                direct = train_first_scale(train_images, target, _train_cfg(cfg, model), ae, log=log)
                _save_stage(direct_dir, 0, direct, cfg_hash)
            if direct.meta["steps"] != distilled.meta["steps"] or \
               direct.meta["batch"] != distilled.meta["batch"] or \
               direct.meta["lr"] != distilled.meta["lr"]:
                raise RuntimeError("budget mismatch between ablation cells")
            for label, stage in (("direct", direct), ("distilled", distilled)):
                ft_path = out / f"decoder_ft_{label}_x{target}.ysrc"
                if ft_path.exists():
                    tuned = apply_decoder(ae, ft_path)
                else:
                    ft_cfg = DecoderFinetuneConfig(
                        steps=args.ft_steps, batch=cfg["train"]["batch"],
                        seed=cfg["train"]["seed"], scale=target,
                        degrade_mode=cfgmod.degrade_mode(cfg))
                    tuned = finetune_decoder(ae, stage.net,
                                             SamplerConfig(steps=1, seed=cfg["eval"]["seed"]),
                                             train_images, ft_cfg)
                    save_decoder(ft_path, tuned)
                for dec_label, dec_ae in (("original", ae), ("finetuned", tuned)):
                    pipe = SRPipeline(ae=dec_ae, net=stage.net, scale=target)
                    row = evaluate_pipeline(pipe, list(evals), [1], cfg)[0]
                    results.append({
                        "scale": target,
                        "training": label,
                        "decoder": dec_label,
                        "steps_budget": stage.meta["steps"],
                        **row,
                    })
                    print(f"[yonos] x{target} {label}/{dec_label}: "
                          f"pfid={row['pfid']:.3f} psnr={row['psnr']:.3f}")
        _write_ablation_outputs(out, results)
    finally:
        fh.close()
    print(f"[yonos] ablation table -> {out / 'ablation.md'}")
    return 0


def _write_ablation_outputs(out_dir, results):
    csv_path = Path(out_dir) / "ablation.csv"
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("scale,training,decoder,steps,psnr,ssim,pfid\n")
        for r in results:
            fh.write(f"{r['scale']},{r['training']},{r['decoder']},{r['steps']},"
                     f"{r['psnr']:.6f},{r['ssim']:.6f},{r['pfid']:.6f}\n")
    md_path = Path(out_dir) / "ablation.md"
    by_scale = {}
    for r in results:
        by_scale.setdefault(r["scale"], {})[(r["training"], r["decoder"])] = r
    lines = ["# Scale distillation x decoder fine-tuning (1-step DDIM)", ""]
    for scale, cells in sorted(by_scale.items()):
        lines += [f"## x{scale}", "",
                  "| metric | direct / original | distilled / original | direct / fine-tuned | distilled / fine-tuned |",
                  "|---|---|---|---|---|"]
        order = [("direct", "original"), ("distilled", "original"),
                 ("direct", "finetuned"), ("distilled", "finetuned")]
        for metric, fmt in (("pfid", "{:.3f}"), ("psnr", "{:.3f}"), ("ssim", "{:.4f}")):
            row = [fmt.format(cells[k][metric]) if k in cells else "-" for k in order]
            lines.append(f"| {metric} | " + " | ".join(row) + " |")
        lines.append("")
    md_path.write_text("\n".join(lines), encoding="utf-8")


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="yonos",
                                description="Desk-scale scale-distilled diffusion super-resolution")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="experiment config JSON (defaults apply if omitted)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="config override, e.g. --set train.lr=1e-4")
        if data:
            sp.add_argument("--data", help="corpus directory from gen-data")

    sp = sub.add_parser("gen-data", help="generate the texture corpus")
    common(sp, data=False)
    sp.add_argument("--out", required=True)
    sp.add_argument("--format", choices=("pgm", "png"), default="pgm")
    sp.set_defaults(fn=cmd_gen_data)

    sp = sub.add_parser("train-ae", help="train the autoencoder")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_train_ae)

    sp = sub.add_parser("train", help="train denoiser(s)")
    common(sp)
    sp.add_argument("--mode", choices=("direct", "scale-distill", "arch-distill"), required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--ae", help="autoencoder checkpoint (trained on demand if omitted)")
    sp.add_argument("--teacher", help="frozen teacher checkpoint for arch-distill")
    sp.add_argument("--width-scale", type=float, default=0.5,
                    help="width of the small arch-distill student")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("finetune-decoder", help="fine-tune the decoder on 1-step outputs")
    common(sp)
    sp.add_argument("--unet", required=True)
    sp.add_argument("--ae", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--sampler-steps", type=int, default=1)
    sp.add_argument("--ft-steps", type=int, default=1500)
    sp.set_defaults(fn=cmd_finetune_decoder)

    sp = sub.add_parser("eval", help="evaluate a pipeline over DDIM step counts")
    common(sp)
    sp.add_argument("--pipeline", required=True,
                    help="comma-separated checkpoints (denoiser[,autoencoder][,decoder])")
    sp.add_argument("--steps", help="comma-separated step counts (default: config eval.step_counts)")
    sp.add_argument("--out", required=True, help="output CSV path")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("ablate", help="2x2 grid: training mode x decoder, 1-step DDIM")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--ae", help="autoencoder checkpoint")
    sp.add_argument("--ft-steps", type=int, default=1500)
    sp.set_defaults(fn=cmd_ablate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (UserError, ConfigError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # internal failure
        import traceback

        traceback.print_exc()
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
