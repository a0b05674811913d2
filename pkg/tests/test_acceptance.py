"""Acceptance suite: one test per criterion, one printed PASS line each.

Criteria 1-7 are exact/property checks and run in minutes. Criteria 8-12
retrain the default configuration (cached under .test_artifacts/) and
reproduce the directional orderings: scale distillation helps few-step
sampling, more so at x8; decoder fine-tuning helps both training modes
and combines best with distillation; architecture distillation beats
raw-data training for the half-width model; and every trained x2/x4
pipeline beats plain bicubic upsampling at 8 steps.
"""

import time

import numpy as np
import pytest

from yonos import autodiff as ad
from yonos import cli
from yonos.autoencoder import (
    AEConfig,
    AETrainConfig,
    Autoencoder,
    DecoderFinetuneConfig,
    finetune_decoder,
    train_autoencoder,
)
from yonos.degradation import bicubic_kernel, bicubic_resize, degrade, gen_texture, resize_like
from yonos.diffusion import NoiseSchedule, add_noise, from_v, loss_weight, schedule_eval, v_target
from yonos.distill import TrainConfig, train_first_scale, train_scale_student
from yonos.metrics import GaussianFit, frechet_distance, psnr, sqrtm_psd, ssim
from yonos.nn import NetworkConfig, build_denoiser, loss_and_grads
from yonos.sampler import SamplerConfig, SRPipeline, ddim_sample
from yonos.config import parse_config

SCHED = NoiseSchedule()


def report(criterion, detail):
    print(f"\n[criterion {criterion}] PASS  {detail}")


# ---------------------------------------------------------------------------
# 1. gradient check


def test_criterion_1_gradient_check():
    t0 = time.perf_counter()
    cfg = NetworkConfig(base_channels=4, channel_mult=(0.5,), depth=1, width_scale=1.0,
                        time_embed_dim=2, in_channels=2, out_channels=1)
    net = build_denoiser(cfg, seed=3)
    assert net.param_count() <= 1000
    net64 = net.astype(np.float64)
    rng = np.random.default_rng(0)
    zt = rng.standard_normal((1, 8, 8, 1))
    zc = rng.standard_normal((1, 8, 8, 1))
    tgt = rng.standard_normal((1, 8, 8, 1))
    ts = np.array([0.37])

    def loss_fn():
        v = net64.forward_vars(ad.leaf(zt), ad.leaf(zc), ts)
        return ad.vsum(ad.square(ad.sub(v, ad.leaf(tgt))))

    _, grads = loss_and_grads(net64, loss_fn)
    h = 1e-3
    worst = 0.0
    checked = 0
    for name, var in net64.params.items():
        flat = var.value.reshape(-1)
        g = grads[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            lp = loss_fn().value
            flat[k] = orig - h
            lm = loss_fn().value
            flat[k] = orig
            fd = (lp - lm) / (2 * h)
            checked += 1
            if abs(fd) < 1e-6 and abs(g[k]) < 1e-6:
                continue
            rel = abs(fd - g[k]) / max(abs(fd), abs(g[k]))
            worst = max(worst, rel)
            assert rel < 1e-3, f"{name}[{k}] rel err {rel}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    report(1, f"{checked} params checked, worst rel err {worst:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. schedule identities


def test_criterion_2_schedule_identities():
    ts = np.linspace(0.0, 1.0, 1000)
    a, s, _ = schedule_eval(SCHED, ts)
    vp_err = np.abs(a * a + s * s - 1.0).max()
    assert vp_err <= 1e-12
    tc = np.linspace(SCHED.t_clip, 1 - SCHED.t_clip, 1000)
    _, _, lam = schedule_eval(SCHED, tc)
    assert np.all(np.diff(lam) < 0)
    rng = np.random.default_rng(1)
    rt_err = 0.0
    for t in rng.uniform(0, 1, 50):
        zh = rng.standard_normal((2, 8, 8)).astype(np.float32)
        eps = rng.standard_normal((2, 8, 8)).astype(np.float32)
        zt = add_noise(zh, eps, t, SCHED)
        x0, eh = from_v(zt, v_target(zh, eps, t, SCHED), t, SCHED)
        rt_err = max(rt_err, np.abs(x0 - zh).max(), np.abs(eh - eps).max())
    assert rt_err <= 1e-6
    net = build_denoiser(NetworkConfig(base_channels=4, channel_mult=(1,), depth=1,
                                       time_embed_dim=4, in_channels=2, out_channels=1), 5)
    worst_rel = 0.0
    for t in rng.uniform(0.02, 0.98, 20):
        zh = rng.standard_normal((1, 8, 8)).astype(np.float32)
        zl = rng.standard_normal((1, 8, 8)).astype(np.float32)
        eps = rng.standard_normal((1, 8, 8)).astype(np.float32)
        zt = add_noise(zh, eps, t, SCHED)
        v_hat = net.forward(zt, zl, float(t))
        x0_hat, _ = from_v(zt, v_hat, t, SCHED)
        v_mse = float(np.mean((v_hat - v_target(zh, eps, t, SCHED)) ** 2))
        x_mse = float(loss_weight(SCHED, t) * np.mean((x0_hat - zh) ** 2))
        worst_rel = max(worst_rel, abs(v_mse - x_mse) / max(v_mse, 1e-12))
    assert worst_rel < 1e-5
    report(2, f"VP err {vp_err:.1e}, round trip {rt_err:.1e}, loss identity rel {worst_rel:.1e}")


# ---------------------------------------------------------------------------
# 3. sampler oracle


class _OracleNet:
    frozen = True

    def __init__(self, x0):
        self.x0 = x0
        self.calls = 0

    def forward(self, z_t, z_l, t):
        self.calls += 1
        a, s, _ = schedule_eval(SCHED, t)
        eps = (z_t - a * self.x0) / s
        return (a * eps - s * self.x0).astype(np.float32)


def test_criterion_3_sampler_oracle():
    rng = np.random.default_rng(2)
    x0 = rng.standard_normal((2, 16, 16)).astype(np.float32)
    worst = 0.0
    for k in (1, 2, 8):
        net = _OracleNet(x0)
        out = ddim_sample(net, np.zeros_like(x0), SamplerConfig(steps=k, seed=11))
        err = np.abs(out - x0).max()
        worst = max(worst, err)
        assert err <= 1e-5
        assert net.calls == k
    report(3, f"perfect-v oracle max err {worst:.1e} over K in {{1,2,8}}, call counts exact")


# ---------------------------------------------------------------------------
# 4. metric oracles


def test_criterion_4_metric_oracles():
    base = np.full((16, 16), 0.4)
    assert abs(psnr(base, base + 0.1) - 20.0) < 1e-9
    assert abs(psnr(base, base + 0.01) - 40.0) < 1e-9
    val = ssim(np.full((8, 8), 0.5), np.full((8, 8), 0.7))
    expected = (2 * 0.5 * 0.7 + 1e-4) / (0.25 + 0.49 + 1e-4)
    assert abs(val - expected) < 1e-12
    assert abs(val - 0.94595) < 1e-4
    rng = np.random.default_rng(3)
    a = rng.standard_normal((64, 64))
    cov = a @ a.T / 64
    g = GaussianFit(rng.random(64), cov)
    assert frechet_distance(g, g) < 1e-6
    mu2 = np.zeros(64)
    mu2[0] = 3.0
    assert abs(frechet_distance(GaussianFit(np.zeros(64), np.eye(64)),
                                GaussianFit(mu2, np.eye(64))) - 9.0) < 1e-6
    c1 = np.diag(rng.uniform(0.5, 2.0, 64))
    c2 = np.diag(rng.uniform(0.5, 2.0, 64))
    expected_diag = np.sum((np.sqrt(np.diag(c1)) - np.sqrt(np.diag(c2))) ** 2)
    got = frechet_distance(GaussianFit(np.zeros(64), c1), GaussianFit(np.zeros(64), c2))
    assert abs(got - expected_diag) < 1e-8
    m = a @ a.T + 0.05 * np.eye(64)
    s = sqrtm_psd(m)
    rel = np.linalg.norm(s @ s - m) / np.linalg.norm(m)
    assert rel <= 1e-6
    report(4, f"PSNR/SSIM/Fréchet closed forms exact, sqrt rel err {rel:.1e}")


# ---------------------------------------------------------------------------
# 5. freezing / initialization contracts


def test_criterion_5_freezing_contracts():
    imgs = [gen_texture(i, 32, 32) for i in range(24)]
    ae_id = Autoencoder(AEConfig(mode="identity")).freeze()
    model = NetworkConfig(base_channels=8, channel_mult=(1, 1), depth=2,
                          time_embed_dim=8, in_channels=2, out_channels=1)
    cfg = TrainConfig(model=model, steps_per_stage=5, batch=4, lr=1e-3, seed=0)
    teacher = train_first_scale(imgs, 2, cfg, ae_id)
    teacher_bytes = {k: v.value.tobytes() for k, v in teacher.net.params.items()}

    init_student = train_scale_student(teacher, imgs, 4, 2,
                                       TrainConfig(model=model, steps_per_stage=0,
                                                   batch=4, lr=1e-3, seed=0), ae_id)
    ts_, ss_ = teacher.net.state_dict(), init_student.net.state_dict()
    assert all(np.array_equal(ts_[k], ss_[k]) for k in ts_)

    train_scale_student(teacher, imgs, 4, 2, cfg, ae_id, stage_index=1)
    assert {k: v.value.tobytes() for k, v in teacher.net.params.items()} == teacher_bytes

    ae = train_autoencoder(imgs, AEConfig(base_channels=8, blocks_deep=1),
                           AETrainConfig(steps=5, batch=4, seed=1, crop=0))
    unet = build_denoiser(NetworkConfig(base_channels=8, channel_mult=(1, 1), depth=2,
                                        time_embed_dim=8, in_channels=4, out_channels=2),
                          seed=2).freeze()
    enc_bytes = {k: v.value.tobytes() for k, v in ae.enc_params.items()}
    unet_bytes = {k: v.value.tobytes() for k, v in unet.params.items()}
    finetune_decoder(ae, unet, SamplerConfig(steps=1, seed=0), imgs,
                     DecoderFinetuneConfig(steps=3, batch=4, scale=2))
    assert {k: v.value.tobytes() for k, v in ae.enc_params.items()} == enc_bytes
    assert {k: v.value.tobytes() for k, v in unet.params.items()} == unet_bytes
    report(5, "teacher/encoder/U-Net bytes stable; student init inherits teacher weights")


# ---------------------------------------------------------------------------
# 6. bicubic kernel


def test_criterion_6_bicubic_kernel():
    worst = 0.0
    for phi in np.linspace(0, 1, 1001, endpoint=False):
        w = bicubic_kernel(np.array([phi + 1.0, phi, phi - 1.0, phi - 2.0]))
        worst = max(worst, abs(w.sum() - 1.0))
    assert worst <= 1e-9
    row = np.array([[0.0, 1.0, 0.0, 0.0]], dtype=np.float32)
    out = bicubic_resize(row, 1, 8)[0]
    expected = np.array([0.0, 0.2265625, 0.8671875, 0.8671875, 0.2265625, 0.0, 0.0, 0.0],
                        dtype=np.float32)
    np.testing.assert_array_equal(out, expected)
    report(6, f"partition-of-unity err {worst:.1e}; hand-derived upsample exact")


# ---------------------------------------------------------------------------
# 7. reproducibility (tiny config, twice, byte-identical CSVs)


TINY_REPRO = [
    "--set", "data.n_train=128",
    "--set", "data.n_eval=66",
    "--set", "data.hr_size=32",
    "--set", "scales=[2,4]",
    "--set", "train.steps_per_stage=500",
    "--set", "train.batch=8",
    "--set", 'ae.mode="identity"',
    "--set", "model.base_channels=8",
    "--set", "model.channel_mult=[1,1]",
    "--set", "eval.step_counts=[1,4]",
]


def test_criterion_7_full_pipeline_reproducibility(tmp_path):
    t0 = time.perf_counter()
    csvs = []
    for run in ("a", "b"):
        root = tmp_path / run
        data = root / "corpus"
        assert cli.main(["gen-data", "--out", str(data), *TINY_REPRO]) == 0
        model = root / "model"
        assert cli.main(["train", "--mode", "scale-distill", "--data", str(data),
                         "--out", str(model), *TINY_REPRO]) == 0
        out = root / "metrics.csv"
        assert cli.main(["eval", "--data", str(data),
                         "--pipeline", str(model / "stage1_x4.ysrc"),
                         "--out", str(out), *TINY_REPRO]) == 0
        csvs.append(out.read_bytes())
    elapsed = time.perf_counter() - t0
    assert csvs[0] == csvs[1]
    assert elapsed < 600.0
    report(7, f"gen-data -> train -> eval twice: byte-identical CSVs in {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 8-12. directional reproduction suite (default config; cached artifacts)


def _eval_rows(pipe, evals, step_counts):
    return cli.evaluate_pipeline(pipe, list(evals), step_counts, parse_config({}))


def _pfid1(pipe, evals):
    return _eval_rows(pipe, evals, [1])[0]["pfid"]


@pytest.mark.heavy
def test_criterion_8_distillation_beats_direct_at_one_step(
        texture_corpus, trained_ae, default_stages, direct4_stage):
    _, evals = texture_corpus
    dist4 = SRPipeline(ae=trained_ae, net=default_stages[1].net, scale=4)
    direct4 = SRPipeline(ae=trained_ae, net=direct4_stage.net, scale=4)
    p_dist = _pfid1(dist4, evals)
    p_direct = _pfid1(direct4, evals)
    assert p_dist < 0.95 * p_direct, f"distilled {p_dist:.3f} vs direct {p_direct:.3f}"
    report(8, f"1-step pFID distilled x4 {p_dist:.3f} < direct x4 {p_direct:.3f} "
              f"({100 * (1 - p_dist / p_direct):.1f}% better)")


@pytest.mark.heavy
def test_criterion_9_distillation_helps_more_at_x8(
        texture_corpus, trained_ae, default_stages, direct4_stage, direct8_stage):
    _, evals = texture_corpus
    p_dist4 = _pfid1(SRPipeline(ae=trained_ae, net=default_stages[1].net, scale=4), evals)
    p_direct4 = _pfid1(SRPipeline(ae=trained_ae, net=direct4_stage.net, scale=4), evals)
    p_dist8 = _pfid1(SRPipeline(ae=trained_ae, net=default_stages[2].net, scale=8), evals)
    p_direct8 = _pfid1(SRPipeline(ae=trained_ae, net=direct8_stage.net, scale=8), evals)
    rel4 = (p_direct4 - p_dist4) / p_direct4
    rel8 = (p_direct8 - p_dist8) / p_direct8
    assert rel8 > rel4, f"x8 improvement {rel8:.3f} <= x4 improvement {rel4:.3f}"
    report(9, f"relative 1-step pFID gain: x8 {100 * rel8:.1f}% > x4 {100 * rel4:.1f}% "
              f"(x4: {p_direct4:.3f}->{p_dist4:.3f}; x8: {p_direct8:.3f}->{p_dist8:.3f})")


@pytest.mark.heavy
def test_criterion_10_decoder_finetuning_grid(
        texture_corpus, trained_ae, default_stages, direct4_stage,
        ft_decoder_direct4, ft_decoder_dist4):
    _, evals = texture_corpus
    cells = {}
    for train_label, stage, ft_ae in (
        ("direct", direct4_stage, ft_decoder_direct4),
        ("distilled", default_stages[1], ft_decoder_dist4),
    ):
        for dec_label, ae in (("original", trained_ae), ("finetuned", ft_ae)):
            rows = _eval_rows(SRPipeline(ae=ae, net=stage.net, scale=4), evals, [1])
            cells[(train_label, dec_label)] = rows[0]
    for label in ("direct", "distilled"):
        orig = cells[(label, "original")]
        tuned = cells[(label, "finetuned")]
        assert tuned["pfid"] < orig["pfid"], f"{label}: ft pfid {tuned['pfid']:.3f} vs {orig['pfid']:.3f}"
        assert tuned["psnr"] > orig["psnr"], f"{label}: ft psnr {tuned['psnr']:.3f} vs {orig['psnr']:.3f}"
    best = min(cells, key=lambda k: cells[k]["pfid"])
    assert best == ("distilled", "finetuned"), f"best cell was {best}"
    grid = {f"{a}/{b}": round(v["pfid"], 3) for (a, b), v in cells.items()}
    report(10, f"1-step pFID grid {grid}; fine-tuning improves pFID+PSNR for both, "
               f"distilled+finetuned is best")


@pytest.mark.heavy
def test_criterion_11_architecture_distillation(
        texture_corpus, trained_ae, small_direct4, small_arch4, small_combined4):
    _, evals = texture_corpus
    p_raw = _pfid1(SRPipeline(ae=trained_ae, net=small_direct4.net, scale=4), evals)
    p_arch = _pfid1(SRPipeline(ae=trained_ae, net=small_arch4.net, scale=4), evals)
    p_comb = _pfid1(SRPipeline(ae=trained_ae, net=small_combined4.net, scale=4), evals)
    assert p_arch < 0.95 * p_raw, f"arch {p_arch:.3f} vs raw {p_raw:.3f}"
    assert p_comb < 0.95 * min(p_arch, p_raw), f"combined {p_comb:.3f} vs {p_arch:.3f}/{p_raw:.3f}"
    report(11, f"small-model 1-step pFID: raw {p_raw:.3f}, arch-distilled {p_arch:.3f}, "
               f"arch@x2 + scale x2->x4 {p_comb:.3f} (best)")


@pytest.mark.heavy
def test_criterion_12_utility_floor_beats_bicubic(
        texture_corpus, trained_ae, default_stages, direct4_stage,
        small_direct4, small_arch4, small_combined4):
    _, evals = texture_corpus
    cfg = parse_config({})
    pipelines = {
        "x2 first-stage": SRPipeline(ae=trained_ae, net=default_stages[0].net, scale=2),
        "x4 distilled": SRPipeline(ae=trained_ae, net=default_stages[1].net, scale=4),
        "x4 direct": SRPipeline(ae=trained_ae, net=direct4_stage.net, scale=4),
        "x4 small raw": SRPipeline(ae=trained_ae, net=small_direct4.net, scale=4),
        "x4 small arch": SRPipeline(ae=trained_ae, net=small_arch4.net, scale=4),
        "x4 small combined": SRPipeline(ae=trained_ae, net=small_combined4.net, scale=4),
    }
    details = []
    for label, pipe in pipelines.items():
        rows = _eval_rows(pipe, evals, [8])
        lr_set = cli._degrade_eval_set(evals, pipe.scale, cli.cfgmod.degrade_mode(cfg),
                                       cfg["data"]["seed"])
        bic = float(np.mean([psnr(resize_like(lr, hr), hr) for lr, hr in zip(lr_set, evals)]))
        got = rows[0]["psnr"]
        assert got > bic, f"{label}: model {got:.2f} dB <= bicubic {bic:.2f} dB"
        details.append(f"{label} {got:.2f}>{bic:.2f}")
    report(12, "8-step PSNR beats bicubic for every trained pipeline: " + "; ".join(details))
