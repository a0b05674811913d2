"""Autoencoder contracts: identity mode, shapes, freezing, decoder fine-tuning."""

import numpy as np
import pytest

from yonos.autoencoder import (
    AEConfig,
    AETrainConfig,
    Autoencoder,
    DecoderFinetuneConfig,
    build_autoencoder,
    decode,
    decode_batch,
    encode,
    encode_batch,
    finetune_decoder,
    train_autoencoder,
)
from yonos.degradation import gen_texture
from yonos.diffusion import NoiseSchedule, sr_loss
from yonos.metrics import psnr
from yonos.nn import ConfigError, FrozenNetError, NetworkConfig, build_denoiser
from yonos.sampler import SamplerConfig

IDENTITY = AEConfig(mode="identity")
SMALL = AEConfig(base_channels=8, blocks_deep=1)


def small_corpus32(n=32, offset=0):
    return np.stack([gen_texture(offset + i, 32, 32) for i in range(n)])


class TestIdentityMode:
    def test_encode_is_pixels(self):
        ae = Autoencoder(IDENTITY)
        x = gen_texture(0, 32, 32)
        z = encode(ae, x)
        assert z.shape == (1, 32, 32)
        np.testing.assert_array_equal(z[0], x)

    def test_decode_clamps(self):
        ae = Autoencoder(IDENTITY)
        z = np.array([[[-0.5, 0.3], [1.5, 1.0]]], dtype=np.float32)
        out = decode(ae, z)
        np.testing.assert_allclose(out, [[0.0, 0.3], [1.0, 1.0]])

    def test_effective_factors(self):
        ae = Autoencoder(IDENTITY)
        assert ae.f == 1 and ae.latent_channels == 1

    def test_diffusion_identical_to_pixel_space(self):
        # identity-mode latents feed diffusion exactly like raw pixels
        ae = Autoencoder(IDENTITY)
        xs = small_corpus32(4)
        z = encode_batch(ae, xs)
        net = build_denoiser(NetworkConfig(base_channels=4, channel_mult=(1, 1), depth=2,
                                           time_embed_dim=4, in_channels=2, out_channels=1), 0)
        rng = np.random.default_rng(0)
        eps = rng.standard_normal(z.shape).astype(np.float32)
        ts = rng.uniform(0.1, 0.9, len(xs))
        sched = NoiseSchedule()
        a = float(sr_loss(net, z, z, ts, eps, sched).value)
        b = float(sr_loss(net, xs[:, None], xs[:, None], ts, eps, sched).value)
        assert a == b


class TestLearnedMode:
    def test_shapes(self):
        ae = build_autoencoder(AEConfig(), seed=0)
        x = small_corpus32(2, offset=10)
        big = np.stack([gen_texture(90 + i, 64, 64) for i in range(2)])
        z = encode_batch(ae, big)
        assert z.shape == (2, 2, 16, 16)
        out = decode_batch(ae, z)
        assert out.shape == (2, 64, 64)
        del x

    def test_single_image_roundtrip_shapes(self):
        ae = build_autoencoder(AEConfig(), seed=0)
        x = gen_texture(3, 64, 64)
        z = encode(ae, x)
        assert z.shape == (2, 16, 16)
        assert decode(ae, z).shape == (64, 64)

    def test_encode_deterministic(self):
        ae = build_autoencoder(SMALL, seed=1)
        x = small_corpus32(3)
        assert np.array_equal(encode_batch(ae, x), encode_batch(ae, x))

    def test_decode_bounded_for_arbitrary_latents(self):
        ae = build_autoencoder(SMALL, seed=1)
        rng = np.random.default_rng(2)
        z = (rng.standard_normal((2, 2, 8, 8)) * 50).astype(np.float32)
        out = decode_batch(ae, z)
        assert np.all(out >= 0.0) and np.all(out <= 1.0)

    def test_indivisible_dims_rejected(self):
        ae = build_autoencoder(SMALL, seed=1)
        with pytest.raises(ValueError):
            encode_batch(ae, np.zeros((1, 30, 30), dtype=np.float32))

    def test_bad_configs_rejected(self):
        with pytest.raises(ConfigError):
            AEConfig(mode="vae")
        with pytest.raises(ConfigError):
            AEConfig(f=3)
        with pytest.raises(ConfigError):
            AEConfig(latent_channels=0)


class TestTraining:
    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train_autoencoder([], SMALL)

    def test_training_freezes_and_is_deterministic(self):
        data = small_corpus32(24)
        tc = AETrainConfig(steps=8, batch=4, lr=1e-3, seed=3, crop=0)
        a = train_autoencoder(data, SMALL, tc)
        b = train_autoencoder(data, SMALL, tc)
        assert a.frozen_encoder and a.frozen_decoder
        sa, sb = a.state_dict(), b.state_dict()
        assert all(np.array_equal(sa[k], sb[k]) for k in sa)
        assert a.latent_scale == b.latent_scale

    def test_frozen_encoder_outputs_stable(self):
        data = small_corpus32(16)
        ae = train_autoencoder(data, SMALL, AETrainConfig(steps=5, batch=4, seed=0, crop=0))
        before = encode_batch(ae, data[:4])
        # simulate later diffusion training touching unrelated nets
        _ = build_denoiser(NetworkConfig(base_channels=4, channel_mult=(1,), depth=1,
                                         time_embed_dim=4, in_channels=2, out_channels=1), 0)
        after = encode_batch(ae, data[:4])
        assert np.array_equal(before, after)

    def test_loss_decreases_over_first_100_steps(self):
        # endpoint comparison per seed; per-step monotonicity is not
        # attainable with minibatch noise
        data = np.stack([gen_texture(i, 16, 16) for i in range(48)])
        wins = 0
        for seed in range(100):
            losses = []
            train_autoencoder(
                data, AEConfig(base_channels=8, blocks_deep=1),
                AETrainConfig(steps=100, batch=4, lr=2e-3, seed=seed, crop=0),
                log=lambda s, l: losses.append(l),
            )
            if np.mean(losses[-10:]) < np.mean(losses[:10]):
                wins += 1
        assert wins >= 90

    @pytest.mark.heavy
    def test_reconstruction_psnr_floor(self, trained_ae):
        held = [gen_texture(200_000 + i, 64, 64) for i in range(200)]
        rec = decode_batch(trained_ae, encode_batch(trained_ae, np.stack(held)))
        mean_psnr = float(np.mean([psnr(r, h) for r, h in zip(rec, held)]))
        print(f"\nheld-out reconstruction PSNR: {mean_psnr:.2f} dB")
        assert mean_psnr >= 28.0


class TestDecoderFinetune:
    def _setup(self):
        data = small_corpus32(32)
        ae = train_autoencoder(data, SMALL, AETrainConfig(steps=5, batch=4, seed=1, crop=0))
        unet = build_denoiser(NetworkConfig(base_channels=8, channel_mult=(1, 1), depth=2,
                                            time_embed_dim=8, in_channels=4, out_channels=2),
                              seed=2).freeze()
        return data, ae, unet

    def test_sampler_steps_must_be_one(self):
        data, ae, unet = self._setup()
        with pytest.raises(ValueError, match="steps=1"):
            finetune_decoder(ae, unet, SamplerConfig(steps=2, seed=0), data,
                             DecoderFinetuneConfig(steps=1, batch=4, scale=2))

    def test_unfrozen_unet_rejected(self):
        data, ae, _ = self._setup()
        unet = build_denoiser(NetworkConfig(base_channels=8, channel_mult=(1, 1), depth=2,
                                            time_embed_dim=8, in_channels=4, out_channels=2), 2)
        with pytest.raises(FrozenNetError):
            finetune_decoder(ae, unet, SamplerConfig(steps=1, seed=0), data,
                             DecoderFinetuneConfig(steps=1, batch=4, scale=2))

    def test_zero_steps_returns_decoder_unchanged(self):
        data, ae, unet = self._setup()
        tuned = finetune_decoder(ae, unet, SamplerConfig(steps=1, seed=0), data,
                                 DecoderFinetuneConfig(steps=0, batch=4, scale=2))
        for k, v in ae.dec_params.items():
            assert np.array_equal(tuned.dec_params[k].value, v.value)

    def test_encoder_and_unet_bytes_unchanged(self):
        data, ae, unet = self._setup()
        enc_before = {k: v.value.tobytes() for k, v in ae.enc_params.items()}
        unet_before = {k: v.value.tobytes() for k, v in unet.params.items()}
        tuned = finetune_decoder(ae, unet, SamplerConfig(steps=1, seed=0), data,
                                 DecoderFinetuneConfig(steps=3, batch=4, scale=2))
        assert {k: v.value.tobytes() for k, v in ae.enc_params.items()} == enc_before
        assert {k: v.value.tobytes() for k, v in unet.params.items()} == unet_before
        assert {k: v.value.tobytes() for k, v in tuned.enc_params.items()} == enc_before
        changed = any(not np.array_equal(tuned.dec_params[k].value, ae.dec_params[k].value)
                      for k in ae.dec_params)
        assert changed
        assert tuned.frozen_decoder
