import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from demorphlab.codec import IdentityCodec, to_nchw
from demorphlab.demorpher import (
    DemorphCheckpoint,
    DemorphConfig,
    Discriminator,
    Generator,
    LatentPair,
    build_discriminator,
    build_generator,
    cgan_loss,
    demorph_batch,
    disc_strides,
    discriminator_forward,
    generator_forward,
    generator_objective,
    kurtosis_loss,
    l1_loss,
    total_loss,
    train_on_latents,
)
from demorphlab.errors import ConfigError, DimensionError, TrainingError

SMALL = dict(base_width=8, depth=2, disc_width=8, batch_size=2)


def latents(n=4, shape=(4, 4, 2), seed=0):
    r = np.random.default_rng(seed)
    return [r.standard_normal((n, *shape)).astype(np.float32) for _ in range(3)]


def test_defaults():
    cfg = DemorphConfig()
    assert (cfg.lambda1, cfg.lambda2, cfg.learning_rate) == (0.5, 0.5, 1e-4)
    assert (cfg.adam_beta1, cfg.adam_beta2, cfg.epochs) == (0.5, 0.999, 300)
    assert DemorphConfig(loss_variant="l1_only").effective_lambda2 == 0.0


@pytest.mark.parametrize(
    "bad", [dict(lambda2=-1), dict(swap_prob=2), dict(loss_variant="nope"), dict(epochs=-1), dict(dropout=1.0)]
)
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        DemorphConfig(**bad).validate()


def test_disc_strides_and_logit_map():
    assert disc_strides(8, 4) == ([2, 2, 1, 1], 2)
    assert disc_strides(64, 4) == ([2, 2, 2, 2], 4)
    d = Discriminator(4, 8)
    z = torch.zeros(2, 4, 8, 8)
    assert tuple(d(z, z, z).shape) == (2, 1, 1, 1)
    big = Discriminator(4, 64, width=8)
    z = torch.zeros(1, 4, 64, 64)
    assert tuple(big(z, z, z).shape) == (1, 1, 1, 1)
    huge = Discriminator(4, 128, width=8)
    z = torch.zeros(1, 4, 128, 128)
    assert tuple(huge(z, z, z).shape) == (1, 1, 8, 8)


def test_generator_shapes():
    g = Generator(4, width=8, depth=3)
    a, b = g(torch.zeros(3, 4, 8, 8))
    assert tuple(a.shape) == tuple(b.shape) == (3, 4, 8, 8)
    with pytest.raises(ConfigError):
        build_generator(DemorphConfig(depth=4), (4, 4, 4))
    with pytest.raises(ConfigError):
        build_discriminator(DemorphConfig(), (8, 4, 4))


def test_single_sample_forwards():
    cfg = DemorphConfig(**SMALL)
    g = build_generator(cfg, (4, 4, 2))
    d = build_discriminator(cfg, (4, 4, 2))
    z = np.zeros((4, 4, 2), dtype=np.float32)
    pair = generator_forward(z, g)
    assert pair.first.shape == (4, 4, 2)
    assert discriminator_forward(z, pair, d).shape[-1] == 1
    with pytest.raises(ConfigError):
        generator_forward(np.zeros((4, 4, 3)), g)


def test_latent_pair():
    a, b = np.zeros((2, 2, 1)), np.ones((2, 2, 1))
    p = LatentPair(a, b).swapped()
    assert p.first is b and p.second is a
    with pytest.raises(DimensionError):
        LatentPair(a, np.zeros((3, 2, 1)))


def test_cgan_loss_matches_elementwise_bce(rng):
    real, fake = rng.standard_normal((3, 1, 2, 2)), rng.standard_normal((3, 1, 2, 2))
    ld, lg = cgan_loss(real, fake)
    r = [oracles.bce_with_logits(v, 1.0) for v in real.ravel()]
    f0 = [oracles.bce_with_logits(v, 0.0) for v in fake.ravel()]
    f1 = [oracles.bce_with_logits(v, 1.0) for v in fake.ravel()]
    assert ld == pytest.approx(0.5 * (np.mean(r) + np.mean(f0)), abs=1e-12)
    assert lg == pytest.approx(np.mean(f1), abs=1e-12)
    with pytest.raises(DimensionError):
        cgan_loss(real, fake[:2])


def test_l1_and_kurtosis_losses(rng):
    o = (np.zeros((2, 2)), np.ones((2, 2)))
    i = (np.ones((2, 2)), np.ones((2, 2)))
    assert l1_loss(o, i) == 0.5
    x = (rng.standard_normal((3, 3)), rng.standard_normal((3, 3)))
    assert kurtosis_loss(x, x) == 0.0
    assert kurtosis_loss(LatentPair(*x), LatentPair(*x)) == 0.0
    with pytest.raises(DimensionError):
        l1_loss(o, (np.ones((3, 2)), np.ones((2, 2))))


def test_total_loss_hand_values():
    assert total_loss(1.0, 2.0, 4.0, 0.5, 0.5) == 4.0
    assert total_loss(0.3, 1.0, 2.0, 0.0, 1.0) == pytest.approx(2.3)


@given(
    arrays(np.float64, (2, 3, 3), elements=st.floats(-5, 5)),
    arrays(np.float64, (2, 3, 3), elements=st.floats(-5, 5)),
)
def test_losses_nonnegative_and_swap_symmetric(a, b):
    o, i = (a[0], a[1]), (b[0], b[1])
    assert l1_loss(o, i) >= 0 and kurtosis_loss(o, i) >= 0
    # swapping both sides consistently changes nothing
    assert l1_loss(o[::-1], i[::-1]) == pytest.approx(l1_loss(o, i))
    assert kurtosis_loss(o[::-1], i[::-1]) == pytest.approx(kurtosis_loss(o, i))


def test_batched_kurtosis_is_per_sample_mean(rng):
    o = [torch.tensor(rng.standard_normal((3, 2, 4, 4))) for _ in range(2)]
    i = [torch.tensor(rng.standard_normal((3, 2, 4, 4))) for _ in range(2)]
    per = [float(kurtosis_loss((o[0][k], o[1][k]), (i[0][k], i[1][k]))) for k in range(3)]
    assert float(kurtosis_loss(o, i, batched=True)) == pytest.approx(np.mean(per))


def test_generator_objective_gradients():
    torch.manual_seed(0)
    cfg = DemorphConfig(dropout=0.0, **SMALL)
    gen = build_generator(cfg, (4, 4, 2)).double()
    zx, z1, z2 = (to_nchw(v).double() for v in latents())
    worst = oracles.gradient_check(lambda: generator_objective(gen, None, zx, z1, z2, cfg)[0], list(gen.parameters()))
    assert worst < 1e-3


def test_training_deterministic_and_round_trip(tmp_path):
    zx, z1, z2 = latents()
    cfg = DemorphConfig(epochs=2, **SMALL)
    a = train_on_latents(zx, z1, z2, cfg, "codec")
    b = train_on_latents(zx, z1, z2, cfg, "codec")
    assert a.fingerprint() == b.fingerprint()
    assert [set(r) for r in a.history] == [{"epoch", "loss_D", "loss_G", "l1", "kurt", "total"}] * 2
    p1 = a.to_file(tmp_path / "a.ckpt")
    back = DemorphCheckpoint.from_file(p1)
    assert back.to_file(tmp_path / "b.ckpt").read_bytes() == p1.read_bytes()
    assert back.fingerprint() == a.fingerprint()


def test_swap_prob_changes_training():
    zx, z1, z2 = latents()
    a = train_on_latents(zx, z1, z2, DemorphConfig(epochs=1, swap_prob=0.0, **SMALL), "c")
    b = train_on_latents(zx, z1, z2, DemorphConfig(epochs=1, swap_prob=1.0, **SMALL), "c")
    assert a.fingerprint() != b.fingerprint()


def test_nan_latent_raises_training_error():
    zx, z1, z2 = latents()
    zx[0, 0, 0, 0] = np.nan
    with pytest.raises(TrainingError):
        train_on_latents(zx, z1, z2, DemorphConfig(epochs=1, **SMALL), "c")


def test_mismatched_stacks_rejected():
    zx, z1, z2 = latents()
    with pytest.raises(ConfigError):
        train_on_latents(zx, z1[:2], z2, DemorphConfig(epochs=1, **SMALL), "c")


def test_demorph_rejects_foreign_codec():
    codec = IdentityCodec((8, 8, 3))
    zx, z1, z2 = latents(2, (8, 8, 3))
    ck = train_on_latents(zx, z1, z2, DemorphConfig(epochs=1, **SMALL), "someone-else")
    with pytest.raises(ConfigError):
        demorph_batch(np.zeros((1, 8, 8, 3)), codec, ck)
    ck.codec_fingerprint = codec.fingerprint()
    o1, o2 = demorph_batch(np.zeros((1, 8, 8, 3)), codec, ck)
    assert o1.shape == o2.shape == (1, 8, 8, 3)
