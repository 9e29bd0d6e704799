"""Latent conditional GAN that splits a morph latent into an ordered latent pair.

The generator is a small UNet mapping ``c`` latent channels to ``2c`` (the two
outputs stacked on the channel axis). The discriminator scores
``(morph, first, second)`` triplets with a patch-logit map. Training minimizes

    L = L_adv + lambda1 * L1 + lambda2 * L_kurt

with ground-truth pairs randomly swapped so the model sees both orders.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import checkpoint
from .codec import to_nchw, to_nhwc
from .errors import ConfigError, DimensionError, TrainingError
from .imaging import kurtosis
from .layers import Downsample, ResBlock, SelfAttention, Upsample, norm

log = logging.getLogger(__name__)

LOSS_VARIANTS = ("l1_kurt", "l1_only", "l1_image")


@dataclass
class DemorphConfig:
    lambda1: float = 0.5
    lambda2: float = 0.5
    epochs: int = 300
    learning_rate: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    dropout: float = 0.1
    swap_prob: float = 0.5
    seed: int = 0
    loss_variant: str = "l1_kurt"
    batch_size: int = 16
    base_width: int = 64
    depth: int = 3
    disc_width: int = 64
    disc_blocks: int = 4

    DESK_EPOCHS = 10

    def validate(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("lambda1 and lambda2 must be >= 0")
        if not 0.0 <= self.swap_prob <= 1.0:
            raise ConfigError("swap_prob must be in [0, 1]")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.loss_variant not in LOSS_VARIANTS:
            raise ConfigError(f"loss_variant must be one of {LOSS_VARIANTS}")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("epochs >= 0, batch_size >= 1 and learning_rate > 0 required")
        if self.depth < 1 or self.disc_blocks < 1 or self.base_width < 8 or self.disc_width < 1:
            raise ConfigError("depth, disc_blocks >= 1 and base_width >= 8 required")
        return self

    @property
    def effective_lambda2(self) -> float:
        return 0.0 if self.loss_variant == "l1_only" else self.lambda2


@dataclass(frozen=True)
class LatentPair:
    first: np.ndarray
    second: np.ndarray

    def __post_init__(self):
        if np.shape(self.first) != np.shape(self.second):
            raise DimensionError(f"pair members differ: {np.shape(self.first)} vs {np.shape(self.second)}")

    def swapped(self) -> "LatentPair":
        return LatentPair(self.second, self.first)


class Generator(nn.Module):
    """UNet over latents: ``depth`` resolution levels, attention at the bottleneck."""

    def __init__(self, channels: int, width: int = 64, depth: int = 3, dropout: float = 0.1):
        super().__init__()
        self.channels = channels
        self.depth = depth
        widths = [width * min(2**i, 4) for i in range(depth)]
        self.conv_in = nn.Conv2d(channels, widths[0], 3, padding=1)
        self.down = nn.ModuleList()
        self.downsample = nn.ModuleList()
        prev = widths[0]
        for i, w in enumerate(widths):
            self.down.append(ResBlock(prev, w, dropout))
            self.downsample.append(Downsample(w) if i < depth - 1 else nn.Identity())
            prev = w
        self.mid1 = ResBlock(prev, prev, dropout)
        self.attn = SelfAttention(prev)
        self.mid2 = ResBlock(prev, prev, dropout)
        self.up = nn.ModuleList()
        self.upsample = nn.ModuleList()
        for i, w in reversed(list(enumerate(widths))):
            self.up.append(ResBlock(prev + w, w, dropout))
            self.upsample.append(Upsample(w) if i > 0 else nn.Identity())
            prev = w
        self.norm_out = norm(prev)
        self.conv_out = nn.Conv2d(prev, 2 * channels, 3, padding=1)

    def forward(self, z):
        h = self.conv_in(z)
        skips = []
        for block, down in zip(self.down, self.downsample):
            h = block(h)
            skips.append(h)
            h = down(h)
        h = self.mid2(self.attn(self.mid1(h)))
        for block, up in zip(self.up, self.upsample):
            h = block(torch.cat([h, skips.pop()], dim=1))
            h = up(h)
        out = self.conv_out(F.silu(self.norm_out(h)))
        return out[:, : self.channels], out[:, self.channels :]


def disc_strides(spatial: int, blocks: int = 4):
    """Stride 2 while the map stays at least 2x2, then stride 1."""
    strides = []
    for _ in range(blocks):
        if spatial // 2 >= 2:
            strides.append(2)
            spatial //= 2
        else:
            strides.append(1)
    return strides, spatial


class Discriminator(nn.Module):
    """Conv -> InstanceNorm -> LeakyReLU blocks over the channel-stacked triplet."""

    def __init__(self, channels: int, spatial: int, width: int = 64, blocks: int = 4):
        super().__init__()
        strides, final = disc_strides(spatial, blocks)
        layers = []
        prev = 3 * channels
        for i, s in enumerate(strides):
            w = width * min(2**i, 4)
            conv = nn.Conv2d(prev, w, 4, 2, 1) if s == 2 else nn.Conv2d(prev, w, 3, 1, 1)
            layers += [conv, nn.InstanceNorm2d(w, affine=True), nn.LeakyReLU(0.2)]
            prev = w
        self.body = nn.Sequential(*layers)
        # a full-extent head yields one logit for small maps, else a patch map
        self.head = nn.Conv2d(prev, 1, final) if final <= 4 else nn.Conv2d(prev, 1, 3, padding=1)

    def forward(self, zx, first, second):
        return self.head(self.body(torch.cat([zx, first, second], dim=1)))


def _as_torch(x):
    if isinstance(x, torch.Tensor):
        return x, False
    return torch.as_tensor(np.asarray(x, dtype=np.float64)), True


def _members(pair):
    if isinstance(pair, LatentPair):
        return pair.first, pair.second
    first, second = pair
    return first, second


def cgan_loss(d_real, d_fake):
    """Patch BCE-with-logits losses ``(loss_D, loss_G)``; loss_G is non-saturating."""
    r, was_np = _as_torch(d_real)
    f, _ = _as_torch(d_fake)
    if r.shape != f.shape:
        raise DimensionError(f"logit maps differ: {tuple(r.shape)} vs {tuple(f.shape)}")
    loss_d = 0.5 * (
        F.binary_cross_entropy_with_logits(r, torch.ones_like(r))
        + F.binary_cross_entropy_with_logits(f, torch.zeros_like(f))
    )
    loss_g = F.binary_cross_entropy_with_logits(f, torch.ones_like(f))
    if was_np:
        return float(loss_d), float(loss_g)
    return loss_d, loss_g


def l1_loss(o, i):
    """Mean absolute difference over both pair members jointly."""
    (o1, o2), (i1, i2) = _members(o), _members(i)
    o1, was_np = _as_torch(o1)
    o2, _ = _as_torch(o2)
    i1, _ = _as_torch(i1)
    i2, _ = _as_torch(i2)
    if not (o1.shape == o2.shape == i1.shape == i2.shape):
        raise DimensionError("l1_loss needs four equally shaped tensors")
    out = 0.5 * (torch.mean(torch.abs(o1 - i1)) + torch.mean(torch.abs(o2 - i2)))
    return float(out) if was_np else out


def _batched_kurtosis(t, batched):
    if not batched:
        return kurtosis(t)
    return torch.stack([kurtosis(t[b]) for b in range(t.shape[0])])


def kurtosis_loss(o, i, batched: bool = False):
    """``sum_j |Kurt(o_j) - Kurt(i_j)|``; with ``batched`` the sum is averaged over dim 0."""
    (o1, o2), (i1, i2) = _members(o), _members(i)
    o1, was_np = _as_torch(o1)
    o2, _ = _as_torch(o2)
    i1, _ = _as_torch(i1)
    i2, _ = _as_torch(i2)
    if not (o1.shape == o2.shape == i1.shape == i2.shape):
        raise DimensionError("kurtosis_loss needs four equally shaped tensors")
    terms = torch.abs(_batched_kurtosis(o1, batched) - _batched_kurtosis(i1, batched)) + torch.abs(
        _batched_kurtosis(o2, batched) - _batched_kurtosis(i2, batched)
    )
    out = terms.mean()
    return float(out) if was_np else out


def total_loss(adv, l1, kurt, lambda1: float = 0.5, lambda2: float = 0.5):
    return adv + lambda1 * l1 + lambda2 * kurt


@dataclass
class DemorphCheckpoint:
    config: DemorphConfig
    latent_shape: tuple
    generator_weights: dict
    discriminator_weights: dict
    codec_fingerprint: str
    history: list = field(default_factory=list)

    kind = "latent-cgan"

    def __post_init__(self):
        self.latent_shape = tuple(int(v) for v in self.latent_shape)
        self._gen = None

    def generator(self) -> Generator:
        if self._gen is None:
            g = build_generator(self.config, self.latent_shape)
            checkpoint.numpy_to_state(g, self.generator_weights)
            g.eval()
            for p in g.parameters():
                p.requires_grad_(False)
            self._gen = g
        return self._gen

    def fingerprint(self) -> str:
        return checkpoint.tensor_hash(self._tensors())

    def _tensors(self):
        t = {f"generator.{k}": v for k, v in self.generator_weights.items()}
        t.update({f"discriminator.{k}": v for k, v in self.discriminator_weights.items()})
        return t

    def to_file(self, path):
        cfg = {
            "kind": self.kind,
            "demorph": asdict(self.config),
            "latent_shape": list(self.latent_shape),
            "codec_fingerprint": self.codec_fingerprint,
            "history": self.history,
        }
        return checkpoint.save(path, cfg, self._tensors())

    @classmethod
    def from_file(cls, path) -> "DemorphCheckpoint":
        cfg, tensors = checkpoint.load(path)
        if cfg.get("kind") != cls.kind:
            raise ConfigError(f"{path} is not a demorpher checkpoint")
        gen = {k[len("generator.") :]: v for k, v in tensors.items() if k.startswith("generator.")}
        disc = {k[len("discriminator.") :]: v for k, v in tensors.items() if k.startswith("discriminator.")}
        return cls(
            config=DemorphConfig(**cfg["demorph"]),
            latent_shape=tuple(cfg["latent_shape"]),
            generator_weights=gen,
            discriminator_weights=disc,
            codec_fingerprint=cfg["codec_fingerprint"],
            history=cfg.get("history", []),
        )


def build_generator(cfg: DemorphConfig, latent_shape) -> Generator:
    h, w, c = latent_shape
    step = 2 ** (cfg.depth - 1)
    if h % step or w % step:
        raise ConfigError(f"latent {h}x{w} not divisible by {step} for depth {cfg.depth}")
    return Generator(c, cfg.base_width, cfg.depth, cfg.dropout)


def build_discriminator(cfg: DemorphConfig, latent_shape) -> Discriminator:
    h, w, c = latent_shape
    if h != w:
        raise ConfigError("discriminator expects square latents")
    return Discriminator(c, h, cfg.disc_width, cfg.disc_blocks)


def _check_latent(arr, latent_shape):
    if tuple(np.shape(arr)[-3:]) != tuple(latent_shape):
        raise ConfigError(f"latent shape {tuple(np.shape(arr)[-3:])} does not match {tuple(latent_shape)}")


def generator_forward(zx, generator: Generator, train_mode: bool = False) -> LatentPair:
    """Run the generator on one ``(h, w, c)`` latent; dropout only in train mode."""
    zx = np.asarray(zx, dtype=np.float32)
    if zx.ndim != 3 or zx.shape[2] != generator.channels:
        raise ConfigError(f"latent shape {zx.shape} does not match generator channels {generator.channels}")
    was_training = generator.training
    generator.train(train_mode)
    try:
        with torch.no_grad():
            a, b = generator(to_nchw(zx))
    finally:
        generator.train(was_training)
    return LatentPair(to_nhwc(a)[0], to_nhwc(b)[0])


def discriminator_forward(zx, pair: LatentPair, discriminator: Discriminator) -> np.ndarray:
    """Patch-logit map ``(h', w', 1)`` for one triplet."""
    zx = np.asarray(zx, dtype=np.float32)
    if np.shape(pair.first) != zx.shape:
        raise ConfigError(f"pair shape {np.shape(pair.first)} does not match morph latent {zx.shape}")
    with torch.no_grad():
        out = discriminator(to_nchw(zx), to_nchw(pair.first), to_nchw(pair.second))
    return to_nhwc(out)[0]


def generator_objective(gen, disc, zx, zi1, zi2, cfg: DemorphConfig):
    """Generator loss on a batch; returns ``(total, adv, l1, kurt)`` tensors."""
    o1, o2 = gen(zx)
    adv = torch.zeros((), dtype=zx.dtype)
    if disc is not None:
        d_fake = disc(zx, o1, o2)
        adv = F.binary_cross_entropy_with_logits(d_fake, torch.ones_like(d_fake))
    l1 = l1_loss((o1, o2), (zi1, zi2))
    lam2 = cfg.effective_lambda2
    kurt = kurtosis_loss((o1, o2), (zi1, zi2), batched=True) if lam2 > 0 else torch.zeros((), dtype=zx.dtype)
    return total_loss(adv, l1, kurt, cfg.lambda1, lam2), adv, l1, kurt


def train_on_latents(zx, zi1, zi2, cfg: DemorphConfig, codec_fingerprint: str, on_epoch=None) -> DemorphCheckpoint:
    """Adversarial training on pre-encoded ``(N, h, w, c)`` latent stacks."""
    cfg.validate()
    zx = np.asarray(zx, dtype=np.float32)
    zi1 = np.asarray(zi1, dtype=np.float32)
    zi2 = np.asarray(zi2, dtype=np.float32)
    if not (zx.shape == zi1.shape == zi2.shape) or zx.ndim != 4 or len(zx) == 0:
        raise ConfigError("morph and ground-truth latents must be equal, non-empty (N, h, w, c) stacks")
    latent_shape = zx.shape[1:]
    n = len(zx)

    torch.manual_seed(cfg.seed)
    gen = build_generator(cfg, latent_shape)
    disc = build_discriminator(cfg, latent_shape)
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    opt_g = torch.optim.Adam(gen.parameters(), lr=cfg.learning_rate, betas=betas)
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.learning_rate, betas=betas)
    rng = np.random.default_rng(cfg.seed)
    tx, t1, t2 = to_nchw(zx), to_nchw(zi1), to_nchw(zi2)

    history = []
    step = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        gen.train()
        disc.train()
        order = rng.permutation(n)
        swap = rng.random(n) < cfg.swap_prob
        sums = np.zeros(5)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            sw = torch.from_numpy(swap[idx])[:, None, None, None]
            xb = tx[idx]
            a, b = t1[idx], t2[idx]
            ib1 = torch.where(sw, b, a)
            ib2 = torch.where(sw, a, b)

            with torch.no_grad():
                f1, f2 = gen(xb)
            loss_d, _ = cgan_loss(disc(xb, ib1, ib2), disc(xb, f1, f2))
            opt_d.zero_grad(set_to_none=True)
            loss_d.backward()
            opt_d.step()

            loss, adv, l1, kurt = generator_objective(gen, disc, xb, ib1, ib2, cfg)
            if not (torch.isfinite(loss) and torch.isfinite(loss_d)):
                raise TrainingError("demorpher loss is not finite", step=step)
            opt_g.zero_grad(set_to_none=True)
            loss.backward()
            opt_g.step()
            step += 1
            sums += np.array([loss_d.item(), adv.item(), l1.item(), kurt.item(), loss.item()]) * len(idx)
        means = sums / n
        record = dict(zip(("loss_D", "loss_G", "l1", "kurt", "total"), means.tolist()))
        record = {"epoch": epoch, **record}
        history.append(record)
        log.info(
            "demorph epoch %d D %.4f G %.4f l1 %.4f kurt %.4f (%.1fs)",
            epoch, *means[:4], time.perf_counter() - t0,
        )
        if on_epoch:
            on_epoch(record)

    return DemorphCheckpoint(
        config=cfg,
        latent_shape=latent_shape,
        generator_weights=checkpoint.state_to_numpy(gen),
        discriminator_weights=checkpoint.state_to_numpy(disc),
        codec_fingerprint=codec_fingerprint,
        history=history,
    )


def encode_triplets(images_x, images_1, images_2, codec, batch: int = 64):
    def enc(stack):
        stack = np.asarray(stack)
        return np.concatenate([codec.encode_batch(stack[s : s + batch]) for s in range(0, len(stack), batch)])

    return enc(images_x), enc(images_1), enc(images_2)


def train(manifest, codec, cfg: DemorphConfig, on_epoch=None) -> DemorphCheckpoint:
    """Encode every (morph, first, second) triple with the frozen codec and train."""
    from .protocol import load_triplets

    cfg.validate()
    if cfg.loss_variant == "l1_image":
        from .codec import IdentityCodec

        if not isinstance(codec, IdentityCodec):
            raise ConfigError("loss_variant l1_image requires the identity codec")
    xs, a, b = load_triplets(manifest)
    if len(xs) == 0:
        raise ConfigError("manifest has no records to train on")
    if tuple(xs.shape[1:]) != tuple(codec.image_shape):
        raise ConfigError(f"manifest images {xs.shape[1:]} do not match codec {codec.image_shape}")
    before = codec.fingerprint()
    zx, z1, z2 = encode_triplets(xs, a, b, codec)
    ckpt = train_on_latents(zx, z1, z2, cfg, before, on_epoch=on_epoch)
    if codec.fingerprint() != before:
        raise TrainingError("codec weights changed during demorpher training")
    return ckpt


def demorph_batch(images, codec, ckpt: DemorphCheckpoint, batch: int = 64):
    """Demorph a stack of images; returns two ``(N, H, W, 3)`` stacks."""
    if ckpt.codec_fingerprint != codec.fingerprint():
        raise ConfigError("demorpher checkpoint was trained against a different codec")
    images = np.asarray(images)
    if tuple(images.shape[1:]) != tuple(codec.image_shape):
        raise ConfigError(f"image shape {images.shape[1:]} does not match codec {codec.image_shape}")
    gen = ckpt.generator()
    gen.eval()
    out1, out2 = [], []
    for s in range(0, len(images), batch):
        z = codec.encode_batch(images[s : s + batch])
        _check_latent(z, ckpt.latent_shape)
        with torch.no_grad():
            a, b = gen(to_nchw(z))
        out1.append(codec.decode_batch(to_nhwc(a)))
        out2.append(codec.decode_batch(to_nhwc(b)))
    return np.concatenate(out1), np.concatenate(out2)


def demorph(x, codec, ckpt: DemorphCheckpoint):
    """Split one morph image into its two constituent estimates."""
    o1, o2 = demorph_batch(np.asarray(x)[None], codec, ckpt)
    return o1[0], o2[0]
