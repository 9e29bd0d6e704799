"""KL-regularized convolutional autoencoder used as the frozen perceptual codec.

Latents are ``(H/f, W/f, c)`` numpy arrays. Encoding returns the posterior mean;
sampling only happens inside ``train_codec``.
"""

from __future__ import annotations

import hashlib
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import checkpoint
from .errors import ConfigError, TrainingError
from .layers import Downsample, ResBlock, Upsample, norm

log = logging.getLogger(__name__)

LOGVAR_RANGE = (-30.0, 20.0)


@dataclass
class CodecConfig:
    downscale_factor: int = 8
    latent_channels: int = 4
    base_width: int = 16
    kl_weight: float = 1e-4
    epochs: int = 15
    learning_rate: float = 1e-3
    batch_size: int = 4
    seed: int = 0

    def validate(self):
        if self.downscale_factor not in (2, 4, 8):
            raise ConfigError(f"downscale_factor must be 2, 4 or 8, got {self.downscale_factor}")
        if self.latent_channels < 1 or self.base_width < 1:
            raise ConfigError("latent_channels and base_width must be positive")
        if self.kl_weight < 0:
            raise ConfigError("kl_weight must be >= 0")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("epochs >= 0, batch_size >= 1 and learning_rate > 0 required")
        return self

    @property
    def stages(self) -> int:
        return int(math.log2(self.downscale_factor))

    def widths(self):
        return [self.base_width * 2**i for i in range(self.stages)]


class Encoder(nn.Module):
    def __init__(self, cfg: CodecConfig, in_ch: int = 3):
        super().__init__()
        widths = cfg.widths()
        self.conv_in = nn.Conv2d(in_ch, widths[0], 3, padding=1)
        blocks = []
        prev = widths[0]
        for w in widths:
            blocks += [ResBlock(prev, w), Downsample(w)]
            prev = w
        self.down = nn.Sequential(*blocks)
        self.mid = ResBlock(prev, prev)
        self.norm_out = norm(prev)
        self.conv_out = nn.Conv2d(prev, 2 * cfg.latent_channels, 3, padding=1)

    def forward(self, x):
        h = self.mid(self.down(self.conv_in(x)))
        mean, logvar = self.conv_out(F.silu(self.norm_out(h))).chunk(2, dim=1)
        return mean, logvar.clamp(*LOGVAR_RANGE)


class Decoder(nn.Module):
    def __init__(self, cfg: CodecConfig, out_ch: int = 3):
        super().__init__()
        widths = cfg.widths()[::-1]
        self.conv_in = nn.Conv2d(cfg.latent_channels, widths[0], 3, padding=1)
        self.mid = ResBlock(widths[0], widths[0])
        blocks = []
        prev = widths[0]
        for w in widths:
            blocks += [Upsample(prev), ResBlock(prev, w)]
            prev = w
        self.up = nn.Sequential(*blocks)
        self.norm_out = norm(prev)
        self.conv_out = nn.Conv2d(prev, out_ch, 3, padding=1)

    def forward(self, z):
        h = self.up(self.mid(self.conv_in(z)))
        return self.conv_out(F.silu(self.norm_out(h)))


class KLAutoencoder(nn.Module):
    def __init__(self, cfg: CodecConfig):
        super().__init__()
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)

    def forward(self, x, noise=None):
        mean, logvar = self.encoder(x)
        z = mean if noise is None else mean + torch.exp(0.5 * logvar) * noise
        return self.decoder(z), mean, logvar


def kl_divergence(mean, logvar):
    """KL(N(mean, exp(logvar)) || N(0, 1)), averaged over elements."""
    return 0.5 * torch.mean(mean * mean + torch.exp(logvar) - 1.0 - logvar)


def codec_objective(model, x, noise, kl_weight):
    recon, mean, logvar = model(x, noise)
    rec = torch.mean(torch.abs(recon - x))
    kl = kl_divergence(mean, logvar)
    return rec + kl_weight * kl, rec, kl


def to_nchw(images) -> torch.Tensor:
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


def to_nhwc(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().transpose(0, 2, 3, 1)


def data_hash(images) -> str:
    arr = np.round(np.asarray(images, dtype=np.float64) * 255.0).astype(np.uint8)
    return hashlib.sha256(arr.tobytes() + str(arr.shape).encode()).hexdigest()


@dataclass
class CodecCheckpoint:
    config: CodecConfig
    image_shape: tuple
    weights: dict
    train_fingerprint: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.image_shape = tuple(int(v) for v in self.image_shape)
        self._model = None

    kind = "kl-autoencoder"

    @property
    def latent_shape(self):
        h, w, _ = self.image_shape
        f = self.config.downscale_factor
        return (h // f, w // f, self.config.latent_channels)

    def model(self) -> KLAutoencoder:
        if self._model is None:
            m = KLAutoencoder(self.config)
            checkpoint.numpy_to_state(m, self.weights)
            m.eval()
            for p in m.parameters():
                p.requires_grad_(False)
            self._model = m
        return self._model

    def fingerprint(self) -> str:
        return checkpoint.tensor_hash(self.weights)

    def _check(self, arr, expected, what):
        if tuple(arr.shape[-3:]) != tuple(expected):
            raise ConfigError(f"{what} shape {tuple(arr.shape[-3:])} does not match codec {tuple(expected)}")

    def encode_batch(self, images) -> np.ndarray:
        arr = np.asarray(images, dtype=np.float32)
        self._check(arr, self.image_shape, "image")
        with torch.no_grad():
            mean, _ = self.model().encoder(to_nchw(arr))
        return to_nhwc(mean)

    def decode_batch(self, latents) -> np.ndarray:
        arr = np.asarray(latents, dtype=np.float32)
        self._check(arr, self.latent_shape, "latent")
        if not np.all(np.isfinite(arr)):
            raise ConfigError("latent contains non-finite values")
        with torch.no_grad():
            out = self.model().decoder(to_nchw(arr))
        return np.clip(to_nhwc(out).astype(np.float64), 0.0, 1.0)

    def to_file(self, path):
        cfg = {
            "kind": self.kind,
            "codec": asdict(self.config),
            "image_shape": list(self.image_shape),
            "train_fingerprint": self.train_fingerprint,
            "history": self.history,
        }
        return checkpoint.save(path, cfg, self.weights)

    @classmethod
    def from_file(cls, path) -> "CodecCheckpoint":
        cfg, tensors = checkpoint.load(path)
        if cfg.get("kind") == IdentityCodec.kind:
            return IdentityCodec(tuple(cfg["image_shape"]))
        if cfg.get("kind") != cls.kind:
            raise ConfigError(f"{path} is not a codec checkpoint")
        return cls(
            config=CodecConfig(**cfg["codec"]),
            image_shape=tuple(cfg["image_shape"]),
            weights=tensors,
            train_fingerprint=cfg.get("train_fingerprint", {}),
            history=cfg.get("history", []),
        )


class IdentityCodec:
    """Pass-through compressor for the pixel-space ablation: the latent is the image."""

    kind = "identity"

    def __init__(self, image_shape):
        self.image_shape = tuple(int(v) for v in image_shape)
        self.latent_shape = self.image_shape
        self.weights = {}

    def fingerprint(self) -> str:
        return "identity:" + "x".join(map(str, self.image_shape))

    def encode_batch(self, images):
        arr = np.asarray(images, dtype=np.float32)
        if tuple(arr.shape[-3:]) != self.image_shape:
            raise ConfigError(f"image shape {arr.shape[-3:]} does not match codec {self.image_shape}")
        return arr.reshape((-1,) + self.image_shape).copy()

    def decode_batch(self, latents):
        arr = np.asarray(latents, dtype=np.float64)
        if tuple(arr.shape[-3:]) != self.latent_shape:
            raise ConfigError(f"latent shape {arr.shape[-3:]} does not match codec {self.latent_shape}")
        return np.clip(arr.reshape((-1,) + self.image_shape), 0.0, 1.0)

    def to_file(self, path):
        return checkpoint.save(path, {"kind": self.kind, "image_shape": list(self.image_shape)}, {})


def encode(x, ckpt) -> np.ndarray:
    """Posterior-mean latent of one image, ``(H/f, W/f, c)``."""
    return ckpt.encode_batch(np.asarray(x)[None])[0]


def decode(z, ckpt) -> np.ndarray:
    return ckpt.decode_batch(np.asarray(z)[None])[0]


def train_codec(images, cfg: CodecConfig, on_epoch=None) -> CodecCheckpoint:
    """Fit the autoencoder with Adam on L1 reconstruction + ``kl_weight`` * KL."""
    cfg.validate()
    data = np.asarray(images, dtype=np.float32)
    if data.ndim != 4 or len(data) == 0:
        raise ConfigError("train_codec needs a non-empty (N, H, W, 3) image stack")
    n, h, w, c = data.shape
    f = cfg.downscale_factor
    if c != 3 or h % f or w % f:
        raise ConfigError(f"images {(h, w, c)} must be RGB with H, W divisible by {f}")

    torch.manual_seed(cfg.seed)
    model = KLAutoencoder(cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(1, cfg.epochs))
    rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    x_all = to_nchw(data)
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        model.train()
        order = rng.permutation(n)
        sums = np.zeros(3)
        for start in range(0, n, cfg.batch_size):
            xb = x_all[order[start : start + cfg.batch_size]]
            noise = torch.randn(xb.shape[0], cfg.latent_channels, h // f, w // f, generator=gen)
            loss, rec, kl = codec_objective(model, xb, noise, cfg.kl_weight)
            if not torch.isfinite(loss):
                raise TrainingError("codec loss is not finite", step=step)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            step += 1
            sums += np.array([loss.item(), rec.item(), kl.item()]) * len(xb)
        sched.step()
        rec_loss = dict(zip(("loss", "l1", "kl"), (sums / n).tolist()))
        record = {"epoch": epoch, **rec_loss, "seconds": round(time.perf_counter() - t0, 3)}
        history.append(record)
        log.info("codec epoch %d loss %.5f l1 %.5f kl %.5f", epoch, *(sums / n))
        if on_epoch:
            on_epoch(record)

    weights = checkpoint.state_to_numpy(model)
    return CodecCheckpoint(
        config=cfg,
        image_shape=(h, w, c),
        weights=weights,
        train_fingerprint={"seed": cfg.seed, "data_hash": data_hash(data), "images": n},
        history=[{k: v for k, v in r.items() if k != "seconds"} for r in history],
    )
