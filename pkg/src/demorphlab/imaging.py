"""Raster helpers and the scalar statistics used across the package.

Images are plain ``numpy`` arrays of shape ``(H, W, C)`` with values in
``[0, 1]``. ``C`` is 1 or 3. Tensors are any finite array; ``kurtosis`` also
accepts ``torch`` tensors so the demorpher can differentiate through it.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy.ndimage import correlate1d

from .errors import DegenerateInputError, DimensionError

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
KURTOSIS_EPS = 1e-8


def as_image(data) -> np.ndarray:
    """Validate ``data`` as an image: float64, (H, W, C), clamped to [0, 1]."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise DimensionError(f"expected (H, W, 1|3) image, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DimensionError("empty image")
    if not np.all(np.isfinite(arr)):
        raise DimensionError("image contains non-finite values")
    return np.clip(arr, 0.0, 1.0)


def as_tensor(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DegenerateInputError("tensor contains NaN or Inf")
    return arr


def load_png(path) -> np.ndarray:
    with PILImage.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        raw = np.asarray(im, dtype=np.uint8)
    return as_image(raw / 255.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(as_image(img) * 255.0).astype(np.uint8)


def save_png(path, img: np.ndarray) -> Path:
    path = Path(path)
    raw = to_uint8(img)
    if raw.shape[2] == 1:
        pil = PILImage.fromarray(raw[:, :, 0], mode="L")
    else:
        pil = PILImage.fromarray(raw, mode="RGB")
    path.parent.mkdir(parents=True, exist_ok=True)
    pil.save(path, format="PNG", optimize=False)
    return path


def to_gray(img: np.ndarray) -> np.ndarray:
    """ITU-R BT.601 luma, (H, W)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img[:, :, 0] * 0.299 + img[:, :, 1] * 0.587 + img[:, :, 2] * 0.114


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB with peak 1.0, capped at 99 dB."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-12:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    r = len(g) // 2
    out = correlate1d(x, g, axis=0, mode="constant")
    out = correlate1d(out, g, axis=1, mode="constant")
    return out[r : x.shape[0] - r, r : x.shape[1] - r]


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-channel local SSIM over valid 11x11 Gaussian windows, (h, w, C)."""
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise DimensionError(
            f"image {a.shape[:2]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    g = gaussian_window()
    maps = []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        mu_x = _filter_valid(x, g)
        mu_y = _filter_valid(y, g)
        var_x = _filter_valid(x * x, g) - mu_x * mu_x
        var_y = _filter_valid(y * y, g) - mu_y * mu_y
        cov = _filter_valid(x * y, g) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2)
        den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
        maps.append(num / den)
    return np.stack(maps, axis=-1)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity, averaged over the window map and channels."""
    return float(np.mean(ssim_map(a, b)))


def kurtosis(t, eps: float = KURTOSIS_EPS):
    """Pearson (non-excess) kurtosis ``m4 / (m2**2 + eps)`` over all elements.

    Works on numpy arrays (returns a float) and on torch tensors (returns a
    0-d tensor that carries gradients).
    """
    if hasattr(t, "detach"):
        if t.numel() < 2:
            raise DegenerateInputError("kurtosis needs at least 2 elements")
        x = t.reshape(-1)
    else:
        x = np.asarray(t, dtype=np.float64).reshape(-1)
        if x.size < 2:
            raise DegenerateInputError("kurtosis needs at least 2 elements")
    d = x - x.mean()
    d2 = d * d
    m2 = d2.mean()
    m4 = (d2 * d2).mean()
    k = m4 / (m2 * m2 + eps)
    return k if hasattr(k, "detach") else float(k)
