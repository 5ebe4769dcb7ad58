"""Deterministic image math: resampling, blurring, cropping, statistics.

Images are numpy float arrays in [0, 1], shaped (H, W) or (H, W, C) with
C in {1, 3}. Every public operation returns values clamped to [0, 1].

Conventions (fixed so downstream fingerprints are reproducible):

* Bicubic resampling uses the Catmull-Rom kernel (a = -0.5), four taps per
  axis at any scale (no anti-alias widening; callers blur first when
  downsampling), coordinates clamped at the borders, output dimensions
  ``floor(dim * scale + 0.5)``.
* Gaussian blur uses a normalized separable kernel of radius ceil(3*sigma)
  with mirror (reflect) padding; ``sigma == 0`` is the identity.
* Grayscale conversion uses Rec.601 luminance weights.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image as _PILImage

from .errors import DataError

__all__ = [
    "CropPolicy",
    "CorpusStats",
    "load_png",
    "save_png",
    "png_bits_per_pixel",
    "to_grayscale",
    "bicubic_resample",
    "lanczos_resample",
    "separable_resample",
    "gaussian_blur",
    "degrade",
    "crop",
    "grayscale_entropy",
    "corpus_stats",
]


@dataclass(frozen=True)
class CropPolicy:
    """Square crop policy: ``mode`` is "random" (seeded) or "center"."""

    mode: str
    size: int

    def __post_init__(self):
        if self.mode not in ("random", "center"):
            raise DataError("bad-crop-mode", f"unknown crop mode {self.mode!r}")
        if self.size < 1:
            raise DataError("bad-crop-size", "crop size must be >= 1")


@dataclass(frozen=True)
class CorpusStats:
    image_count: int
    mean_ppi: float
    bpp_png_mean: float
    bpp_png_std: float
    entropy_mean: float
    entropy_std: float


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        pass
    elif img.ndim == 3 and img.shape[2] in (1, 3):
        pass
    else:
        raise DataError("bad-image-shape", f"expected (H,W) or (H,W,{{1,3}}), got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise DataError("bad-image-shape", "height and width must be >= 1")
    if not np.all(np.isfinite(img)):
        raise DataError("non-finite-image", "image contains non-finite samples")
    return img


def _clamp(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 1.0)


# ---------------------------------------------------------------------------
# PNG I/O
# ---------------------------------------------------------------------------

def _to_uint8(img: np.ndarray) -> np.ndarray:
    img = _clamp(_check_image(img))
    return np.floor(img * 255.0 + 0.5).astype(np.uint8)


def load_png(path) -> np.ndarray:
    """Read an 8-bit PNG as float64 in [0, 1], shape (H, W, 3) or (H, W)."""
    with _PILImage.open(path) as im:
        if im.mode in ("L", "I;16", "I"):
            arr = np.asarray(im.convert("L"), dtype=np.float64)
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_png(img: np.ndarray, path) -> None:
    """Write a float image to an 8-bit PNG (grayscale or RGB)."""
    arr = _to_uint8(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    mode = "L" if arr.ndim == 2 else "RGB"
    _PILImage.fromarray(arr, mode=mode).save(path, format="PNG")


def png_bits_per_pixel(img: np.ndarray) -> float:
    """Bits per pixel of the PNG encoding: 8 * encoded_bytes / (H * W)."""
    arr = _to_uint8(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    mode = "L" if arr.ndim == 2 else "RGB"
    buf = io.BytesIO()
    _PILImage.fromarray(arr, mode=mode).save(buf, format="PNG")
    h, w = arr.shape[:2]
    return 8.0 * buf.getbuffer().nbytes / (h * w)


# ---------------------------------------------------------------------------
# Color
# ---------------------------------------------------------------------------

_REC601 = np.array([0.299, 0.587, 0.114])


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Rec.601 luminance; single-channel inputs pass through as (H, W)."""
    img = _check_image(img)
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img @ _REC601


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

def catmull_rom_kernel(t: np.ndarray) -> np.ndarray:
    """Bicubic kernel with a = -0.5 (support 2)."""
    a = -0.5
    t = np.abs(t)
    out = np.zeros_like(t)
    near = t <= 1.0
    far = (t > 1.0) & (t < 2.0)
    tn = t[near]
    tf = t[far]
    out[near] = (a + 2.0) * tn**3 - (a + 3.0) * tn**2 + 1.0
    out[far] = a * tf**3 - 5.0 * a * tf**2 + 8.0 * a * tf - 4.0 * a
    return out


def lanczos_kernel(t: np.ndarray, taps: int = 3) -> np.ndarray:
    """Lanczos windowed sinc (support = taps)."""
    t = np.asarray(t, dtype=np.float64)
    out = np.sinc(t) * np.sinc(t / taps)
    out[np.abs(t) >= taps] = 0.0
    return out


def _axis_weights(n_in: int, n_out: int, kernel, support: int):
    """Tap indices (clamped) and normalized weights for one axis.

    Output sample i reads the source at x = (i + 0.5) * n_in / n_out - 0.5.
    """
    x = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(x).astype(np.int64)
    offsets = np.arange(1 - support, support + 1)
    idx = base[:, None] + offsets[None, :]
    w = kernel(x[:, None] - idx)
    w = w / w.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, n_in - 1)
    return idx, w


def _resample_axis(img: np.ndarray, n_out: int, kernel, support: int, axis: int):
    idx, w = _axis_weights(img.shape[axis], n_out, kernel, support)
    moved = np.moveaxis(img, axis, 0)
    gathered = moved[idx]                      # (n_out, 2*support, ...)
    out = np.einsum("ot...,ot->o...", gathered, w)
    return np.moveaxis(out, 0, axis)


def separable_resample(img: np.ndarray, scale: float, kernel, support: int) -> np.ndarray:
    """Resample with an arbitrary separable kernel; dims floor(d*scale+0.5)."""
    img = _check_image(img)
    if scale <= 0:
        raise DataError("empty-output", f"scale must be positive, got {scale}")
    h, w = img.shape[:2]
    out_h = int(np.floor(h * scale + 0.5))
    out_w = int(np.floor(w * scale + 0.5))
    if out_h < 1 or out_w < 1:
        raise DataError("empty-output", f"scale {scale} yields {out_h}x{out_w} output")
    out = _resample_axis(img, out_h, kernel, support, axis=0)
    out = _resample_axis(out, out_w, kernel, support, axis=1)
    return _clamp(out)


def bicubic_resample(img: np.ndarray, scale: float) -> np.ndarray:
    """Catmull-Rom bicubic resample; ``scale == 1`` is the exact identity."""
    img = _check_image(img)
    if scale == 1:
        return _clamp(img.copy())
    return separable_resample(img, scale, catmull_rom_kernel, support=2)


def lanczos_resample(img: np.ndarray, scale: float, taps: int = 3) -> np.ndarray:
    """Lanczos resample (default 3-lobe)."""
    img = _check_image(img)
    if scale == 1:
        return _clamp(img.copy())
    return separable_resample(img, scale, lambda t: lanczos_kernel(t, taps), support=taps)


# ---------------------------------------------------------------------------
# Blur and degradation
# ---------------------------------------------------------------------------

def _mirror_indices(n: int, r: int) -> np.ndarray:
    """Indices -r..n+r-1 reflected (mirror, edge not repeated) into [0, n)."""
    i = np.arange(-r, n + r)
    if n == 1:
        return np.zeros_like(i)
    period = 2 * n - 2
    j = np.abs(i) % period
    return np.where(j >= n, period - j, j)


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Normalized Gaussian taps over radius ceil(3*sigma)."""
    r = int(np.ceil(3.0 * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def _blur_axis(img: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    r = (len(k) - 1) // 2
    moved = np.moveaxis(img, axis, 0)
    padded = moved[_mirror_indices(moved.shape[0], r)]
    win = np.lib.stride_tricks.sliding_window_view(padded, len(k), axis=0)
    out = win @ k
    return np.moveaxis(out, 0, axis)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur; sigma 0 returns the image unchanged."""
    img = _check_image(img)
    if sigma < 0:
        raise DataError("bad-sigma", "sigma must be >= 0")
    if sigma == 0:
        return _clamp(img.copy())
    k = gaussian_kernel_1d(sigma)
    out = _blur_axis(img, k, axis=0)
    out = _blur_axis(out, k, axis=1)
    return _clamp(out)


def degrade(img: np.ndarray, scale_factor: int, blur_sigma: float | None = None) -> np.ndarray:
    """Canonical low-resolution producer: Gaussian blur, then bicubic 1/scale.

    ``blur_sigma`` defaults to ``scale_factor / 2``. Output dimensions follow
    the bicubic rounding rule floor(dim / scale_factor + 0.5).
    """
    if scale_factor not in (2, 4):
        raise DataError("bad-scale-factor", f"scale_factor must be 2 or 4, got {scale_factor}")
    if blur_sigma is None:
        blur_sigma = scale_factor / 2.0
    blurred = gaussian_blur(img, blur_sigma)
    return bicubic_resample(blurred, 1.0 / scale_factor)


# ---------------------------------------------------------------------------
# Cropping
# ---------------------------------------------------------------------------

def crop(img: np.ndarray, policy: CropPolicy, rng_seed: int = 0) -> np.ndarray:
    """Apply a crop policy. Random offsets are drawn from ``rng_seed`` alone."""
    img = _check_image(img)
    h, w = img.shape[:2]
    s = policy.size
    if s > h or s > w:
        raise DataError("crop-too-large", f"crop {s} does not fit in {h}x{w}")
    if policy.mode == "center":
        top = (h - s) // 2
        left = (w - s) // 2
    else:
        rng = np.random.default_rng(rng_seed)
        top = int(rng.integers(0, h - s + 1))
        left = int(rng.integers(0, w - s + 1))
    return _clamp(img[top:top + s, left:left + s].copy())


# ---------------------------------------------------------------------------
# Corpus statistics
# ---------------------------------------------------------------------------

def grayscale_entropy(img: np.ndarray) -> float:
    """Shannon entropy (bits) of the 256-bin 8-bit grayscale histogram."""
    g = to_grayscale(_clamp(_check_image(img)))
    q = np.floor(g * 255.0 + 0.5).astype(np.int64)
    hist = np.bincount(q.ravel(), minlength=256)
    p = hist[hist > 0] / q.size
    return float(-(p * np.log2(p)).sum() + 0.0)


def corpus_stats(images: list[np.ndarray]) -> CorpusStats:
    """PNG bits-per-pixel and grayscale-entropy summary over a corpus.

    Spreads are population standard deviations.
    """
    if not images:
        raise DataError("empty-corpus", "corpus_stats needs at least one image")
    bpp = np.array([png_bits_per_pixel(im) for im in images])
    ent = np.array([grayscale_entropy(im) for im in images])
    ppi = np.array([im.shape[0] * im.shape[1] for im in images], dtype=np.float64)
    return CorpusStats(
        image_count=len(images),
        mean_ppi=float(ppi.mean()),
        bpp_png_mean=float(bpp.mean()),
        bpp_png_std=float(bpp.std()),
        entropy_mean=float(ent.mean()),
        entropy_std=float(ent.std()),
    )
