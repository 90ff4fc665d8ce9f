"""Stochastic two-view augmentation: crop -> flip -> colour jitter -> grayscale.

Images are ``uint8`` arrays of shape ``(3, H, W)`` (channel-planar). Colour jitter applies
brightness, contrast, saturation and hue in that fixed order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Any

import numpy as np
import numpy.typing as npt
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy.ndimage import map_coordinates
from typing_extensions import TypeAlias

from .exceptions import ShapeError
from .models import AugmentPolicy, JitterStrengths
from .numeric import RandomStream

ImageU8: TypeAlias = npt.NDArray[np.uint8]
FloatImage: TypeAlias = npt.NDArray[np.floating]

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def check_image(img: npt.ArrayLike) -> ImageU8:
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeError(f"expected a (3, H, W) image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        raise ShapeError(f"expected uint8 pixels, got {arr.dtype}")
    return arr


def _to_u8(x: npt.NDArray[Any]) -> ImageU8:
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def resize_bilinear(img: npt.ArrayLike, out_h: int, out_w: int) -> FloatImage:
    """Pixel-centre aligned bilinear resampling of a ``(C, H, W)`` array; returns floats."""
    src = np.asarray(img, dtype=np.float64)
    _, h, w = src.shape
    return _sample_region(src, 0.0, 0.0, float(h), float(w), out_h, out_w)


def _sample_region(
    src: FloatImage, top: float, left: float, h: float, w: float, out_h: int, out_w: int
) -> FloatImage:
    ys = top + (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = left + (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0, src.shape[1] - 1)
    xs = np.clip(xs, 0, src.shape[2] - 1)
    grid = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([map_coordinates(ch, grid, order=1, mode="nearest") for ch in src])


def sample_crop(
    height: int, width: int, policy: AugmentPolicy, gen: np.random.Generator
) -> tuple[int, int, int, int]:
    """Sample ``(top, left, h, w)`` with area fraction and aspect ratio drawn from ``policy``."""
    area = height * width
    log_lo, log_hi = math.log(policy.crop_ratio[0]), math.log(policy.crop_ratio[1])
    for _ in range(10):
        target = area * gen.uniform(*policy.crop_scale)
        ratio = math.exp(gen.uniform(log_lo, log_hi))
        w = int(round(math.sqrt(target * ratio)))
        h = int(round(math.sqrt(target / ratio)))
        if 0 < w <= width and 0 < h <= height:
            top = int(gen.integers(0, height - h + 1))
            left = int(gen.integers(0, width - w + 1))
            return top, left, h, w
    # fall back to a centred crop with the aspect ratio clamped into range
    in_ratio = width / height
    if in_ratio < policy.crop_ratio[0]:
        w, h = width, int(round(width / policy.crop_ratio[0]))
    elif in_ratio > policy.crop_ratio[1]:
        h, w = height, int(round(height * policy.crop_ratio[1]))
    else:
        h, w = height, width
    h, w = min(max(h, 1), height), min(max(w, 1), width)
    return (height - h) // 2, (width - w) // 2, h, w


def random_resized_crop(
    img: npt.ArrayLike, policy: AugmentPolicy, gen: np.random.Generator
) -> ImageU8:
    img = check_image(img)
    _, height, width = img.shape
    top, left, h, w = sample_crop(height, width, policy, gen)
    out = _sample_region(img.astype(np.float64), top, left, h, w, height, width)
    return _to_u8(out)


def hflip(img: npt.ArrayLike) -> ImageU8:
    return check_image(img)[:, :, ::-1].copy()


def _luma(x: FloatImage) -> FloatImage:
    return np.tensordot(LUMA_WEIGHTS, x, axes=1)


def to_grayscale(img: npt.ArrayLike) -> ImageU8:
    gray = _luma(check_image(img).astype(np.float64))
    return _to_u8(np.broadcast_to(gray, (3, *gray.shape)))


def adjust_brightness(x: FloatImage, factor: float) -> FloatImage:
    return np.clip(x * factor, 0.0, 255.0)


def adjust_contrast(x: FloatImage, factor: float) -> FloatImage:
    mean = float(_luma(x).mean())
    return np.clip(factor * x + (1.0 - factor) * mean, 0.0, 255.0)


def adjust_saturation(x: FloatImage, factor: float) -> FloatImage:
    gray = _luma(x)[None]
    return np.clip(factor * x + (1.0 - factor) * gray, 0.0, 255.0)


def adjust_hue(x: FloatImage, shift: float) -> FloatImage:
    hsv = rgb_to_hsv(np.moveaxis(x / 255.0, 0, -1))
    hsv[..., 0] = (hsv[..., 0] + shift) % 1.0
    return np.clip(np.moveaxis(hsv_to_rgb(hsv), -1, 0) * 255.0, 0.0, 255.0)


def color_jitter(
    img: npt.ArrayLike, strengths: JitterStrengths, gen: np.random.Generator
) -> ImageU8:
    x = check_image(img).astype(np.float64)

    def factor(s: float) -> float:
        return float(gen.uniform(max(0.0, 1.0 - s), 1.0 + s)) if s > 0 else 1.0

    b, c, s = factor(strengths.brightness), factor(strengths.contrast), factor(strengths.saturation)
    hue = float(gen.uniform(-strengths.hue, strengths.hue)) if strengths.hue > 0 else 0.0
    if b != 1.0:
        x = adjust_brightness(x, b)
    if c != 1.0:
        x = adjust_contrast(x, c)
    if s != 1.0:
        x = adjust_saturation(x, s)
    if hue != 0.0:
        x = adjust_hue(x, hue)
    return _to_u8(x)


def augment_view(img: ImageU8, policy: AugmentPolicy, gen: np.random.Generator) -> ImageU8:
    out = random_resized_crop(img, policy, gen)
    if gen.random() < policy.flip_p:
        out = hflip(out)
    if gen.random() < policy.jitter_p:
        out = color_jitter(out, policy.jitter, gen)
    if gen.random() < policy.grayscale_p:
        out = to_grayscale(out)
    return out


def augment_pair(
    img: npt.ArrayLike, policy: AugmentPolicy, rng: RandomStream
) -> tuple[FloatImage, FloatImage]:
    """Two independent pipeline draws from child streams 0 and 1, scaled to [0, 1]."""
    img = check_image(img)
    a = augment_view(img, policy, rng.child(0).generator())
    b = augment_view(img, policy, rng.child(1).generator())
    return a / 255.0, b / 255.0


def augment_batch(
    images: npt.NDArray[np.uint8],
    indices: npt.ArrayLike,
    policy: AugmentPolicy,
    rng: RandomStream,
    epoch: int,
    *,
    dtype: npt.DTypeLike = np.float64,
    workers: int = 1,
) -> tuple[FloatImage, FloatImage]:
    """Augment ``images[indices]`` into two view batches.

    Each image uses the child stream ``(epoch, dataset index)``, so the result does not
    depend on batch composition or on ``workers``.
    """
    idx = np.asarray(indices)

    def one(i: int) -> tuple[FloatImage, FloatImage]:
        return augment_pair(images[i], policy, rng.child(epoch, int(i)))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            pairs = list(pool.map(one, idx))
    else:
        pairs = [one(i) for i in idx]
    view_a = np.stack([p[0] for p in pairs]).astype(dtype, copy=False)
    view_b = np.stack([p[1] for p in pairs]).astype(dtype, copy=False)
    return view_a, view_b
