"""Bilinear resampling and HR -> LR degradation."""

import numpy as np

VALID_RATIOS = (1, 2, 4, 8)


def _axis_weights(in_size: int, out_size: int):
    # half-pixel centers: src = (dst + 0.5) * in / out - 0.5, clamped to the edge
    src = (np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize an H x W or H x W x C image with bilinear interpolation.

    Sampling uses half-pixel centers (``align_corners=False``). uint8 input
    is interpolated in float64, rounded half-to-even and clipped to [0, 255];
    float input is returned as float64 without rounding.
    """
    img = np.asarray(image)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be at least 1x1, got {out_h}x{out_w}")
    if img.ndim not in (2, 3) or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected an H x W or H x W x C image, got shape {img.shape}")
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    f = img.astype(np.float64)
    y0, y1, fy = _axis_weights(h, out_h)
    x0, x1, fx = _axis_weights(w, out_w)
    fy = fy.reshape((-1, 1) + (1,) * (img.ndim - 2))
    fx = fx.reshape((1, -1) + (1,) * (img.ndim - 2))
    rows = f[y0] * (1.0 - fy) + f[y1] * fy
    out = rows[:, x0] * (1.0 - fx) + rows[:, x1] * fx
    if img.dtype == np.uint8:
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out


def make_lr(image: np.ndarray, ratio: int) -> np.ndarray:
    """Downsample by ``ratio`` and bring back to the original size.

    Both steps are :func:`bilinear_resize` calls, so uint8 input is rounded
    after each of them.
    """
    if ratio not in VALID_RATIOS:
        raise ValueError(f"ratio must be one of {VALID_RATIOS}, got {ratio}")
    img = np.asarray(image)
    if ratio == 1:
        return img.copy()
    h, w = img.shape[:2]
    if h % ratio or w % ratio:
        raise ValueError(f"image size {h}x{w} is not divisible by ratio {ratio}")
    small = bilinear_resize(img, h // ratio, w // ratio)
    return bilinear_resize(small, h, w)


def make_lr_batch(images: np.ndarray, ratio: int) -> np.ndarray:
    """:func:`make_lr` applied to every image of an N x H x W x C stack."""
    images = np.asarray(images)
    if images.ndim != 4:
        raise ValueError(f"expected N x H x W x C images, got shape {images.shape}")
    if ratio == 1 or len(images) == 0:
        return images.copy()
    n, h, w, c = images.shape
    # samples folded into the channel axis; interpolation is per pixel so results match make_lr
    stacked = images.transpose(1, 2, 0, 3).reshape(h, w, n * c)
    out = make_lr(stacked, ratio)
    return np.ascontiguousarray(out.reshape(h, w, n, c).transpose(2, 0, 1, 3))
