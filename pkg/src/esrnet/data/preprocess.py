"""Image decoding to network-ready tensors.

Pixels are scaled to [0, 1], resized bilinearly (half-pixel centers,
clamped edges), and standardized per channel; the defaults (mean 0.5,
std 0.5) place outputs in [-1, 1]. Layout is (channels, height, width)
float32.
"""

from __future__ import annotations

import numpy as np

GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])  # ITU-R 601 luma


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize (H, W) or (H, W, C) float arrays; exact passthrough at same size."""
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    sy = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    sx = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(sy), 0, h - 1).astype(np.int64)
    x0 = np.clip(np.floor(sx), 0, w - 1).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(sy - y0, 0.0, 1.0).reshape(-1, 1)
    fx = np.clip(sx - x0, 0.0, 1.0).reshape(1, -1)
    if img.ndim == 3:
        fy, fx = fy[..., None], fx[..., None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def to_unit_float(image: np.ndarray) -> np.ndarray:
    if image.dtype == np.uint8:
        return image.astype(np.float64) / 255.0
    out = image.astype(np.float64)
    if out.size and (out.min() < -1e-6 or out.max() > 1.0 + 1e-6):
        raise ValueError("float images must already lie in [0, 1]")
    return out


def preprocess(image: np.ndarray, size, channels: int = 1,
               mean=0.5, std=0.5) -> np.ndarray:
    """uint8/unit-float image -> standardized (channels, H, W) float32."""
    if channels not in (1, 3):
        raise ValueError(f"channels must be 1 or 3, got {channels}")
    if isinstance(size, int):
        size = (size, size)
    img = to_unit_float(image)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]

    if channels == 1:
        if img.ndim == 3:
            img = img @ GRAY_WEIGHTS
        img = bilinear_resize(img, size[0], size[1])[None, :, :]
    else:
        if img.ndim == 2:
            img = np.repeat(img[:, :, None], 3, axis=2)
        img = bilinear_resize(img, size[0], size[1]).transpose(2, 0, 1)

    mean = np.asarray(mean, dtype=np.float64).reshape(-1, 1, 1)
    std = np.asarray(std, dtype=np.float64).reshape(-1, 1, 1)
    if np.any(std <= 0):
        raise ValueError("std must be positive")
    return ((img - mean) / std).astype(np.float32)


def preprocess_batch(images, size, channels: int = 1, mean=0.5, std=0.5) -> np.ndarray:
    return np.stack([preprocess(im, size, channels, mean, std) for im in images])
