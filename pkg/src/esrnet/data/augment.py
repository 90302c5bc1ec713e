"""Stochastic training-time augmentation on preprocessed tensors.

Photometric jitter runs first, then an optional exact horizontal mirror,
then one combined rotate/translate/rescale warp with bilinear sampling and
edge replication. Every draw is a pure function of (config, seed); all
magnitudes at zero reproduce the input bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_ROTATION_DEG = 30.0


@dataclass(frozen=True)
class AugmentationConfig:
    brightness: float = 0.0      # additive, uniform in +-brightness
    contrast: float = 0.0        # multiplicative, uniform in 1 +- contrast
    hflip_prob: float = 0.0
    rotation_deg: float = 0.0    # uniform in +-rotation_deg, capped at 30
    translation_frac: float = 0.0  # uniform in +-frac of the side length
    rescale: tuple = (1.0, 1.0)  # uniform scale factor range

    def validate(self) -> None:
        if self.brightness < 0 or self.contrast < 0 or self.contrast >= 1:
            raise ValueError(f"brightness/contrast out of range: {self.brightness}/{self.contrast}")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ValueError(f"hflip_prob must be in [0, 1], got {self.hflip_prob}")
        if not 0.0 <= self.rotation_deg <= MAX_ROTATION_DEG:
            raise ValueError(f"rotation_deg must be in [0, {MAX_ROTATION_DEG}], got {self.rotation_deg}")
        if not 0.0 <= self.translation_frac <= 0.3:
            raise ValueError(f"translation_frac must be in [0, 0.3], got {self.translation_frac}")
        lo, hi = self.rescale
        if not (0.5 <= lo <= hi <= 1.5):
            raise ValueError(f"rescale range must satisfy 0.5 <= lo <= hi <= 1.5, got {self.rescale}")


def warp_affine(x: np.ndarray, angle_deg: float = 0.0, translate=(0.0, 0.0),
                scale: float = 1.0) -> np.ndarray:
    """Rotate/shift/rescale a (C, H, W) tensor about its center.

    Inverse mapping with bilinear sampling; coordinates outside the frame
    clamp to the border (edge replication). The identity transform is
    returned without resampling, hence exactly.
    """
    if angle_deg == 0.0 and translate == (0.0, 0.0) and scale == 1.0:
        return x.copy()
    c, h, w = x.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.deg2rad(angle_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    # invert: undo translation, then rotation, then scaling
    ry = yy - cy - translate[0]
    rx = xx - cx - translate[1]
    sy = (cos_t * ry + sin_t * rx) / scale + cy
    sx = (-sin_t * ry + cos_t * rx) / scale + cx

    sy = np.clip(sy, 0.0, h - 1.0)
    sx = np.clip(sx, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = sy - y0
    fx = sx - x0
    out = np.empty_like(x)
    for ch in range(c):
        plane = x[ch]
        top = plane[y0, x0] * (1 - fx) + plane[y0, x1] * fx
        bot = plane[y1, x0] * (1 - fx) + plane[y1, x1] * fx
        out[ch] = (top * (1 - fy) + bot * fy).astype(x.dtype)
    return out


def augment(x: np.ndarray, config: AugmentationConfig, seed: int) -> np.ndarray:
    """Apply one random draw of the configured augmentations to (C, H, W)."""
    config.validate()
    if x.ndim != 3:
        raise ValueError(f"augment expects (C, H, W), got shape {x.shape}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    # fixed draw order keeps the stream stable as magnitudes change
    b = rng.uniform(-config.brightness, config.brightness)
    cmul = rng.uniform(1.0 - config.contrast, 1.0 + config.contrast)
    flip = rng.random() < config.hflip_prob
    angle = rng.uniform(-config.rotation_deg, config.rotation_deg)
    h, w = x.shape[1:]
    ty = rng.uniform(-config.translation_frac, config.translation_frac) * h
    tx = rng.uniform(-config.translation_frac, config.translation_frac) * w
    scale = rng.uniform(config.rescale[0], config.rescale[1])

    out = x
    if cmul != 1.0 or b != 0.0:
        out = out * cmul + b
    if flip:
        out = out[:, :, ::-1]  # mirror by indexing: exact, involutive
    if angle != 0.0 or ty != 0.0 or tx != 0.0 or scale != 1.0:
        out = warp_affine(np.ascontiguousarray(out), angle, (ty, tx), scale)
    elif out is x:
        out = x.copy()
    return np.ascontiguousarray(out, dtype=x.dtype)
