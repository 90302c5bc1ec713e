"""Class-activation saliency, branch-diversity scoring, heatmap rendering.

The saliency map for a class weighs each channel of a late feature map by
the spatial mean of that class score's gradient, sums the weighted
channels, rectifies, and rescales so the strongest location is 1. A map
whose weighted sum is nowhere positive stays all-zero instead of being
rescaled.

By default the feature map is the rectified output of the last
convolution stage in the branch's private stack; a branch that shares
every convolution (maximal branching level) falls back to the last
rectified trunk stage. Per-branch maps for the same input tend to look
different when branches learned different evidence, and
:func:`diversity_score` turns that into one number.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .data.preprocess import bilinear_resize
from .model import EsrModel


def cam_from_activations(activations: np.ndarray, gradients: np.ndarray) -> np.ndarray:
    """Weighted-channel saliency from one sample's (C, H, W) pair."""
    activations = np.asarray(activations, dtype=np.float64)
    gradients = np.asarray(gradients, dtype=np.float64)
    if activations.shape != gradients.shape or activations.ndim != 3:
        raise ValueError(
            f"need matching (C, H, W) arrays, got {activations.shape} and {gradients.shape}")
    alphas = gradients.mean(axis=(1, 2))
    cam = np.maximum((alphas[:, None, None] * activations).sum(axis=0), 0.0)
    peak = cam.max()
    return cam / peak if peak > 0 else cam


@dataclass(frozen=True)
class SaliencyResult:
    cam: np.ndarray  # (H, W) in [0, 1]
    branch: int
    class_index: int
    layer: str


def _target_layer(model: EsrModel, branch: int) -> str:
    from .model import ReluLayer

    layers = model.branches[branch - 1]
    relu_rows = [i for i, l in enumerate(layers) if isinstance(l, ReluLayer)]
    if relu_rows:
        return f"branch{branch}.{relu_rows[-1]}"
    relu_rows = [i for i, l in enumerate(model.trunk) if isinstance(l, ReluLayer)]
    if not relu_rows:
        raise ValueError("architecture has no rectified convolution stage to read")
    return f"trunk.{relu_rows[-1]}"


def grad_cam(model: EsrModel, image, branch: int, class_index: int | None = None,
             layer: str | None = None) -> SaliencyResult:
    """Saliency of one branch's class score for a single (C, H, W) input.

    ``class_index`` defaults to the branch's own prediction. The map lives
    on the chosen feature plane's grid; render against the input with
    :func:`render_heatmap`.
    """
    if not 1 <= branch <= model.num_branches:
        raise ValueError(f"branch {branch} out of range 1..{model.num_branches}")
    image = np.asarray(image, dtype=model.dtype)
    if image.ndim != 3:
        raise ValueError(f"expected one (C, H, W) image, got shape {image.shape}")
    x = ag.Tensor(image[None], requires_grad=True)  # grads must flow to activations
    out = model.forward(x, mode="eval", capture=True)
    layer = layer or _target_layer(model, branch)
    if layer not in out.activations:
        raise ValueError(f"no captured activation named {layer!r}")
    logits = out.logits[branch - 1]
    if class_index is None:
        class_index = int(logits.data[0].argmax())
    if not 0 <= class_index < logits.shape[1]:
        raise ValueError(f"class index {class_index} out of range 0..{logits.shape[1] - 1}")
    mask = np.zeros(logits.shape, dtype=logits.dtype)
    mask[0, class_index] = 1.0
    ag.backward(ag.weighted_sum(logits, mask))
    target = out.activations[layer]
    if target.grad is None:
        raise ValueError(f"layer {layer!r} is not on branch {branch}'s forward path")
    cam = cam_from_activations(target.data[0], target.grad[0])
    return SaliencyResult(cam, branch, class_index, layer)


def branch_saliency_maps(model: EsrModel, image, class_index: int | None = None) -> list:
    """One saliency result per branch for the same input.

    With ``class_index=None`` each branch explains its own prediction,
    which is the comparison the diversity score is defined over.
    """
    return [grad_cam(model, image, b, class_index) for b in range(1, model.num_branches + 1)]


def diversity_score(maps) -> float:
    """1 minus the mean pairwise cosine similarity of flattened maps.

    0 means every branch highlights the same evidence, 1 means disjoint
    evidence. An all-zero map has no direction; its pairs contribute
    similarity 0.
    """
    flats = [np.asarray(m.cam if isinstance(m, SaliencyResult) else m,
                        dtype=np.float64).ravel() for m in maps]
    if len(flats) < 2:
        raise ValueError("diversity needs at least two maps")
    if len({f.shape for f in flats}) != 1:
        raise ValueError("maps must share one shape")
    sims = []
    for i in range(len(flats)):
        for j in range(i + 1, len(flats)):
            na, nb = np.linalg.norm(flats[i]), np.linalg.norm(flats[j])
            sims.append(0.0 if na == 0 or nb == 0
                        else float(flats[i] @ flats[j] / (na * nb)))
    return 1.0 - float(np.mean(sims))


_JET_BREAKS = (1.0, 2.0, 3.0)  # blue, green, red ramp centers on 4x


def jet_color(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] values to (..., 3) floats on the classic blue-to-red ramp."""
    v = 4.0 * np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    channels = [np.clip(1.5 - np.abs(v - center), 0.0, 1.0)
                for center in reversed(_JET_BREAKS)]  # r, g, b
    return np.stack(channels, axis=-1)


def render_heatmap(image, cam: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Blend a saliency map over a grayscale image; returns (H, W, 3) uint8.

    ``image`` is (H, W) uint8 or floats in [0, 1]; the map is upsampled to
    the image grid. ``alpha`` is the heatmap's share of the blend.
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"expected a (H, W) grayscale image, got {image.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    gray = image.astype(np.float64) / 255.0 if image.dtype == np.uint8 \
        else np.clip(image.astype(np.float64), 0.0, 1.0)
    cam_up = bilinear_resize(np.asarray(cam, dtype=np.float64), *gray.shape)
    rgb = (1.0 - alpha) * gray[..., None] + alpha * jet_color(cam_up)
    return np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)


def save_heatmap_png(path: str, rgb: np.ndarray) -> None:
    from PIL import Image

    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValueError("expected (H, W, 3) uint8")
    Image.fromarray(rgb, mode="RGB").save(path)


def save_cam_csv(path: str, cam: np.ndarray) -> None:
    """Raw map values, one row per line, full float precision."""
    np.savetxt(path, np.asarray(cam, dtype=np.float64), delimiter=",", fmt="%.17g")
