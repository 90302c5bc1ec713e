"""Layer kernels with forward evaluation and adjoint closures.

Exactly the operations the ensemble architectures need: convolution,
batch norm, max/global-average pooling, dense, relu, the two losses,
and two scalar-plumbing ops (``add``, ``weighted_sum``) used to combine
per-branch losses and to select scalars for saliency work.

Convolutions run as im2col + matmul; layouts are NCHW, weights OIHW,
dense weights (out_features, in_features). All kernels preserve the
input dtype (float32 for training, float64 for gradient checking).
"""

from __future__ import annotations

from collections import Counter

import numpy as np

from .tensor import NumericFault, ShapeError, Tensor, make_node

_COUNTS: Counter = Counter()


def reset_op_counts() -> None:
    _COUNTS.clear()


def op_counts() -> dict:
    """Forward-invocation counts per kernel since the last reset."""
    return dict(_COUNTS)


def _count(name: str) -> None:
    _COUNTS[name] += 1


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    """Floor formula for one spatial dimension."""
    span = size + 2 * padding - kernel
    if span < 0:
        raise ShapeError(
            f"kernel {kernel} exceeds padded extent {size + 2 * padding} (size {size}, padding {padding})"
        )
    return span // stride + 1


def _im2col(x: np.ndarray, kernel: int, stride: int, padding: int):
    n, c, h, w = x.shape
    oh = conv_output_size(h, kernel, stride, padding)
    ow = conv_output_size(w, kernel, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((n, c, kernel, kernel, oh, ow), dtype=x.dtype)
    for i in range(kernel):
        i_max = i + stride * oh
        for j in range(kernel):
            j_max = j + stride * ow
            cols[:, :, i, j, :, :] = x[:, :, i:i_max:stride, j:j_max:stride]
    return cols.reshape(n, c * kernel * kernel, oh * ow), oh, ow


def _col2im(dcols: np.ndarray, x_shape, kernel: int, stride: int, padding: int, oh: int, ow: int):
    n, c, h, w = x_shape
    dpad = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=dcols.dtype)
    dcols = dcols.reshape(n, c, kernel, kernel, oh, ow)
    for i in range(kernel):
        i_max = i + stride * oh
        for j in range(kernel):
            j_max = j + stride * ow
            # overlapping windows must accumulate, not overwrite
            dpad[:, :, i:i_max:stride, j:j_max:stride] += dcols[:, :, i, j, :, :]
    if padding:
        return dpad[:, :, padding:-padding, padding:-padding]
    return dpad


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation over an NCHW batch."""
    _count("conv2d")
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input, got {x.ndim}-d tensor")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d expects OIHW weight, got {weight.ndim}-d tensor")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d needs stride >= 1 and padding >= 0, got ({stride}, {padding})")
    n, c, h, w = x.shape
    out_ch, in_ch, kh, kw = weight.shape
    if kh != kw:
        raise ShapeError(f"only square kernels supported, got {kh}x{kw}")
    if in_ch != c:
        raise ShapeError(f"input channels ({c}) != weight in-channels ({in_ch})")
    if bias.shape != (out_ch,):
        raise ShapeError(f"bias shape {bias.shape} != ({out_ch},)")

    cols, oh, ow = _im2col(x.data, kh, stride, padding)
    w2 = weight.data.reshape(out_ch, -1)
    out = np.matmul(w2, cols) + bias.data.reshape(1, out_ch, 1)
    out = out.reshape(n, out_ch, oh, ow)

    def adjoint(gout):
        g = gout.reshape(n, out_ch, oh * ow)
        if weight.requires_grad:
            weight.accumulate_grad(np.einsum("nol,nkl->ok", g, cols).reshape(weight.shape))
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2)))
        if x.requires_grad:
            dcols = np.matmul(w2.T, g)
            x.accumulate_grad(_col2im(dcols, x.shape, kh, stride, padding, oh, ow))

    return make_node(out, (x, weight, bias), adjoint)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization.

    Train mode normalizes with biased batch statistics and folds them into
    the running buffers (unbiased variance, classic momentum update); eval
    mode normalizes with the running buffers and touches nothing.
    """
    _count("batchnorm2d")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d expects NCHW input, got {x.ndim}-d tensor")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},), got {gamma.shape}/{beta.shape}")
    m = n * h * w

    if mode == "train":
        if m < 2:
            raise ShapeError(f"train-mode batchnorm needs N*H*W >= 2, got {m}")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / (m - 1.0))
    else:
        mean = running_mean.astype(x.dtype, copy=False)
        var = running_var.astype(x.dtype, copy=False)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)

    def adjoint(gout):
        if gamma.requires_grad:
            gamma.accumulate_grad((gout * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            beta.accumulate_grad(gout.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gs = (gamma.data * inv_std).reshape(1, c, 1, 1)
            if mode == "train":
                sum_g = gout.sum(axis=(0, 2, 3), keepdims=True)
                sum_gx = (gout * xhat).sum(axis=(0, 2, 3), keepdims=True)
                x.accumulate_grad(gs * (gout - sum_g / m - xhat * sum_gx / m))
            else:
                x.accumulate_grad(gs * gout)

    return make_node(out, (x, gamma, beta), adjoint)


def maxpool2d(x: Tensor, kernel: int, stride: int) -> Tensor:
    """Max pooling; ties route gradient to the first maximum in window order."""
    _count("maxpool2d")
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects NCHW input, got {x.ndim}-d tensor")
    n, c, h, w = x.shape
    if kernel > h or kernel > w:
        raise ShapeError(f"pool kernel {kernel} larger than input {h}x{w}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    oh = (h - kernel) // stride + 1
    ow = (w - kernel) // stride + 1

    windows = np.empty((n, c, kernel, kernel, oh, ow), dtype=x.dtype)
    for i in range(kernel):
        i_max = i + stride * oh
        for j in range(kernel):
            j_max = j + stride * ow
            windows[:, :, i, j, :, :] = x.data[:, :, i:i_max:stride, j:j_max:stride]
    flat = windows.transpose(0, 1, 4, 5, 2, 3).reshape(n, c, oh, ow, kernel * kernel)
    arg = flat.argmax(axis=-1)  # argmax takes the first maximum on ties
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def adjoint(gout):
        if not x.requires_grad:
            return
        dx = np.zeros_like(x.data)
        rows = (np.arange(oh) * stride).reshape(1, 1, oh, 1) + arg // kernel
        cols = (np.arange(ow) * stride).reshape(1, 1, 1, ow) + arg % kernel
        n_idx = np.arange(n).reshape(n, 1, 1, 1)
        c_idx = np.arange(c).reshape(1, c, 1, 1)
        np.add.at(dx, (n_idx, c_idx, rows, cols), gout)
        x.accumulate_grad(dx)

    return make_node(out, (x,), adjoint)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial plane: (N, C, H, W) -> (N, C)."""
    _count("global_avg_pool")
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NCHW input, got {x.ndim}-d tensor")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def adjoint(gout):
        if x.requires_grad:
            x.accumulate_grad(
                np.broadcast_to(gout[:, :, None, None] / (h * w), x.shape).astype(x.dtype)
            )

    return make_node(out, (x,), adjoint)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Dense layer: (N, F) @ (O, F)^T + (O,)."""
    _count("linear")
    if x.ndim != 2:
        raise ShapeError(f"linear expects (N, F) input, got {x.ndim}-d tensor")
    if weight.ndim != 2:
        raise ShapeError(f"linear expects (O, F) weight, got {weight.ndim}-d tensor")
    n, f = x.shape
    o, fw = weight.shape
    if f != fw:
        raise ShapeError(f"input features ({f}) != weight in-features ({fw})")
    if bias.shape != (o,):
        raise ShapeError(f"bias shape {bias.shape} != ({o},)")
    out = x.data @ weight.data.T + bias.data

    def adjoint(gout):
        if weight.requires_grad:
            weight.accumulate_grad(gout.T @ x.data)
        if bias.requires_grad:
            bias.accumulate_grad(gout.sum(axis=0))
        if x.requires_grad:
            x.accumulate_grad(gout @ weight.data)

    return make_node(out, (x, weight, bias), adjoint)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); subgradient at 0 is 0."""
    _count("relu")
    mask = x.data > 0
    out = np.where(mask, x.data, 0)

    def adjoint(gout):
        if x.requires_grad:
            x.accumulate_grad(np.where(mask, gout, 0))

    return make_node(out, (x,), adjoint)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy over the batch with max-shifted log-softmax."""
    _count("softmax_cross_entropy")
    if logits.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects (N, C) logits, got {logits.ndim}-d")
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ShapeError(
            f"labels must be a length-{logits.shape[0]} vector, got shape {labels.shape}"
        )
    n, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ShapeError(f"label out of range [0, {c}): {labels.min()}..{labels.max()}")
    labels = labels.astype(np.int64)

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    probs = exps / exps.sum(axis=1, keepdims=True)
    logp = shifted - np.log(exps.sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()

    def adjoint(gout):
        if logits.requires_grad:
            d = probs.copy()
            d[np.arange(n), labels] -= 1.0
            logits.accumulate_grad(d * (gout / n))

    return make_node(np.asarray(loss, dtype=logits.dtype), (logits,), adjoint)


def rmse_loss(pred: Tensor, target) -> Tensor:
    """Root-mean-square error over all elements; exact fit yields zero gradient."""
    _count("rmse_loss")
    target = np.asarray(target, dtype=pred.dtype)
    if target.shape != pred.shape:
        raise ShapeError(f"target shape {target.shape} != prediction shape {pred.shape}")
    diff = pred.data - target
    m = diff.size
    value = float(np.sqrt(np.mean(diff * diff)))

    def adjoint(gout):
        if pred.requires_grad:
            if value == 0.0:
                pred.accumulate_grad(np.zeros_like(pred.data))
            else:
                pred.accumulate_grad(diff * (gout / (m * value)))

    return make_node(np.asarray(value, dtype=pred.dtype), (pred,), adjoint)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors (loss accumulation)."""
    _count("add")
    if a.shape != b.shape:
        raise ShapeError(f"add needs matching shapes, got {a.shape} and {b.shape}")
    out = a.data + b.data

    def adjoint(gout):
        if a.requires_grad:
            a.accumulate_grad(gout)
        if b.requires_grad:
            b.accumulate_grad(gout)

    return make_node(out, (a, b), adjoint)


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar projection sum(x * weights) with constant weights."""
    _count("weighted_sum")
    weights = np.asarray(weights, dtype=x.dtype)
    if weights.shape != x.shape:
        raise ShapeError(f"weights shape {weights.shape} != tensor shape {x.shape}")
    out = np.asarray((x.data * weights).sum(), dtype=x.dtype)

    def adjoint(gout):
        if x.requires_grad:
            x.accumulate_grad(weights * gout)

    return make_node(out, (x,), adjoint)


def check_finite(t: Tensor, what: str = "tensor") -> None:
    """Raise NumericFault if the tensor holds NaN/Inf values."""
    if t.has_fault():
        raise NumericFault(f"{what} contains NaN/Inf")
