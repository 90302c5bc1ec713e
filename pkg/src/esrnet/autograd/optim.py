"""Heavy-ball SGD acting on Parameter objects."""

from __future__ import annotations

import numpy as np

from .tensor import NumericFault, Parameter


def sgd_momentum_step(params, lr: float, momentum: float = 0.9) -> None:
    """One in-place update per parameter, then gradient clear.

    buffer <- momentum * buffer + grad
    value  <- value - lr * lr_multiplier * buffer

    A parameter with lr_multiplier 0 is left bit-identical (buffer included),
    so freezing and later unfreezing never replays stale velocity.
    """
    if lr < 0:
        raise ValueError(f"lr must be >= 0, got {lr}")
    for p in params:
        grad = p.tensor.grad
        if grad is None:
            raise ValueError(f"parameter {p.name or '<unnamed>'} has no gradient; run backward first")
        if not np.all(np.isfinite(grad)):
            raise NumericFault(f"NaN/Inf gradient in parameter {p.name or '<unnamed>'}")
        if p.lr_multiplier != 0.0:
            p.momentum_buffer *= momentum
            p.momentum_buffer += grad
            p.tensor.data -= (lr * p.lr_multiplier) * p.momentum_buffer
        p.tensor.zero_grad()
