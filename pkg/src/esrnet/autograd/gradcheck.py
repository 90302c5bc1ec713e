"""Central-difference gradient verification.

The checked function returns both the scalar value and its analytic
gradient; the numeric side below never touches the analytic path, so the
oracle stays independent of whatever engine produced the gradient.
"""

from __future__ import annotations

import numpy as np


def finite_difference_check(fn, point: np.ndarray, step: float = 1e-5) -> float:
    """Max relative error between fn's analytic gradient and central differences.

    fn(x) -> (value, gradient) for a float64 array x; the relative error on
    each coordinate is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    point = np.asarray(point, dtype=np.float64)
    _, analytic = fn(point)
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    if analytic.shape != (point.size,) and analytic.size != point.size:
        raise ValueError(f"gradient size {analytic.size} != point size {point.size}")

    numeric = np.empty(point.size, dtype=np.float64)
    flat = point.ravel()
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + step
        plus, _ = fn(point)
        flat[i] = saved - step
        minus, _ = fn(point)
        flat[i] = saved
        numeric[i] = (float(plus) - float(minus)) / (2.0 * step)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def finite_difference_sample(fn, point: np.ndarray, indices, step: float = 1e-5) -> float:
    """Same check restricted to the given flat coordinate indices."""
    point = np.asarray(point, dtype=np.float64)
    _, analytic = fn(point)
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    flat = point.ravel()
    worst = 0.0
    for i in indices:
        saved = flat[i]
        flat[i] = saved + step
        plus, _ = fn(point)
        flat[i] = saved - step
        minus, _ = fn(point)
        flat[i] = saved
        numeric = (float(plus) - float(minus)) / (2.0 * step)
        denom = max(abs(analytic[i]), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst
