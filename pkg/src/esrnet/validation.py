"""Input checking shared by the estimator facade and the CLI."""

import numpy as np


def check_image_batch(X, channels: int | None = None, dtype=np.float32) -> np.ndarray:
    """Validate and convert a (N, C, H, W) image batch."""
    X = np.asarray(X)
    if X.ndim != 4:
        raise ValueError(f"expected (N, C, H, W) images, got shape {X.shape}")
    if len(X) == 0:
        raise ValueError("image batch is empty")
    if channels is not None and X.shape[1] != channels:
        raise ValueError(f"expected {channels} channels, got {X.shape[1]}")
    X = X.astype(dtype, copy=False)
    if not np.all(np.isfinite(X)):
        raise ValueError("image batch contains NaN or Inf")
    return X


def check_labels(y, num_classes: int) -> np.ndarray:
    """Integer class labels in [0, num_classes)."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"labels must be 1-d, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        rounded = np.round(np.asarray(y, dtype=np.float64))
        if not np.array_equal(rounded, np.asarray(y, dtype=np.float64)):
            raise ValueError("labels must be integers")
        y = rounded
    y = y.astype(np.int64)
    if len(y) and (y.min() < 0 or y.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes}), "
                         f"got range [{y.min()}, {y.max()}]")
    return y


def check_affect(values, n: int, what: str) -> np.ndarray:
    """Affect targets: 1-d floats in [-1, 1], one per sample."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (n,):
        raise ValueError(f"{what} must have shape ({n},), got {values.shape}")
    if not np.all(np.isfinite(values)) or np.abs(values).max(initial=0) > 1.0:
        raise ValueError(f"{what} must be finite and within [-1, 1]")
    return values


def check_matching_length(X, y, what: str = "labels") -> None:
    if len(X) != len(y):
        raise ValueError(f"{len(X)} samples but {len(y)} {what}")
