"""Input validation for array-facing entry points."""

from __future__ import annotations

import numpy as np


def check_images(X, name: str = "X") -> np.ndarray:
    """Require float (N, C, H, W) images in [-1, 1]; returns float32."""
    X = np.asarray(X)
    if X.ndim != 4:
        raise ValueError(f"{name} must be (n_samples, channels, height, width), got shape {X.shape}")
    if X.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if X.shape[1] not in (1, 3):
        raise ValueError(f"{name} must have 1 or 3 channels, got {X.shape[1]}")
    X = X.astype(np.float32, copy=False)
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    lo, hi = float(X.min()), float(X.max())
    if lo < -1.001 or hi > 1.001:
        raise ValueError(
            f"{name} must be scaled to [-1, 1] (uint8 images: x / 127.5 - 1); "
            f"found range [{lo:.3g}, {hi:.3g}]"
        )
    return X


def check_labels(y, n: int) -> np.ndarray:
    """Require one integer-like label per image; returns int64."""
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValueError(f"y must be shape ({n},) to match X, got {y.shape}")
    if y.dtype.kind not in "iu":
        if y.dtype.kind == "f" and np.all(y == np.rint(y)):
            y = y.astype(np.int64)
        else:
            raise ValueError(f"y must hold integer class labels, got dtype {y.dtype}")
    return y.astype(np.int64)


def check_square_power_sized(size: int, n_stages: int) -> None:
    div = 2 ** (n_stages - 1)
    if size % div:
        raise ValueError(
            f"image size {size} must be divisible by {div} for {n_stages} "
            "resolution stages; pad the images or lower n_stages"
        )
