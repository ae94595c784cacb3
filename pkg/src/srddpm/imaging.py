"""PNG output helpers: single samples and gutter-separated grids."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .datasets import denormalize


def to_uint8(images: np.ndarray) -> np.ndarray:
    """Model-space floats in [-1, 1] (or uint8 passthrough) -> uint8 NCHW."""
    images = np.asarray(images)
    if images.dtype == np.uint8:
        return images
    return denormalize(images)


def _to_hwc(image: np.ndarray) -> np.ndarray:
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise ValueError(f"expected a (C, H, W) image with 1 or 3 channels, got {image.shape}")
    return np.transpose(image, (1, 2, 0))


def to_pil(image: np.ndarray) -> Image.Image:
    """One (C, H, W) image -> PIL, grayscale for 1 channel, RGB for 3."""
    hwc = _to_hwc(to_uint8(image))
    if hwc.shape[2] == 1:
        return Image.fromarray(hwc[:, :, 0], mode="L")
    return Image.fromarray(hwc, mode="RGB")


def save_png(image: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    to_pil(image).save(path, format="PNG")
    return path


def grid(images: np.ndarray, n_cols: int = 8, gutter: int = 2, fill: int = 255) -> np.ndarray:
    """Tile NCHW images row-major into one (C, H', W') image with gutters."""
    images = to_uint8(np.asarray(images))
    if images.ndim != 4:
        raise ValueError(f"expected (N, C, H, W) images, got shape {images.shape}")
    n, c, h, w = images.shape
    if n == 0:
        raise ValueError("no images to tile")
    n_cols = min(n_cols, n)
    n_rows = -(-n // n_cols)
    canvas = np.full(
        (c, n_rows * h + (n_rows - 1) * gutter, n_cols * w + (n_cols - 1) * gutter),
        fill,
        dtype=np.uint8,
    )
    for k in range(n):
        r, col = divmod(k, n_cols)
        y, x = r * (h + gutter), col * (w + gutter)
        canvas[:, y : y + h, x : x + w] = images[k]
    return canvas


def save_grid(images: np.ndarray, path, n_cols: int = 8, gutter: int = 2) -> Path:
    return save_png(grid(images, n_cols, gutter), path)
