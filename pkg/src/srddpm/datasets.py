"""Dataset ingestion: IDX and CIFAR binaries, synthetic shapes, task splits.

Images flow through as float32 (N, C, H, W) in [-1, 1]; raw readers return
uint8 and `normalize` does the affine map. Task ids are 1-based and assigned
by ascending class label, so a run is reproducible from the config alone.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

MNIST = "mnist"
FASHION_MNIST = "fashion_mnist"
CIFAR10 = "cifar10"
CIFAR100 = "cifar100"
SYNTHETIC = "synthetic"

DATASET_KINDS = (MNIST, FASHION_MNIST, CIFAR10, CIFAR100, SYNTHETIC)

DATA_ROOT_ENV = "SRDDPM_DATA_ROOT"

DATA_LAYOUT = """\
Expected layout under the data root (set [dataset].root or SRDDPM_DATA_ROOT):

  <root>/mnist/             train-images-idx3-ubyte   train-labels-idx1-ubyte
                            t10k-images-idx3-ubyte    t10k-labels-idx1-ubyte
  <root>/fashion_mnist/     (same four file names)
  <root>/cifar10/           data_batch_1.bin .. data_batch_5.bin  test_batch.bin
  <root>/cifar100/          train.bin  test.bin

Files are the decompressed contents of the original archives:
  mnist (md5 of the .gz archives):
    train-images f68b3c2dcbeaaa9fbdd348bbdeb94873  train-labels d53e105ee54ea40749a09fcbcd1e9432
    t10k-images  9fb629c4189551a2d022fa330f9573f3  t10k-labels  ec29112dd5afa0611ce80d1b7f02629c
  cifar-10-binary.tar.gz   c32a1d4ab5d03f1284b67883e8d87530
  cifar-100-binary.tar.gz  03b5dce01913d631647c71ecec9e9cb8
"""

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


def load_idx(path) -> np.ndarray:
    """Read one IDX file of unsigned bytes (images or labels)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DataError(f"{path}: {e.strerror or e}") from e
    if raw[:2] == b"\x1f\x8b":
        raise DataError(f"{path}: gzip-compressed; decompress it first (gunzip)")
    if len(raw) < 8:
        raise DataError(f"{path}: truncated header ({len(raw)} bytes)")
    magic = struct.unpack(">i", raw[:4])[0]
    if magic == _IDX_IMAGES_MAGIC:
        ndim = 3
    elif magic == _IDX_LABELS_MAGIC:
        ndim = 1
    else:
        raise DataError(f"{path}: bad magic 0x{magic:08x}, not an IDX u8 file")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataError(f"{path}: truncated header ({len(raw)} bytes)")
    dims = struct.unpack(f">{ndim}i", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header != count:
        raise DataError(
            f"{path}: expected {count} data bytes for shape {dims}, "
            f"found {len(raw) - header}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_cifar(paths, n_label_bytes: int, label_index: int) -> tuple:
    """Read CIFAR binary batches: per record, label bytes then 3072 pixels.

    label_index picks which label byte to use (CIFAR-100 stores coarse then
    fine). Returns (images uint8 (N, 3, 32, 32), labels int64 (N,)).
    """
    record = n_label_bytes + 3072
    images, labels = [], []
    for path in paths:
        path = Path(path)
        try:
            raw = path.read_bytes()
        except OSError as e:
            raise DataError(f"{path}: {e.strerror or e}") from e
        if len(raw) == 0 or len(raw) % record != 0:
            raise DataError(
                f"{path}: size {len(raw)} is not a multiple of the "
                f"{record}-byte record (offset of partial record: "
                f"{len(raw) - len(raw) % record})"
            )
        arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, record)
        labels.append(arr[:, label_index].astype(np.int64))
        images.append(arr[:, n_label_bytes:].reshape(-1, 3, 32, 32))
    return np.concatenate(images), np.concatenate(labels)


def _require_files(root: Path, names) -> list:
    paths = [root / n for n in names]
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise DataError("missing data files:\n  " + "\n  ".join(missing) + "\n\n" + DATA_LAYOUT)
    return paths


def _load_idx_split(root: Path, train: bool) -> tuple:
    stem = "train" if train else "t10k"
    images_p, labels_p = _require_files(
        root, [f"{stem}-images-idx3-ubyte", f"{stem}-labels-idx1-ubyte"]
    )
    images = load_idx(images_p)
    labels = load_idx(labels_p).astype(np.int64)
    if images.shape[0] != labels.shape[0]:
        raise DataError(
            f"{images_p} has {images.shape[0]} images but "
            f"{labels_p} has {labels.shape[0]} labels"
        )
    return images[:, None, :, :], labels


def load_raw(kind: str, root, train: bool) -> tuple:
    """Load one split of a real dataset as (uint8 images NCHW, int labels)."""
    base = resolve_root(root) / kind
    if kind in (MNIST, FASHION_MNIST):
        return _load_idx_split(base, train)
    if kind == CIFAR10:
        names = [f"data_batch_{i}.bin" for i in range(1, 6)] if train else ["test_batch.bin"]
        return load_cifar(_require_files(base, names), 1, 0)
    if kind == CIFAR100:
        names = ["train.bin"] if train else ["test.bin"]
        # coarse label byte: 20 superclasses, one task each
        return load_cifar(_require_files(base, names), 2, 0)
    raise ConfigError(f"unknown dataset kind {kind!r}")


def resolve_root(root) -> Path:
    if root is not None:
        return Path(root)
    env = os.environ.get(DATA_ROOT_ENV)
    if env:
        return Path(env)
    raise DataError(
        f"no data root: set [dataset].root or the {DATA_ROOT_ENV} "
        "environment variable\n\n" + DATA_LAYOUT
    )


def normalize(images: np.ndarray) -> np.ndarray:
    """uint8 [0, 255] -> float32 [-1, 1]."""
    if images.dtype != np.uint8:
        raise ValueError(f"expected uint8 images, got {images.dtype}")
    return (images.astype(np.float32) / 127.5) - 1.0


def denormalize(images: np.ndarray) -> np.ndarray:
    """float32 [-1, 1] -> uint8, clipping out-of-range values."""
    x = np.clip(np.asarray(images, dtype=np.float64), -1.0, 1.0)
    return np.rint((x + 1.0) * 127.5).astype(np.uint8)


def pad_images(images: np.ndarray, size: int) -> np.ndarray:
    """Zero-pad uint8 NCHW images symmetrically up to size x size."""
    h, w = images.shape[2], images.shape[3]
    if h > size or w > size:
        raise ConfigError(f"pad_to={size} is smaller than the {h}x{w} images")
    top, left = (size - h) // 2, (size - w) // 2
    pads = ((0, 0), (0, 0), (top, size - h - top), (left, size - w - left))
    return np.pad(images, pads)


@dataclass
class TaskDataset:
    """One task's images (float32 NCHW in [-1, 1]) plus its source label."""

    task_id: int
    images: np.ndarray
    label_meta: object = None


def partition_tasks(images, labels, classes=None, per_task=None, rng=None) -> list:
    """Split a labeled set into per-class tasks, ids 1..n by ascending label.

    classes, when given, restricts and must all be present. per_task caps
    each task to that many images, chosen by seeded shuffle (rng required).
    """
    labels = np.asarray(labels)
    present = np.unique(labels)
    if classes is None:
        chosen = present
    else:
        chosen = np.unique(np.asarray(list(classes)))
        absent = np.setdiff1d(chosen, present)
        if absent.size:
            raise DataError(f"classes not present in dataset: {absent.tolist()}")
    if per_task is not None and per_task < 1:
        raise ConfigError("per_task must be positive")
    tasks = []
    for i, cls in enumerate(chosen, start=1):
        idx = np.flatnonzero(labels == cls)
        if per_task is not None:
            if rng is None:
                raise ValueError("per_task subsampling needs an rng")
            idx = rng.permutation(idx)[:per_task]
        tasks.append(TaskDataset(i, normalize(images[idx]), int(cls)))
    return tasks


def batches(tasks, batch_size: int, rng: np.random.Generator):
    """Endless stream of (task_id, batch): uniform task, then random images.

    Sampling is without replacement within a batch unless the task holds
    fewer images than batch_size.
    """
    tasks = list(tasks)
    if not tasks:
        raise ValueError("no tasks")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    while True:
        t = tasks[rng.integers(len(tasks))]
        m = len(t.images)
        idx = rng.choice(m, size=batch_size, replace=m < batch_size)
        yield t.task_id, t.images[idx]


SHAPE_NAMES = ("square", "circle", "triangle", "cross")


def _shape_mask(name: str, size: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean size x size mask of one randomly placed, randomly sized shape."""
    r = int(rng.integers(size // 6, size // 3 + 1))
    cy = int(rng.integers(r, size - r))
    cx = int(rng.integers(r, size - r))
    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = yy - cy, xx - cx
    if name == "square":
        return (np.abs(dy) <= r) & (np.abs(dx) <= r)
    if name == "circle":
        return dy * dy + dx * dx <= r * r
    if name == "triangle":
        # filled isoceles triangle, apex up
        return (dy >= -r) & (dy <= r) & (np.abs(dx) <= (dy + r) / 2)
    if name == "cross":
        arm = max(1, r // 3)
        return ((np.abs(dy) <= arm) & (np.abs(dx) <= r)) | (
            (np.abs(dx) <= arm) & (np.abs(dy) <= r)
        )
    raise ConfigError(f"unknown shape {name!r}; pick from {SHAPE_NAMES}")


def synthetic_tasks(shapes, size: int, count: int, rng: np.random.Generator) -> list:
    """One task per shape name: count single-channel images of that shape.

    Foreground 255 on background 0, so normalized pixels sit at +-1. Useful
    for smoke tests and overfitting runs without any downloaded data.
    """
    if size < 8:
        raise ConfigError("synthetic size must be at least 8")
    if count < 1:
        raise ConfigError("synthetic count must be positive")
    tasks = []
    for i, name in enumerate(shapes, start=1):
        imgs = np.zeros((count, 1, size, size), dtype=np.uint8)
        for k in range(count):
            imgs[k, 0][_shape_mask(name, size, rng)] = 255
        tasks.append(TaskDataset(i, normalize(imgs), name))
    return tasks
