"""TOML run configuration: [dataset], [model], [schedule], [train], [metrics].

Unknown sections or keys fail immediately - a typo must never silently fall
back to a default. Image channels and size are derived from the dataset, so
configs stay small and cannot contradict the data.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .datasets import (
    DATASET_KINDS,
    SYNTHETIC,
    load_raw,
    pad_images,
    partition_tasks,
    synthetic_tasks,
)
from .diffusion import NoiseSchedule, build_linear_schedule
from .errors import ConfigError
from .training import TrainConfig
from .unet import SHARED_REPRESENTATION, ModelConfig


@dataclass(frozen=True)
class DatasetSection:
    kind: str = ""
    root: str | None = None
    classes: tuple | None = None
    per_task: int | None = None
    pad_to: int | None = None
    shapes: tuple = ("square", "circle")
    size: int = 16
    count: int = 64
    seed: int = 0


@dataclass(frozen=True)
class ModelSection:
    conditioning: str = SHARED_REPRESENTATION
    base_channels: int = 32
    n_stages: int = 4
    exclusive_stages: tuple = ("first", "last")
    time_embed_dim: int = 64


@dataclass(frozen=True)
class ScheduleSection:
    timesteps: int = 500
    beta_start: float = 1e-4
    beta_end: float = 0.02
    sigma_mode: str = "beta"


@dataclass(frozen=True)
class TrainSection:
    out: str = ""
    epochs: int = 600
    batch_size: int = 64
    learning_rate: float = 5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0


@dataclass(frozen=True)
class MetricsSection:
    n_per_task: int = 500
    ssim_per_task: int = 64
    batch_size: int = 64
    seed: int = 0


@dataclass(frozen=True)
class Config:
    dataset: DatasetSection
    model: ModelSection
    schedule: ScheduleSection
    train: TrainSection
    metrics: MetricsSection


_SECTIONS = {
    "dataset": DatasetSection,
    "model": ModelSection,
    "schedule": ScheduleSection,
    "train": TrainSection,
    "metrics": MetricsSection,
}


def _build_section(name: str, cls, raw: dict):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: " + ", ".join(unknown))
    values = {}
    for key, value in raw.items():
        if isinstance(value, list):
            value = tuple(value)
        if isinstance(value, bool) or not isinstance(value, (int, float, str, tuple)):
            raise ConfigError(f"[{name}].{key}: unsupported value {value!r}")
        values[key] = value
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"[{name}]: {e}") from e


def parse_config(text: str, origin: str = "config") -> Config:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{origin}: {e}") from e
    unknown = sorted(set(raw) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"{origin}: unknown section(s): " + ", ".join(unknown))
    for name, body in raw.items():
        if not isinstance(body, dict):
            raise ConfigError(f"{origin}: {name} must be a [{name}] section")
    sections = {
        name: _build_section(name, cls, raw.get(name, {}))
        for name, cls in _SECTIONS.items()
    }
    config = Config(**sections)
    if config.dataset.kind not in DATASET_KINDS:
        raise ConfigError(
            f"{origin}: [dataset].kind must be one of {DATASET_KINDS}, "
            f"got {config.dataset.kind!r}"
        )
    return config


def load_config(path) -> Config:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror or e}") from e
    return parse_config(text, origin=str(path))


def image_shape(ds: DatasetSection) -> tuple:
    """(channels, size) the dataset will produce after any padding."""
    if ds.kind == SYNTHETIC:
        return 1, ds.size
    channels, size = (3, 32) if ds.kind.startswith("cifar") else (1, 28)
    if ds.pad_to is not None:
        if ds.pad_to < size:
            raise ConfigError(f"pad_to={ds.pad_to} is smaller than the {size}x{size} images")
        size = ds.pad_to
    return channels, size


def load_tasks(ds: DatasetSection, train: bool = True) -> list:
    """Materialize the per-task datasets a config describes.

    The training split honors per_task subsampling; the test split always
    takes every image so metrics see the full reference set. Synthetic data
    draws the test split from an independent seed.
    """
    if ds.kind == SYNTHETIC:
        rng = np.random.default_rng(ds.seed if train else ds.seed + 1)
        return synthetic_tasks(ds.shapes, ds.size, ds.count, rng)
    images, labels = load_raw(ds.kind, ds.root, train)
    if ds.pad_to is not None:
        images = pad_images(images, ds.pad_to)
    rng = np.random.default_rng(ds.seed)
    per_task = ds.per_task if train else None
    return partition_tasks(images, labels, ds.classes, per_task, rng)


def build_schedule(sc: ScheduleSection) -> NoiseSchedule:
    return build_linear_schedule(sc.timesteps, sc.beta_start, sc.beta_end, sc.sigma_mode)


def build_model_config(config: Config, n_tasks: int) -> ModelConfig:
    channels, size = image_shape(config.dataset)
    m = config.model
    mc = ModelConfig(
        image_channels=channels,
        image_size=size,
        base_channels=m.base_channels,
        n_stages=m.n_stages,
        n_tasks=0 if m.conditioning == "unconditional" else n_tasks,
        exclusive_stages=m.exclusive_stages if m.conditioning == SHARED_REPRESENTATION else (),
        conditioning=m.conditioning,
        time_embed_dim=m.time_embed_dim,
    )
    mc.validate()
    return mc


def build_train_config(config: Config, schedule: NoiseSchedule) -> TrainConfig:
    t = config.train
    tc = TrainConfig(
        schedule=schedule,
        epochs=t.epochs,
        batch_size=t.batch_size,
        learning_rate=t.learning_rate,
        adam_beta1=t.adam_beta1,
        adam_beta2=t.adam_beta2,
        adam_eps=t.adam_eps,
        seed=t.seed,
    )
    try:
        tc.validate()
    except ValueError as e:
        raise ConfigError(f"[train]: {e}") from e
    return tc
