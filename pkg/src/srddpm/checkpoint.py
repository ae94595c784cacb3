"""Checkpoint directories: a JSON manifest plus one raw blob per tensor.

Blobs are little-endian float32, C order, named by tensor: shared tensors
under shared/, each task's exclusive tensors under task_<i>/. That makes the
split physical - a task can be shipped or diffed as its directory alone.
Writes go to a temp directory first and are renamed into place, manifest
last, so a crash never leaves a loadable-but-wrong checkpoint.
"""

from __future__ import annotations

import json
import math
import os
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .diffusion import NoiseSchedule, build_linear_schedule
from .errors import ConfigError, DataError
from .unet import SHARED_REPRESENTATION, ModelConfig, NoisePredictor

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"


def _tensor_map(model: NoisePredictor) -> dict:
    """Every parameter exactly once, keyed shared/<name> or task_<i>/<name>."""
    out = {f"shared/{n}": p for n, p in model.shared_parameters().items()}
    if model.config.conditioning == SHARED_REPRESENTATION:
        for i in range(1, model.config.n_tasks + 1):
            for n, p in model.task_parameters(i).items():
                out[f"task_{i}/{n}"] = p
    total = sum(p.numel() for p in model.parameters())
    mapped = sum(p.numel() for p in out.values())
    if total != mapped:
        raise AssertionError(f"partition lost tensors: {mapped} of {total} elements")
    return out


def _blob_path(name: str) -> str:
    group, tensor = name.split("/", 1)
    return f"{group}/{tensor}.bin"


def save_checkpoint(
    path,
    model: NoisePredictor,
    schedule: NoiseSchedule,
    train_steps: int = 0,
    seed=None,
    overwrite: bool = True,
) -> Path:
    """Write the model and schedule under path (a directory)."""
    path = Path(path)
    if path.exists() and not overwrite:
        raise ConfigError(f"checkpoint path exists: {path}")
    tensors = _tensor_map(model)
    manifest = {
        "format_version": FORMAT_VERSION,
        "model": {
            "image_channels": model.config.image_channels,
            "image_size": model.config.image_size,
            "base_channels": model.config.base_channels,
            "n_stages": model.config.n_stages,
            "n_tasks": model.config.n_tasks,
            "exclusive_stages": list(model.config.exclusive_stages),
            "conditioning": model.config.conditioning,
            "time_embed_dim": model.config.time_embed_dim,
        },
        "schedule": {
            "T": schedule.T,
            "beta_start": float(schedule.betas[0]),
            "beta_end": float(schedule.betas[-1]),
            "sigma_mode": schedule.sigma_mode,
        },
        "train_steps": int(train_steps),
        "seed": seed,
        "tensors": {
            name: {"shape": list(p.shape), "file": _blob_path(name)}
            for name, p in sorted(tensors.items())
        },
    }
    tmp = path.with_name(f"{path.name}.tmp-{os.getpid()}")
    if tmp.exists():
        shutil.rmtree(tmp)
    try:
        for name, p in tensors.items():
            blob = tmp / _blob_path(name)
            blob.parent.mkdir(parents=True, exist_ok=True)
            arr = p.detach().cpu().numpy().astype("<f4", copy=False)
            blob.write_bytes(arr.tobytes(order="C"))
        # manifest goes last: its presence marks the directory complete
        (tmp / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp)
    return path


@dataclass
class CheckpointBundle:
    model: NoisePredictor
    schedule: NoiseSchedule
    manifest: dict

    @property
    def train_steps(self) -> int:
        return self.manifest.get("train_steps", 0)


def load_checkpoint(path) -> CheckpointBundle:
    """Rebuild model and schedule from a checkpoint directory.

    Validation is strict and collects every offender before raising: missing
    blobs, size or shape mismatches, and tensor names the model does not
    have all fail the load.
    """
    path = Path(path)
    mpath = path / MANIFEST_NAME
    if not mpath.is_file():
        raise DataError(f"{path}: not a checkpoint (no {MANIFEST_NAME})")
    try:
        manifest = json.loads(mpath.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"{mpath}: unreadable manifest: {e}") from e
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise DataError(f"{mpath}: format_version {version!r}, expected {FORMAT_VERSION}")
    try:
        mc = dict(manifest["model"])
        mc["exclusive_stages"] = tuple(mc.get("exclusive_stages", ()))
        config = ModelConfig(**mc)
        config.validate()
        sc = manifest["schedule"]
        schedule = build_linear_schedule(
            sc["T"], sc["beta_start"], sc["beta_end"], sc.get("sigma_mode", "beta")
        )
        listed = manifest["tensors"]
    except (KeyError, TypeError, ValueError, ConfigError) as e:
        raise DataError(f"{mpath}: bad manifest: {e}") from e

    model = NoisePredictor(config)
    expected = _tensor_map(model)
    problems = []
    for name in sorted(set(listed) - set(expected)):
        problems.append(f"unexpected tensor {name!r}")
    for name in sorted(set(expected) - set(listed)):
        problems.append(f"manifest missing tensor {name!r}")
    with torch.no_grad():
        for name, entry in sorted(listed.items()):
            if name not in expected:
                continue
            p = expected[name]
            shape = tuple(entry.get("shape", ()))
            if shape != tuple(p.shape):
                problems.append(
                    f"{name}: manifest shape {list(shape)} != model shape {list(p.shape)}"
                )
                continue
            blob = path / entry.get("file", _blob_path(name))
            if not blob.is_file():
                problems.append(f"{name}: missing blob {blob.name}")
                continue
            raw = blob.read_bytes()
            want = 4 * math.prod(shape)
            if len(raw) != want:
                problems.append(f"{name}: blob {blob.name} has {len(raw)} bytes, expected {want}")
                continue
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
            p.copy_(torch.from_numpy(arr.copy()))
    if problems:
        raise DataError(f"{path}: invalid checkpoint:\n  " + "\n  ".join(problems))
    return CheckpointBundle(model, schedule, manifest)
