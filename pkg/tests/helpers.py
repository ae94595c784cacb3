"""Tiny-model factories shared across test modules."""

from __future__ import annotations

import numpy as np
import torch

from srddpm import ModelConfig, build_linear_schedule, init_model


def tiny_config(**overrides) -> ModelConfig:
    base = dict(
        image_channels=1,
        image_size=8,
        base_channels=4,
        n_stages=2,
        n_tasks=2,
        time_embed_dim=8,
    )
    base.update(overrides)
    return ModelConfig(**base)


def tiny_model(seed: int = 0, **overrides):
    config = tiny_config(**overrides)
    config.validate()
    return init_model(config, np.random.default_rng(seed))


def tiny_schedule(T: int = 20, **kw):
    return build_linear_schedule(T, **kw)


def randomize_output_convs(model, seed: int = 1, scale: float = 0.1) -> None:
    """Overwrite the zero-initialized output convolutions with small noise.

    A freshly initialized model predicts exactly zero, which makes most
    gradients vanish; tests that need gradient flow everywhere call this.
    """
    rng = np.random.default_rng(seed)
    convs = model.out_conv if isinstance(model.out_conv, torch.nn.ModuleList) else [model.out_conv]
    with torch.no_grad():
        for conv in convs:
            for p in conv.parameters():
                noise = rng.standard_normal(tuple(p.shape)).astype(np.float32) * scale
                p.copy_(torch.from_numpy(noise))


def clone_params(model) -> dict:
    return {name: p.detach().clone() for name, p in model.named_parameters()}


def params_equal(model, snapshot: dict, names=None) -> list:
    """Names in snapshot whose current value differs bit-for-bit."""
    changed = []
    for name, p in model.named_parameters():
        if names is not None and name not in names:
            continue
        if name in snapshot and not torch.equal(p, snapshot[name]):
            changed.append(name)
    return changed
