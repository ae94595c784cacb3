"""Noise-prediction UNet with shared and per-task exclusive stages.

The network is a plain 4-stage-style UNet (no attention): each stage is two
conv blocks (3x3 conv -> group norm -> additive timestep injection -> SiLU),
stride-2 convs downsample between encoder stages, nearest-neighbor + conv
upsamples in the decoder, and encoder features are concatenated into the
decoder. Channels double per stage.

Three conditioning modes share the backbone:
  - "unconditional": every parameter is shared; task ids are ignored.
  - "class":         a learned per-task embedding is summed with the timestep
                     embedding; all parameters are still shared.
  - "shared":        the stages named in exclusive_stages ("first" = first
                     encoder stage, "last" = last decoder stage + output conv)
                     exist in n_tasks independent copies; a forward pass for
                     task i reads only the shared tensors and task i's copy.

Parameter initialization is driven entirely by a numpy Generator so that a
(seed, config) pair reproduces the model bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError

UNCONDITIONAL = "unconditional"
CLASS_CONDITIONAL = "class"
SHARED_REPRESENTATION = "shared"
_CONDITIONING = (UNCONDITIONAL, CLASS_CONDITIONAL, SHARED_REPRESENTATION)

STAGE_FIRST = "first"
STAGE_LAST = "last"

METHOD_NAMES = {
    UNCONDITIONAL: "DDPM",
    CLASS_CONDITIONAL: "C-DDPM",
    SHARED_REPRESENTATION: "SR-DDPM",
}


@dataclass(frozen=True)
class ModelConfig:
    image_channels: int
    image_size: int
    base_channels: int = 32
    n_stages: int = 4
    n_tasks: int = 0
    exclusive_stages: tuple = (STAGE_FIRST, STAGE_LAST)
    conditioning: str = SHARED_REPRESENTATION
    time_embed_dim: int = 64

    def validate(self) -> None:
        if self.conditioning not in _CONDITIONING:
            raise ConfigError(f"unknown conditioning {self.conditioning!r}")
        if self.image_channels < 1 or self.image_size < 1:
            raise ConfigError("image_channels and image_size must be positive")
        if self.base_channels < 1 or self.n_stages < 1:
            raise ConfigError("base_channels and n_stages must be positive")
        div = 2 ** (self.n_stages - 1)
        if self.image_size % div != 0:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by 2^(n_stages-1) = {div}"
            )
        if self.time_embed_dim < 2 or self.time_embed_dim % 2 != 0:
            raise ConfigError("time_embed_dim must be even and >= 2")
        bad = set(self.exclusive_stages) - {STAGE_FIRST, STAGE_LAST}
        if bad:
            raise ConfigError(f"unknown exclusive stage positions {sorted(bad)}")
        if self.conditioning == SHARED_REPRESENTATION:
            if not self.exclusive_stages:
                raise ConfigError("shared-representation mode needs exclusive stages")
            if self.n_tasks < 1:
                raise ConfigError("shared-representation mode needs n_tasks >= 1")
        elif self.conditioning == CLASS_CONDITIONAL and self.n_tasks < 1:
            raise ConfigError("class conditioning needs n_tasks >= 1")

    @property
    def method_name(self) -> str:
        return METHOD_NAMES[self.conditioning]


def timestep_embedding(t: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding of a single timestep as a float32 vector.

    Half sine, half cosine components over geometrically spaced frequencies
    from 1 down to 1/10000.
    """
    if dim < 2 or dim % 2 != 0:
        raise ValueError(f"dim must be even and >= 2, got {dim}")
    half = dim // 2
    freqs = _embedding_freqs(half)
    angles = t * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)]).astype(np.float32)


def _embedding_freqs(half: int) -> np.ndarray:
    if half == 1:
        return np.ones(1)
    k = np.arange(half, dtype=np.float64)
    return 10000.0 ** (-k / (half - 1))


def _sinusoidal(t: torch.Tensor, dim: int) -> torch.Tensor:
    freqs = torch.from_numpy(_embedding_freqs(dim // 2))
    angles = t.to(torch.float64)[:, None] * freqs[None, :]
    return torch.cat([angles.sin(), angles.cos()], dim=-1)


def _num_groups(channels: int) -> int:
    return math.gcd(8, channels)


class ConvBlock(nn.Module):
    """3x3 conv -> group norm -> additive timestep injection -> SiLU."""

    def __init__(self, in_ch: int, out_ch: int, emb_dim: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm = nn.GroupNorm(_num_groups(out_ch), out_ch)
        self.emb_proj = nn.Linear(emb_dim, out_ch)

    def forward(self, x, emb):
        h = self.norm(self.conv(x))
        h = h + self.emb_proj(emb)[:, :, None, None]
        return F.silu(h)


class Stage(nn.Module):
    """Two conv blocks at one resolution; the first changes channel count."""

    def __init__(self, in_ch: int, out_ch: int, emb_dim: int):
        super().__init__()
        self.block1 = ConvBlock(in_ch, out_ch, emb_dim)
        self.block2 = ConvBlock(out_ch, out_ch, emb_dim)

    def forward(self, x, emb):
        return self.block2(self.block1(x, emb), emb)


class Downsample(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.conv = nn.Conv2d(ch, ch, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


class _TaskBank(nn.ModuleList):
    """Per-task copies of one submodule; parameters under it are exclusive."""


class NoisePredictor(nn.Module):
    """The denoising network: predicts the noise realization from (x_t, t).

    forward(x, t, task) takes a float batch x of shape (B, C, H, W), 1-based
    timesteps t as a (B,) long tensor or int, and a 1-based task id (None in
    unconditional mode). Shape in == shape out.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        c = config.base_channels
        dim = config.time_embed_dim
        chans = [c * (2**s) for s in range(config.n_stages)]

        self.time_mlp = nn.Sequential(
            nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim)
        )
        if config.conditioning == CLASS_CONDITIONAL:
            self.class_embed = nn.Embedding(config.n_tasks, dim)

        self.enc_first = self._bank(STAGE_FIRST, self._make_first_stage)
        self.downs = nn.ModuleList(
            [Downsample(chans[s]) for s in range(config.n_stages - 1)]
        )
        self.enc_rest = nn.ModuleList(
            [Stage(chans[s - 1], chans[s], dim) for s in range(1, config.n_stages)]
        )
        self.ups = nn.ModuleList(
            [Upsample(chans[s + 1], chans[s]) for s in range(config.n_stages - 2, -1, -1)]
        )
        self.dec_rest = nn.ModuleList(
            [Stage(2 * chans[s], chans[s], dim) for s in range(config.n_stages - 2, 0, -1)]
        )
        self.dec_last = self._bank(STAGE_LAST, self._make_last_stage)
        self.out_conv = self._bank(STAGE_LAST, self._make_out_conv)

    # -- construction helpers -------------------------------------------------

    def _make_first_stage(self):
        cfg = self.config
        return Stage(cfg.image_channels, cfg.base_channels, cfg.time_embed_dim)

    def _make_last_stage(self):
        cfg = self.config
        return Stage(2 * cfg.base_channels, cfg.base_channels, cfg.time_embed_dim)

    def _make_out_conv(self):
        cfg = self.config
        return nn.Conv2d(cfg.base_channels, cfg.image_channels, 3, padding=1)

    def _exclusive(self, position: str) -> bool:
        return (
            self.config.conditioning == SHARED_REPRESENTATION
            and position in self.config.exclusive_stages
        )

    def _bank(self, position, factory):
        if self._exclusive(position):
            return _TaskBank([factory() for _ in range(self.config.n_tasks)])
        return factory()

    @staticmethod
    def _pick(module, task):
        if isinstance(module, _TaskBank):
            return module[task - 1]
        return module

    # -- forward ---------------------------------------------------------------

    def _check_task(self, task):
        cfg = self.config
        if cfg.conditioning == UNCONDITIONAL:
            if task is not None:
                raise ValueError("an unconditional model takes no task id")
            return None
        if task is None:
            raise ValueError(f"{cfg.conditioning} conditioning requires a task id")
        if not 1 <= task <= cfg.n_tasks:
            raise ValueError(f"task {task} outside [1, {cfg.n_tasks}]")
        return task

    def forward(self, x, t, task=None):
        cfg = self.config
        task = self._check_task(task)
        expected = (cfg.image_channels, cfg.image_size, cfg.image_size)
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise ValueError(
                f"expected (B,) + {expected} input, got {tuple(x.shape)}"
            )
        if not torch.is_tensor(t):
            t = torch.full((x.shape[0],), int(t), dtype=torch.long)
        emb = _sinusoidal(t, cfg.time_embed_dim).to(x.dtype)
        emb = self.time_mlp(emb)
        if cfg.conditioning == CLASS_CONDITIONAL:
            idx = torch.full((x.shape[0],), task - 1, dtype=torch.long)
            emb = emb + self.class_embed(idx)

        h = self._pick(self.enc_first, task)(x, emb)
        skips = [h]
        for s in range(cfg.n_stages - 1):
            h = self.downs[s](h)
            h = self.enc_rest[s](h, emb)
            if s < cfg.n_stages - 2:
                skips.append(h)
        for i, up in enumerate(self.ups):
            h = up(h)
            h = torch.cat([h, skips.pop()], dim=1)
            if i < len(self.ups) - 1:
                h = self.dec_rest[i](h, emb)
            else:
                h = self._pick(self.dec_last, task)(h, emb)
        return self._pick(self.out_conv, task)(h)

    # -- parameter partition -----------------------------------------------------

    def _bank_paths(self):
        return [
            name for name, m in self.named_modules() if isinstance(m, _TaskBank)
        ]

    def shared_parameters(self) -> dict:
        banks = tuple(p + "." for p in self._bank_paths())
        return {
            name: p
            for name, p in self.named_parameters()
            if not name.startswith(banks)
        }

    def task_parameters(self, task: int) -> dict:
        """Task i's exclusive tensors, keyed by task-independent canonical names."""
        if self.config.conditioning != SHARED_REPRESENTATION:
            return {}
        if not 1 <= task <= self.config.n_tasks:
            raise ValueError(f"task {task} outside [1, {self.config.n_tasks}]")
        out = {}
        for path in self._bank_paths():
            bank = self.get_submodule(path)
            member = bank[task - 1]
            for name, p in member.named_parameters():
                out[f"{path}.{name}"] = p
        return out

    def parameter_partition(self):
        """(shared tensor names, per-task canonical tensor names)."""
        shared = sorted(self.shared_parameters())
        if self.config.conditioning != SHARED_REPRESENTATION:
            return shared, []
        return shared, sorted(self.task_parameters(1))

    def routing(self) -> dict:
        """Canonical tensor name -> "shared" | "exclusive"."""
        shared, exclusive = self.parameter_partition()
        tags = {name: "shared" for name in shared}
        tags.update({name: "exclusive" for name in exclusive})
        return tags

    # -- growth ---------------------------------------------------------------

    def add_task(self, rng: np.random.Generator) -> int:
        """Append a freshly initialized exclusive copy; returns the new task id.

        Only valid in shared-representation mode. Existing tensors are untouched.
        """
        if self.config.conditioning != SHARED_REPRESENTATION:
            raise ValueError("add_task requires shared-representation conditioning")
        factories = {
            "enc_first": self._make_first_stage,
            "dec_last": self._make_last_stage,
            "out_conv": self._make_out_conv,
        }
        for path in self._bank_paths():
            bank = self.get_submodule(path)
            member = factories[path]()
            _init_module(member, rng)
            if path == "out_conv":
                _zero_module(member)
            bank.append(member)
        self.config = replace(self.config, n_tasks=self.config.n_tasks + 1)
        return self.config.n_tasks


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal(0, std^2) truncated to +-2 std, via rejection resampling."""
    z = rng.standard_normal(shape)
    bad = np.abs(z) > 2.0
    while np.any(bad):
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > 2.0
    return (z * std).astype(np.float32)


def _fill(param: nn.Parameter, values: np.ndarray) -> None:
    with torch.no_grad():
        param.copy_(torch.from_numpy(values.reshape(param.shape)))


def _init_module(module: nn.Module, rng: np.random.Generator) -> None:
    """Truncated-normal fan-in init for convs/linears; identity for norms."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
            else:
                fan_in = m.in_features
            _fill(m.weight, _trunc_normal(rng, tuple(m.weight.shape), 1.0 / math.sqrt(fan_in)))
            if m.bias is not None:
                with torch.no_grad():
                    m.bias.zero_()
        elif isinstance(m, nn.GroupNorm):
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.zero_()
        elif isinstance(m, nn.Embedding):
            _fill(m.weight, _trunc_normal(rng, tuple(m.weight.shape), 0.02))


def _zero_module(module: nn.Module) -> None:
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()


def init_model(config: ModelConfig, rng: np.random.Generator) -> NoisePredictor:
    """Build and deterministically initialize the network from a numpy rng.

    The output convolution starts at zero so the first prediction is 0 and the
    initial loss sits near E|eps|^2 per element = 1.
    """
    model = NoisePredictor(config)
    _init_module(model, rng)
    if isinstance(model.out_conv, _TaskBank):
        for member in model.out_conv:
            _zero_module(member)
    else:
        _zero_module(model.out_conv)
    return model


def predict_noise(model: NoisePredictor, x_t: np.ndarray, t, task=None) -> np.ndarray:
    """Numpy-facing forward pass; accepts (C, H, W) or (B, C, H, W) float32."""
    single = x_t.ndim == 3
    batch = x_t[None] if single else x_t
    xt = torch.from_numpy(np.ascontiguousarray(batch, dtype=np.float32))
    if np.ndim(t) == 0:
        tt = int(t)
    else:
        tt = torch.from_numpy(np.asarray(t, dtype=np.int64))
    with torch.no_grad():
        out = model(xt, tt, task)
    out = out.numpy()
    return out[0] if single else out


def chain_predictor(model: NoisePredictor, task=None):
    """Adapter giving sample_chain a (x_t, t) -> eps_hat callable for one task."""
    def predict(x, t):
        return predict_noise(model, x, t, task)
    return predict
