"""Training loop: uniform task mixing, noise-prediction loss, Adam updates.

Each step draws a task-homogeneous batch, noises it with per-image uniform
timesteps, and applies one bias-corrected Adam update to the shared tensors
plus the drawn task's exclusive tensors only. Exclusive tensors of undrawn
tasks receive no gradient at all (the forward pass never reads them), so
their moments and step counters stay put - which is why the optimizer keeps
a step counter per tensor rather than a global one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
import torch

from .datasets import TaskDataset, batches
from .diffusion import NoiseSchedule, diffuse
from .errors import NumericError
from .unet import SHARED_REPRESENTATION, NoisePredictor


@dataclass(frozen=True)
class TrainConfig:
    schedule: NoiseSchedule
    epochs: int = 600
    batch_size: int = 64
    learning_rate: float = 5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("adam betas must lie in (0, 1)")


@dataclass
class LossTrace:
    """Per-step (global step, task id, loss) records, exportable as CSV."""

    records: list = field(default_factory=list)

    def append(self, step: int, task: int, loss: float) -> None:
        if self.records and step <= self.records[-1][0]:
            raise ValueError("steps must be strictly increasing")
        self.records.append((step, task, loss))

    def losses(self) -> np.ndarray:
        return np.array([r[2] for r in self.records])

    def to_csv(self) -> str:
        lines = ["step,task,loss"]
        lines += [f"{s},{i},{l:.6g}" for s, i, l in self.records]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "LossTrace":
        trace = cls()
        rows = text.strip().splitlines()
        if not rows or rows[0] != "step,task,loss":
            raise ValueError("not a loss-trace CSV")
        for row in rows[1:]:
            s, i, l = row.split(",")
            trace.append(int(s), int(i), float(l))
        return trace


class AdamState:
    """Per-tensor first/second moments and step counters, keyed by name."""

    def __init__(self):
        self.m = {}
        self.v = {}
        self.steps = {}

    def slot(self, name, like):
        if name not in self.m:
            self.m[name] = torch.zeros_like(like)
            self.v[name] = torch.zeros_like(like)
            self.steps[name] = 0
        return self.m[name], self.v[name], self.steps[name]


def _all_finite(x) -> bool:
    if torch.is_tensor(x):
        return bool(torch.isfinite(x).all())
    return bool(np.all(np.isfinite(x)))


def adam_step(value, grad, m, v, step, config: TrainConfig):
    """One bias-corrected Adam update; returns (new_value, new_m, new_v).

    step is the number of updates this tensor has already received. Works on
    numpy arrays, torch tensors, and plain scalars alike. Raises NumericError
    on a non-finite gradient so training aborts instead of corrupting state.
    """
    if not _all_finite(grad):
        raise NumericError("non-finite gradient")
    t = step + 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    m = b1 * m + (1.0 - b1) * grad
    v = b2 * v + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    value = value - config.learning_rate * m_hat / (v_hat**0.5 + config.adam_eps)
    return value, m, v


def loss_mse(eps, eps_pred) -> float:
    """Mean over all elements of (eps - eps_pred)^2."""
    eps = np.asarray(eps)
    eps_pred = np.asarray(eps_pred)
    if eps.shape != eps_pred.shape:
        raise ValueError(f"shape mismatch: {eps.shape} vs {eps_pred.shape}")
    d = eps.astype(np.float64) - eps_pred.astype(np.float64)
    return float(np.mean(d * d))


def _touched_parameters(model: NoisePredictor, task) -> dict:
    params = dict(model.shared_parameters())
    named = {f"shared/{k}": p for k, p in params.items()}
    if task is not None and model.config.conditioning == SHARED_REPRESENTATION:
        for k, p in model.task_parameters(task).items():
            named[f"task_{task}/{k}"] = p
    return named


def _apply_updates(model, opt, config, task, trainable=None):
    """Adam-update every touched parameter that received a gradient."""
    for name, p in _touched_parameters(model, task).items():
        if p.grad is None:
            continue
        if trainable is not None and name not in trainable:
            continue
        m, v, step = opt.slot(name, p)
        with torch.no_grad():
            new_value, new_m, new_v = adam_step(p.detach(), p.grad, m, v, step, config)
            p.copy_(new_value)
        opt.m[name] = new_m
        opt.v[name] = new_v
        opt.steps[name] = step + 1


def train_step(
    model: NoisePredictor,
    opt: AdamState,
    config: TrainConfig,
    batch: np.ndarray,
    task,
    rng: np.random.Generator,
    trainable=None,
) -> float:
    """One optimization step on a task-homogeneous batch; returns the loss.

    Draws t ~ Uniform([T]) and eps ~ N(0, I) per image, noises the batch with
    the closed-form marginal, and updates the shared tensors plus task's
    exclusive tensors. trainable, when given, further restricts updates to
    the named tensors (used by the new-task fine-tune flow to freeze phi).
    """
    if batch.ndim != 4 or batch.shape[0] == 0:
        raise ValueError(f"expected a non-empty (B, C, H, W) batch, got {batch.shape}")
    schedule = config.schedule
    B = batch.shape[0]
    t = rng.integers(1, schedule.T + 1, size=B)
    eps = rng.standard_normal(size=batch.shape, dtype=np.float32)
    x_t = diffuse(batch, t, eps, schedule)

    model.zero_grad(set_to_none=True)
    xt = torch.from_numpy(x_t)
    tt = torch.from_numpy(t.astype(np.int64))
    target = torch.from_numpy(eps)
    pred = model(xt, tt, task)
    loss = torch.mean((target - pred) ** 2)
    if not torch.isfinite(loss):
        raise NumericError(f"non-finite loss on task {task}")
    loss.backward()
    _apply_updates(model, opt, config, task, trainable)
    return float(loss.detach())


def train(
    model: NoisePredictor,
    data: Iterable[TaskDataset],
    config: TrainConfig,
    opt: AdamState | None = None,
    on_step: Callable | None = None,
) -> tuple[NoisePredictor, LossTrace]:
    """Full training loop: epochs * ceil(total samples / batch) uniform-task steps.

    on_step(step, task_id, loss, model), when given, runs after every update.
    Deterministic given config.seed.
    """
    config.validate()
    data = list(data)
    total = sum(len(t.images) for t in data)
    if total == 0:
        raise ValueError("empty dataset")
    steps = config.epochs * math.ceil(total / config.batch_size)
    opt = opt if opt is not None else AdamState()
    trace = LossTrace()
    seq = np.random.SeedSequence(config.seed)
    rng_batches, rng_noise = (np.random.default_rng(s) for s in seq.spawn(2))
    task_arg = model.config.conditioning != "unconditional"

    stream = batches(data, config.batch_size, rng_batches)
    for step in range(1, steps + 1):
        task_id, batch = next(stream)
        loss = train_step(
            model, opt, config, batch, task_id if task_arg else None, rng_noise
        )
        trace.append(step, task_id, loss)
        if on_step is not None:
            on_step(step, task_id, loss, model)
    return model, trace


def fine_tune_new_task(
    model: NoisePredictor,
    new_task_data: TaskDataset,
    config: TrainConfig,
    init_rng: np.random.Generator | None = None,
    on_step: Callable | None = None,
) -> tuple[NoisePredictor, LossTrace]:
    """Append a fresh exclusive collection and train it with phi frozen.

    Every pre-existing tensor (shared and per-task) is bit-identical on
    return; only the new task's tensors move.
    """
    if model.config.conditioning != SHARED_REPRESENTATION:
        raise ValueError("fine_tune_new_task requires a shared-representation model")
    config.validate()
    if len(new_task_data.images) == 0:
        raise ValueError("empty dataset")
    seq = np.random.SeedSequence(config.seed)
    seeds = seq.spawn(3)
    rng_init = init_rng if init_rng is not None else np.random.default_rng(seeds[0])
    new_task = model.add_task(rng_init)
    trainable = set(f"task_{new_task}/{k}" for k in model.task_parameters(new_task))

    steps = config.epochs * math.ceil(len(new_task_data.images) / config.batch_size)
    opt = AdamState()
    trace = LossTrace()
    rng_batches = np.random.default_rng(seeds[1])
    rng_noise = np.random.default_rng(seeds[2])
    data = TaskDataset(new_task, new_task_data.images, new_task_data.label_meta)
    stream = batches([data], config.batch_size, rng_batches)
    for step in range(1, steps + 1):
        _, batch = next(stream)
        loss = train_step(model, opt, config, batch, new_task, rng_noise, trainable)
        trace.append(step, new_task, loss)
        if on_step is not None:
            on_step(step, new_task, loss, model)
    return model, trace


@dataclass
class GradCheckGroup:
    name: str
    coords: int
    within_tolerance: int
    max_rel_error: float


@dataclass
class GradCheckReport:
    groups: list
    tolerance: float
    step: float

    @property
    def ok(self) -> bool:
        total = sum(g.coords for g in self.groups)
        good = sum(g.within_tolerance for g in self.groups)
        return total > 0 and good / total >= 0.99

    @property
    def max_rel_error(self) -> float:
        return max(g.max_rel_error for g in self.groups)

    def fraction_ok(self) -> float:
        total = sum(g.coords for g in self.groups)
        return sum(g.within_tolerance for g in self.groups) / total


def _rel_error(a: float, f: float) -> float:
    scale = max(abs(a), abs(f))
    if scale < 1e-10:
        return 0.0
    return abs(a - f) / scale


def gradient_check(
    model: NoisePredictor,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    task=None,
    step: float = 1e-3,
    coords_per_group: int = 200,
    tolerance: float = 1e-3,
    batch_size: int = 4,
) -> GradCheckReport:
    """Compare autograd against central finite differences on sampled coords.

    Runs the model in float64 on one fixed noised batch (the model is
    temporarily converted and restored afterwards; float32 -> float64 -> float32
    round-trips exactly). Groups follow the parameter routing: "shared" plus
    one group per exclusive collection. Meant for tiny configurations only.
    """
    cfg = model.config
    if task is None and cfg.conditioning != "unconditional":
        task = 1
    C, S = cfg.image_channels, cfg.image_size
    x0 = rng.uniform(-1.0, 1.0, size=(batch_size, C, S, S))
    t = rng.integers(1, schedule.T + 1, size=batch_size)
    eps = rng.standard_normal(size=x0.shape)
    abar = schedule.alpha_bars[t - 1].reshape(-1, 1, 1, 1)
    x_t = np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps

    model.double()
    try:
        xt = torch.from_numpy(x_t)
        tt = torch.from_numpy(t.astype(np.int64))
        target = torch.from_numpy(eps)

        def forward_loss():
            pred = model(xt, tt, task)
            return torch.mean((target - pred) ** 2)

        model.zero_grad(set_to_none=True)
        forward_loss().backward()

        groups = {"shared": model.shared_parameters()}
        if cfg.conditioning == SHARED_REPRESENTATION:
            for i in range(1, cfg.n_tasks + 1):
                groups[f"task_{i}"] = model.task_parameters(i)

        check_rng = np.random.default_rng(rng.integers(2**63))
        report_groups = []
        for gname, params in groups.items():
            tensors = sorted(params.items())
            sizes = np.array([p.numel() for _, p in tensors])
            offsets = np.concatenate([[0], np.cumsum(sizes)])
            n = min(coords_per_group, int(sizes.sum()))
            # pick coordinates from the group's flattened concatenation so the
            # requested count is met exactly, spread over tensors by size
            chosen = np.sort(check_rng.choice(int(sizes.sum()), size=n, replace=False))
            good = 0
            max_err = 0.0
            for which, coord in zip(np.searchsorted(offsets, chosen, "right") - 1, chosen):
                p = tensors[which][1]
                k = int(coord - offsets[which])
                flat = p.data.view(-1)
                grad_k = float(p.grad.view(-1)[k]) if p.grad is not None else 0.0
                orig = float(flat[k])
                with torch.no_grad():
                    flat[k] = orig + step
                    lp = float(forward_loss())
                    flat[k] = orig - step
                    lm = float(forward_loss())
                    flat[k] = orig
                fd = (lp - lm) / (2.0 * step)
                err = _rel_error(grad_k, fd)
                max_err = max(max_err, err)
                good += err <= tolerance
            report_groups.append(GradCheckGroup(gname, n, good, max_err))
    finally:
        model.float()
    return GradCheckReport(report_groups, tolerance, step)
