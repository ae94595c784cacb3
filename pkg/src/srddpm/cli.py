"""Command line interface: train, sample, eval, add-task, trace.

Exit codes: 0 success, 2 usage or configuration problem, 3 data problem,
4 numeric failure during training or evaluation.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import (
    build_model_config,
    build_schedule,
    build_train_config,
    image_shape,
    load_config,
    load_tasks,
)
from .diffusion import denoise_from
from .errors import ConfigError, DataError, NumericError
from .imaging import save_grid
from .metrics import MetricsReport, evaluate, generate_samples
from .training import fine_tune_new_task, train
from .unet import UNCONDITIONAL, chain_predictor, init_model


def _cmd_train(args) -> None:
    cfg = load_config(args.config)
    if not cfg.train.out:
        raise ConfigError("[train].out is required: where to write the checkpoint")
    tasks = load_tasks(cfg.dataset, train=True)
    schedule = build_schedule(cfg.schedule)
    model_config = build_model_config(cfg, len(tasks))
    train_config = build_train_config(cfg, schedule)
    model = init_model(model_config, np.random.default_rng([train_config.seed, 0]))
    n_params = sum(p.numel() for p in model.parameters())
    print(
        f"training {model_config.method_name}: {len(tasks)} task(s), "
        f"T={schedule.T}, {n_params} parameters"
    )
    model, trace = train(model, tasks, train_config)
    out = save_checkpoint(
        Path(cfg.train.out), model, schedule,
        train_steps=len(trace.records), seed=train_config.seed,
    )
    (out / "loss_trace.csv").write_text(trace.to_csv())
    tail = trace.losses()[-100:]
    print(f"finished {len(trace.records)} steps; mean loss over last {len(tail)}: {tail.mean():.4g}")
    print(f"wrote {out}")


def _parse_task(value, model):
    if model.config.conditioning == UNCONDITIONAL:
        return [None]
    n = model.config.n_tasks
    if value == "all":
        return list(range(1, n + 1))
    try:
        task = int(value)
    except ValueError:
        raise ConfigError(f"--task must be an integer or 'all', got {value!r}") from None
    if not 1 <= task <= n:
        raise ConfigError(f"--task {task} outside [1, {n}]")
    return [task]


def _cmd_sample(args) -> None:
    bundle = load_checkpoint(args.ckpt)
    model, schedule = bundle.model, bundle.schedule
    tasks = _parse_task(args.task, model)
    out = Path(args.out)
    as_file = out.suffix.lower() == ".png"
    if as_file and len(tasks) > 1:
        raise ConfigError("--out must be a directory when sampling every task")
    for task in tasks:
        seed = args.seed if task is None else args.seed + task
        images = generate_samples(model, schedule, task, args.n, seed)
        name = "samples.png" if task is None else f"task_{task}.png"
        dest = out if as_file else out / name
        save_grid(images, dest)
        print(f"wrote {dest} ({args.n} samples, seed {seed})")


def _cmd_eval(args) -> None:
    cfg = load_config(args.config)
    reference = load_tasks(cfg.dataset, train=False)
    report = MetricsReport()
    for ck in args.ckpt:
        bundle = load_checkpoint(ck)
        model = bundle.model
        if model.config.conditioning != UNCONDITIONAL and model.config.n_tasks != len(reference):
            raise ConfigError(
                f"{ck}: model has {model.config.n_tasks} tasks but the dataset "
                f"config yields {len(reference)}"
            )
        report.rows.append(
            evaluate(
                model, bundle.schedule, reference,
                n_per_task=cfg.metrics.n_per_task,
                seed=cfg.metrics.seed,
                dataset_name=cfg.dataset.kind,
                batch_size=cfg.metrics.batch_size,
                ssim_per_task=cfg.metrics.ssim_per_task,
            )
        )
    print(report.table())
    if args.out:
        Path(args.out).write_text(report.to_csv())
        print(f"wrote {args.out}")


def _cmd_add_task(args) -> None:
    bundle = load_checkpoint(args.ckpt)
    cfg = load_config(args.config)
    tasks = load_tasks(cfg.dataset, train=True)
    if len(tasks) != 1:
        raise ConfigError(f"add-task config must describe exactly one task, got {len(tasks)}")
    mc = bundle.model.config
    shape = image_shape(cfg.dataset)
    if shape != (mc.image_channels, mc.image_size):
        raise ConfigError(
            f"new task images are {shape[0]}x{shape[1]}x{shape[1]} but the model "
            f"expects {mc.image_channels}x{mc.image_size}x{mc.image_size}"
        )
    train_config = build_train_config(cfg, bundle.schedule)
    model, trace = fine_tune_new_task(bundle.model, tasks[0], train_config)
    new_task = model.config.n_tasks
    out = save_checkpoint(
        Path(args.out or args.ckpt), model, bundle.schedule,
        train_steps=bundle.train_steps + len(trace.records),
        seed=bundle.manifest.get("seed"),
    )
    (out / f"loss_trace_task_{new_task}.csv").write_text(trace.to_csv())
    print(f"added task {new_task} after {len(trace.records)} steps; wrote {out}")


def _cmd_trace(args) -> None:
    bundle = load_checkpoint(args.ckpt)
    model, schedule = bundle.model, bundle.schedule
    task = _parse_task(args.task, model)[0] if args.task != "all" else None
    if task is None and model.config.conditioning != UNCONDITIONAL:
        raise ConfigError("--task must name a single task for trace")
    stride = args.stride or max(1, schedule.T // 8)
    cfg = model.config
    rng = np.random.default_rng(args.seed)
    x = rng.standard_normal(
        (1, cfg.image_channels, cfg.image_size, cfg.image_size), dtype=np.float32
    )
    kept = [schedule.T]
    snaps = [x.copy()]

    def observer(t, xt):
        if t % stride == 0 or t == 0:
            kept.append(t)
            snaps.append(xt.copy())

    denoise_from(chain_predictor(model, task), schedule, x, schedule.T, rng, observer=observer)
    strip = np.concatenate(snaps)
    dest = save_grid(strip, args.out, n_cols=len(snaps))
    steps = ", ".join(str(t) for t in kept)
    print(f"wrote {dest} (snapshots at t = {steps})")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="srddpm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a TOML config")
    t.add_argument("--config", required=True, help="path to the TOML config")
    t.set_defaults(func=_cmd_train)

    s = sub.add_parser("sample", help="draw ancestral samples from a checkpoint")
    s.add_argument("--ckpt", required=True, help="checkpoint directory")
    s.add_argument("--task", default="all", help="task id, or 'all' (default)")
    s.add_argument("-n", type=int, default=16, help="samples per task (default 16)")
    s.add_argument("--seed", type=int, default=0, help="base seed (default 0)")
    s.add_argument("--out", required=True, help="output .png or directory")
    s.set_defaults(func=_cmd_sample)

    e = sub.add_parser("eval", help="score checkpoints with pooled FID and SSIM")
    e.add_argument("--ckpt", action="append", required=True, help="checkpoint directory (repeatable)")
    e.add_argument("--config", required=True, help="TOML config naming the dataset")
    e.add_argument("--out", help="also write the report as CSV here")
    e.set_defaults(func=_cmd_eval)

    a = sub.add_parser("add-task", help="fine-tune a new task head, shared weights frozen")
    a.add_argument("--ckpt", required=True, help="checkpoint directory to extend")
    a.add_argument("--config", required=True, help="TOML config describing the one new task")
    a.add_argument("--out", help="where to write the grown checkpoint (default: in place)")
    a.set_defaults(func=_cmd_add_task)

    r = sub.add_parser("trace", help="save snapshots of one denoising chain")
    r.add_argument("--ckpt", required=True, help="checkpoint directory")
    r.add_argument("--task", default="all", help="task id (required for conditioned models)")
    r.add_argument("--stride", type=int, help="timesteps between snapshots (default T/8)")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True, help="output .png strip")
    r.set_defaults(func=_cmd_trace)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        args.func(args)
        return 0
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
