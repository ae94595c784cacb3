"""CLI subcommands end to end on a micro synthetic run, plus exit codes."""

from __future__ import annotations

import numpy as np
import pytest
from PIL import Image

from srddpm.checkpoint import load_checkpoint
from srddpm.cli import main

MICRO = """
[dataset]
kind = "synthetic"
shapes = ["square", "circle"]
size = 8
count = 4
seed = 1

[model]
base_channels = 4
n_stages = 2
time_embed_dim = 8
{model_extra}

[schedule]
timesteps = 6

[train]
out = "{out}"
epochs = 2
batch_size = 4
seed = 3
{train_extra}

[metrics]
n_per_task = 4
ssim_per_task = 2
"""


def micro_config(tmp_path, name="ckpt", model_extra="", train_extra=""):
    out = tmp_path / name
    text = MICRO.format(out=str(out).replace("\\", "/"), model_extra=model_extra, train_extra=train_extra)
    path = tmp_path / f"{name}.toml"
    path.write_text(text)
    return path, out


@pytest.fixture
def trained(tmp_path):
    config, out = micro_config(tmp_path)
    assert main(["train", "--config", str(config)]) == 0
    return config, out


def test_train_writes_checkpoint_and_trace(tmp_path, capsys):
    config, out = micro_config(tmp_path)
    assert main(["train", "--config", str(config)]) == 0
    assert (out / "manifest.json").is_file()
    trace = (out / "loss_trace.csv").read_text()
    assert trace.startswith("step,task,loss")
    assert len(trace.strip().splitlines()) == 5  # header + 2 epochs x 2 steps
    stdout = capsys.readouterr().out
    assert "SR-DDPM" in stdout and "wrote" in stdout


@pytest.mark.parametrize(
    "model_extra",
    ['conditioning = "unconditional"', 'conditioning = "class"'],
)
def test_train_baseline_methods(tmp_path, model_extra):
    config, out = micro_config(tmp_path, model_extra=model_extra)
    assert main(["train", "--config", str(config)]) == 0
    assert (out / "manifest.json").is_file()


def test_sample_all_tasks(trained, tmp_path):
    _, out = trained
    dest = tmp_path / "samples"
    assert main(["sample", "--ckpt", str(out), "-n", "3", "--out", str(dest)]) == 0
    for name in ("task_1.png", "task_2.png"):
        img = Image.open(dest / name)
        assert img.size[1] == 8  # one row of 8x8 tiles


def test_sample_single_task_to_file(trained, tmp_path):
    _, out = trained
    dest = tmp_path / "one.png"
    assert main(["sample", "--ckpt", str(out), "--task", "2", "-n", "2", "--out", str(dest)]) == 0
    assert dest.is_file()


def test_sample_is_seed_reproducible(trained, tmp_path):
    _, out = trained
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    for dest in (a, b):
        assert main(["sample", "--ckpt", str(out), "--task", "1", "--seed", "7", "--out", str(dest)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_sample_usage_errors(trained, tmp_path):
    _, out = trained
    assert main(["sample", "--ckpt", str(out), "--task", "9", "--out", str(tmp_path / "x")]) == 2
    assert main(["sample", "--ckpt", str(out), "--task", "x", "--out", str(tmp_path / "x")]) == 2
    # a .png target cannot hold every task
    assert main(["sample", "--ckpt", str(out), "--out", str(tmp_path / "x.png")]) == 2


def test_trace_writes_strip(trained, tmp_path):
    _, out = trained
    dest = tmp_path / "chain.png"
    rc = main(["trace", "--ckpt", str(out), "--task", "1", "--stride", "2", "--out", str(dest)])
    assert rc == 0
    img = Image.open(dest)
    # snapshots at t = 6 (start), 4, 2, 0 -> four 8px tiles + three 2px gutters
    assert img.size == (4 * 8 + 3 * 2, 8)


def test_trace_requires_task_for_conditioned(trained, tmp_path):
    _, out = trained
    assert main(["trace", "--ckpt", str(out), "--out", str(tmp_path / "t.png")]) == 2


def test_eval_reports_and_writes_csv(trained, tmp_path, capsys):
    config, out = trained
    csv_path = tmp_path / "report.csv"
    rc = main(["eval", "--ckpt", str(out), "--config", str(config), "--out", str(csv_path)])
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "SR-DDPM" in stdout and "FID" in stdout
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0].startswith("dataset,method,fid,ssim")
    assert lines[1].startswith("synthetic,SR-DDPM,")


def test_add_task_grows_checkpoint(trained, tmp_path):
    config, out = trained
    add_cfg = tmp_path / "add.toml"
    add_cfg.write_text(
        '[dataset]\nkind = "synthetic"\nshapes = ["triangle"]\nsize = 8\ncount = 4\nseed = 2\n'
        "\n[train]\nepochs = 2\nbatch_size = 4\nseed = 5\n"
    )
    grown = tmp_path / "grown"
    rc = main(["add-task", "--ckpt", str(out), "--config", str(add_cfg), "--out", str(grown)])
    assert rc == 0
    bundle = load_checkpoint(grown)
    assert bundle.model.config.n_tasks == 3
    assert (grown / "loss_trace_task_3.csv").is_file()
    # original checkpoint untouched
    assert load_checkpoint(out).model.config.n_tasks == 2


def test_add_task_rejects_multi_task_config(trained, tmp_path):
    config, out = trained
    assert main(["add-task", "--ckpt", str(out), "--config", str(config)]) == 2


def test_add_task_rejects_shape_mismatch(trained, tmp_path):
    _, out = trained
    bad = tmp_path / "bad.toml"
    bad.write_text('[dataset]\nkind = "synthetic"\nshapes = ["cross"]\nsize = 16\n')
    assert main(["add-task", "--ckpt", str(out), "--config", str(bad)]) == 2


def test_exit_2_on_config_problems(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text('[dataset]\nkind = "synthetic"\n[train]\nepocs = 1\n')
    assert main(["train", "--config", str(bad)]) == 2
    missing_out = tmp_path / "no_out.toml"
    missing_out.write_text('[dataset]\nkind = "synthetic"\n')
    assert main(["train", "--config", str(missing_out)]) == 2


def test_exit_3_on_data_problems(tmp_path, monkeypatch):
    monkeypatch.delenv("SRDDPM_DATA_ROOT", raising=False)
    cfg = tmp_path / "mnist.toml"
    cfg.write_text('[dataset]\nkind = "mnist"\n[train]\nout = "x"\n')
    assert main(["train", "--config", str(cfg)]) == 3
    assert main(["sample", "--ckpt", str(tmp_path / "nope"), "--out", str(tmp_path / "s")]) == 3


def test_exit_4_on_numeric_blowup(tmp_path):
    config, _ = micro_config(tmp_path, train_extra="learning_rate = 1e8")
    assert main(["train", "--config", str(config)]) == 4


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["sample"])  # missing required --ckpt/--out
    assert e.value.code == 2
