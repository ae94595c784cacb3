"""TOML parsing, fail-fast key checking, and dataset-derived geometry."""

from __future__ import annotations

import pytest

from srddpm import ConfigError
from srddpm.config import (
    build_model_config,
    build_schedule,
    build_train_config,
    image_shape,
    load_config,
    load_tasks,
    parse_config,
)

MINIMAL = """
[dataset]
kind = "synthetic"
"""


def test_parse_minimal_config_applies_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.dataset.kind == "synthetic"
    assert cfg.dataset.shapes == ("square", "circle")
    assert cfg.schedule.timesteps == 500
    assert cfg.train.epochs == 600
    assert cfg.train.learning_rate == 5e-4
    assert cfg.model.conditioning == "shared"
    assert cfg.metrics.n_per_task == 500


def test_unknown_key_fails_fast():
    with pytest.raises(ConfigError, match=r"\[train\].*epocs"):
        parse_config(MINIMAL + "\n[train]\nepocs = 3\n")


def test_unknown_section_fails_fast():
    with pytest.raises(ConfigError, match=r"section\(s\): optimizer"):
        parse_config(MINIMAL + "\n[optimizer]\nlr = 1\n")


def test_top_level_key_rejected():
    with pytest.raises(ConfigError):
        parse_config('kind = "synthetic"\n')


def test_bad_toml_reports_origin():
    with pytest.raises(ConfigError, match="myfile"):
        parse_config("[dataset\n", origin="myfile")


def test_kind_is_required_and_checked():
    with pytest.raises(ConfigError, match="kind"):
        parse_config("[dataset]\n")
    with pytest.raises(ConfigError, match="kind"):
        parse_config('[dataset]\nkind = "imagenet"\n')


def test_nested_table_rejected():
    with pytest.raises(ConfigError, match="extra"):
        parse_config('[dataset]\nkind = "synthetic"\n[dataset.extra]\na = 1\n')


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "none.toml")


def test_load_config_reads_file(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text(MINIMAL + "\n[train]\nepochs = 2\n")
    assert load_config(p).train.epochs == 2


@pytest.mark.parametrize(
    "kind, expected",
    [("mnist", (1, 28)), ("fashion_mnist", (1, 28)), ("cifar10", (3, 32)), ("cifar100", (3, 32))],
)
def test_image_shape_per_kind(kind, expected):
    cfg = parse_config(f'[dataset]\nkind = "{kind}"\n')
    assert image_shape(cfg.dataset) == expected


def test_image_shape_with_padding():
    cfg = parse_config('[dataset]\nkind = "mnist"\npad_to = 32\n')
    assert image_shape(cfg.dataset) == (1, 32)
    small = parse_config('[dataset]\nkind = "mnist"\npad_to = 16\n')
    with pytest.raises(ConfigError):
        image_shape(small.dataset)


def test_image_shape_synthetic_size():
    cfg = parse_config('[dataset]\nkind = "synthetic"\nsize = 24\n')
    assert image_shape(cfg.dataset) == (1, 24)


def test_load_tasks_synthetic_splits_differ():
    cfg = parse_config('[dataset]\nkind = "synthetic"\ncount = 5\n')
    train = load_tasks(cfg.dataset, train=True)
    test = load_tasks(cfg.dataset, train=False)
    assert len(train) == len(test) == 2
    assert train[0].images.shape == test[0].images.shape
    import numpy as np

    assert not np.array_equal(train[0].images, test[0].images)
    # same config, same split: identical
    again = load_tasks(cfg.dataset, train=True)
    assert np.array_equal(train[0].images, again[0].images)


def test_build_model_config_three_methods():
    base = MINIMAL + '\n[model]\nbase_channels = 4\nn_stages = 2\ntime_embed_dim = 8\n'
    shared = build_model_config(parse_config(base), n_tasks=3)
    assert shared.conditioning == "shared"
    assert shared.n_tasks == 3
    assert shared.exclusive_stages == ("first", "last")

    cls = parse_config(base.replace("[model]", '[model]\nconditioning = "class"'))
    cc = build_model_config(cls, n_tasks=3)
    assert cc.n_tasks == 3 and cc.exclusive_stages == ()

    unc = parse_config(base.replace("[model]", '[model]\nconditioning = "unconditional"'))
    uu = build_model_config(unc, n_tasks=3)
    assert uu.n_tasks == 0 and uu.exclusive_stages == ()


def test_build_model_config_validates_geometry():
    cfg = parse_config('[dataset]\nkind = "mnist"\n')  # 28 not divisible by 8
    with pytest.raises(ConfigError, match="divisible"):
        build_model_config(cfg, n_tasks=2)


def test_build_schedule_and_train_config():
    cfg = parse_config(
        MINIMAL + "\n[schedule]\ntimesteps = 25\nsigma_mode = \"beta_tilde\"\n"
    )
    sch = build_schedule(cfg.schedule)
    assert sch.T == 25 and sch.sigma_mode == "beta_tilde"
    tc = build_train_config(cfg, sch)
    assert tc.schedule is sch and tc.epochs == 600

    bad = parse_config(MINIMAL + "\n[train]\nlearning_rate = -1.0\n")
    with pytest.raises(ConfigError):
        build_train_config(bad, sch)
