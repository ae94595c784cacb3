"""Estimator facade: fit on labeled images, sample and score like sklearn.

DiffusionGenerator wraps model construction, the noise schedule, training,
sampling, and the reconstruction score behind the get_params/set_params
contract, so it composes with sklearn tooling (clone, grid search over the
hyperparameters, pipelines that end in a generator).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .diffusion import build_linear_schedule
from .errors import ConfigError
from .metrics import generate_samples, reconstruct, ssim
from .training import TrainConfig, fine_tune_new_task, train
from .unet import SHARED_REPRESENTATION, UNCONDITIONAL, ModelConfig, init_model
from .datasets import TaskDataset
from .validation import check_images, check_labels, check_square_power_sized


class DiffusionGenerator(BaseEstimator):
    """Denoising diffusion image generator with optional per-task heads.

    conditioning picks the method: "unconditional" ignores y, "class" feeds
    y through a label embedding, "shared" (default) gives every class its
    own copy of the first and last network stages and trains only the drawn
    class's copy each step.

    Parameters mirror TrainConfig and ModelConfig; attributes learned by fit
    carry the usual trailing underscore (model_, schedule_, classes_, ...).
    """

    def __init__(
        self,
        conditioning: str = SHARED_REPRESENTATION,
        base_channels: int = 32,
        n_stages: int = 4,
        time_embed_dim: int = 64,
        exclusive_stages: tuple = ("first", "last"),
        timesteps: int = 500,
        beta_start: float = 1e-4,
        beta_end: float = 0.02,
        sigma_mode: str = "beta",
        epochs: int = 10,
        batch_size: int = 64,
        learning_rate: float = 5e-4,
        random_state: int = 0,
    ):
        self.conditioning = conditioning
        self.base_channels = base_channels
        self.n_stages = n_stages
        self.time_embed_dim = time_embed_dim
        self.exclusive_stages = exclusive_stages
        self.timesteps = timesteps
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.sigma_mode = sigma_mode
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    def _tasks_from(self, X, y):
        X = check_images(X)
        if self.conditioning == UNCONDITIONAL:
            return X, [TaskDataset(1, X)], np.array([], dtype=np.int64)
        if y is None:
            raise ValueError(f"{self.conditioning!r} conditioning needs y")
        y = check_labels(y, X.shape[0])
        classes = np.unique(y)
        tasks = [
            TaskDataset(i, X[y == cls], int(cls))
            for i, cls in enumerate(classes, start=1)
        ]
        return X, tasks, classes

    def _train_config(self):
        return TrainConfig(
            schedule=build_linear_schedule(
                self.timesteps, self.beta_start, self.beta_end, self.sigma_mode
            ),
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.random_state,
        )

    def fit(self, X, y=None):
        """Train on images X in [-1, 1], one task per distinct label in y."""
        X, tasks, classes = self._tasks_from(X, y)
        check_square_power_sized(X.shape[2], self.n_stages)
        if X.shape[2] != X.shape[3]:
            raise ValueError(f"images must be square, got {X.shape[2]}x{X.shape[3]}")
        config = ModelConfig(
            image_channels=X.shape[1],
            image_size=X.shape[2],
            base_channels=self.base_channels,
            n_stages=self.n_stages,
            n_tasks=0 if self.conditioning == UNCONDITIONAL else len(tasks),
            exclusive_stages=(
                tuple(self.exclusive_stages)
                if self.conditioning == SHARED_REPRESENTATION
                else ()
            ),
            conditioning=self.conditioning,
            time_embed_dim=self.time_embed_dim,
        )
        try:
            config.validate()
        except ConfigError as e:
            raise ValueError(str(e)) from e
        train_config = self._train_config()
        train_config.validate()
        model = init_model(config, np.random.default_rng([self.random_state, 0]))
        self.model_, self.loss_trace_ = train(model, tasks, train_config)
        self.schedule_ = train_config.schedule
        self.classes_ = classes
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise ValueError("this DiffusionGenerator instance is not fitted yet")

    def _task_of(self, label):
        if self.model_.config.conditioning == UNCONDITIONAL:
            return None
        if label is None:
            raise ValueError("pass label=<class> for a conditioned model")
        hits = np.flatnonzero(self.classes_ == label)
        if not hits.size:
            raise ValueError(f"unknown class {label!r}; fitted on {self.classes_.tolist()}")
        return int(hits[0]) + 1

    def sample(self, n_samples: int = 16, label=None, random_state=None) -> np.ndarray:
        """Draw n_samples ancestral samples, for one class if label is given."""
        self._require_fitted()
        seed = self.random_state if random_state is None else random_state
        task = self._task_of(label)
        return generate_samples(
            self.model_, self.schedule_, task, n_samples, seed, self.batch_size
        )

    def score(self, X, y=None) -> float:
        """Mean SSIM of half-chain reconstructions of X (higher is better)."""
        self._require_fitted()
        X = check_images(X)
        t_mid = max(1, self.schedule_.T // 2)
        if y is None:
            groups = [(None if self.model_.config.conditioning == UNCONDITIONAL else 1, X)]
            if self.model_.config.conditioning != UNCONDITIONAL and len(self.classes_) > 1:
                raise ValueError("y is required to score a multi-task model")
        else:
            y = check_labels(y, X.shape[0])
            groups = [(self._task_of(c), X[y == c]) for c in np.unique(y)]
        scores, weights = [], []
        rng = np.random.default_rng(self.random_state)
        for task, images in groups:
            recon = reconstruct(self.model_, self.schedule_, images, task, t_mid, rng)
            scores.append(ssim(images, recon))
            weights.append(len(images))
        return float(np.average(scores, weights=weights))

    def add_task(self, X, label=None):
        """Grow a fitted shared-representation model by one task and train it.

        Shared weights stay frozen (bit-identical); returns self.
        """
        self._require_fitted()
        X = check_images(X)
        if label is not None and np.any(self.classes_ == label):
            raise ValueError(f"class {label!r} already fitted")
        self.model_, trace = fine_tune_new_task(
            self.model_, TaskDataset(0, X, label), self._train_config()
        )
        if label is None:
            label = int(self.classes_.max()) + 1 if self.classes_.size else 1
        self.classes_ = np.append(self.classes_, label)
        base = len(self.loss_trace_.records)
        self.loss_trace_.records.extend((s + base, t, l) for s, t, l in trace.records)
        return self
