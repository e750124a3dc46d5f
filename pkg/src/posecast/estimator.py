"""scikit-learn style estimators over :class:`TrajectoryWindow` lists."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .checkpoint import load_checkpoint, save_checkpoint
from .metrics import baseline_constant_pose, baseline_constant_velocity, evaluate
from .model import ModelConfig
from .trainer import TrainConfig, sample_windows, train
from .validation import check_windows


class _ForecasterMixin:
    def score(self, X, y=None) -> float:
        """Negative mean ADE (higher is better)."""
        windows = check_windows(X)
        preds = self.predict(windows)
        return -float(np.mean([evaluate(p, w.future_poses[: len(p)]).ade for p, w in zip(preds, windows)]))


class ConstantPoseForecaster(_ForecasterMixin, BaseEstimator):
    """Repeats the anchor pose over the horizon."""

    def __init__(self, H: int | None = None):
        self.H = H

    def fit(self, X=None, y=None):
        self.fitted_ = True
        return self

    def predict(self, X) -> np.ndarray:
        return np.stack([baseline_constant_pose(w, self.H) for w in check_windows(X)])


class ConstantVelocityForecaster(_ForecasterMixin, BaseEstimator):
    """Extrapolates the last context increment."""

    def __init__(self, H: int | None = None):
        self.H = H

    def fit(self, X=None, y=None):
        self.fitted_ = True
        return self

    def predict(self, X) -> np.ndarray:
        return np.stack([baseline_constant_velocity(w, self.H) for w in check_windows(X)])


class TrajectoryForecaster(_ForecasterMixin, BaseEstimator):
    """Diffusion forecaster of future 6-DoF object poses.

    ``fit`` takes a list of windows (targets live inside the windows);
    ``predict`` returns one DDIM forecast ``(n, H, 4, 4)`` per window and
    ``sample`` returns several.

    Example:
        >>> est = TrajectoryForecaster(width=32, d_ctx=32, n_points=16, steps=2, K_warmup=1)
        >>> sorted(est.get_params())[:3]
        ['C', 'H', 'K_warmup']
    """

    def __init__(self, C=3, H=8, width=128, depth=2, d_ctx=256, n_points=512, knn_k=16, point_width=64,
                 T=1000, S=50, steps=2000, batch_size=32, learning_rate=1e-3, grad_clip_norm=1.0,
                 K_warmup=50, seed=0):
        self.C = C
        self.H = H
        self.width = width
        self.depth = depth
        self.d_ctx = d_ctx
        self.n_points = n_points
        self.knn_k = knn_k
        self.point_width = point_width
        self.T = T
        self.S = S
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.grad_clip_norm = grad_clip_norm
        self.K_warmup = K_warmup
        self.seed = seed

    def model_config(self) -> ModelConfig:
        pw = self.point_width
        return ModelConfig(C=self.C, H=self.H, d_ctx=self.d_ctx, width=self.width, depth=self.depth,
                           n_points=self.n_points, knn_k=self.knn_k, point_widths=(pw, pw, pw), T=self.T, S=self.S)

    def train_config(self) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size, steps=self.steps, learning_rate=self.learning_rate,
                           grad_clip_norm=self.grad_clip_norm, seed=self.seed, K_warmup=self.K_warmup,
                           C=self.C, H=self.H)

    def fit(self, X, y=None):
        windows = check_windows(X, self.C, self.H)
        res = train(windows, self.model_config(), self.train_config())
        self.model_, self.stats_, self.loss_curve_ = res.model, res.stats, res.curve
        return self

    def sample(self, X, n_samples: int = 1, seed: int | None = None) -> np.ndarray:
        check_is_fitted(self, "model_")
        windows = check_windows(X, self.C, self.H)
        return sample_windows(self.model_, self.stats_, windows, self.seed if seed is None else seed, n_samples)

    def predict(self, X, seed: int | None = None) -> np.ndarray:
        return self.sample(X, 1, seed)[:, 0]

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        save_checkpoint(path, self.model_, self.stats_, self.seed, {"estimator": self.get_params()})

    @classmethod
    def load(cls, path) -> "TrajectoryForecaster":
        model, stats, header = load_checkpoint(path)
        params = dict(header.get("meta", {}).get("estimator", {}))
        cfg = model.config
        params.update(C=cfg.C, H=cfg.H, width=cfg.width, depth=cfg.depth, d_ctx=cfg.d_ctx,
                      n_points=cfg.n_points, knn_k=cfg.knn_k, point_width=cfg.point_widths[0], T=cfg.T, S=cfg.S)
        est = cls(**params)
        est.model_, est.stats_, est.loss_curve_ = model, stats, []
        return est
