"""Finite-difference check of the full model plus training objective."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor
from .losses import total_loss
from .model import ForecastNet, ModelConfig, _zero_init, gradient_check
from .rng import generator
from .schedule import build_schedule, q_sample, v_target
from .synth import DatasetConfig, generate_windows
from .tokens import TokenStandardizer, standardize
from .trainer import window_arrays


def full_model_gradcheck(cfg: ModelConfig, seed: int = 0, n_probes: int = 200, batch: int = 2,
                         h: float = 1e-5, **check_kwargs) -> dict:
    """Gradient check of ``total_loss`` through every parameter in float64.

    Extra keyword arguments go to :func:`posecast.model.gradient_check`.
    Zero-initialized modulation and output layers are first re-drawn with
    the ordinary fan-in uniform init; at exact zero most upstream gradients
    vanish and the check would be vacuous.
    """
    model = ForecastNet(cfg, seed=seed, dtype=np.float64)
    for name, p in model.params.items():
        if _zero_init(name):
            bound = 1.0 / np.sqrt(p.shape[0])
            p.data[...] = generator(seed, "perturb", name).uniform(-bound, bound, p.shape)
    windows = generate_windows(DatasetConfig(count=batch, C=cfg.C, H=cfg.H, n_points=cfg.n_points), seed)
    data = window_arrays(windows, cfg, seed)
    stats = TokenStandardizer(warmup_batches=1).partial_fit(
        np.concatenate([data.ctx_tokens.reshape(-1, 9), data.fut_tokens.reshape(-1, 9)])).stats_
    schedule = build_schedule(cfg.T, cfg.S)
    rng = generator(seed, "gradcheck-batch")
    # moderate noise levels keep the decoded poses away from degenerate rotations
    t = rng.integers(0, schedule.T // 2, size=batch)
    y0 = standardize(data.fut_tokens, stats)
    eps = rng.standard_normal(y0.shape)
    y_t, v_tgt = q_sample(y0, t, eps, schedule), v_target(y0, eps, t, schedule)
    ctx = standardize(data.ctx_tokens, stats)

    def loss_fn() -> Tensor:
        cond = model.condition(ctx, data.boxes, data.points, data.centroid, data.knn)
        v_pred = model.dit_forward(y_t, t, cond)
        return total_loss({"y_t": y_t, "v_tgt": v_tgt, "t": t, "gt_R": data.gt_R, "gt_t": data.gt_t},
                          v_pred, schedule, stats)[0]

    return gradient_check(model.params, loss_fn, n_probes=n_probes, h=h, seed=seed, **check_kwargs)
