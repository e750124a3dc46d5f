"""Cosine noise schedule, v-parameterization and deterministic DDIM sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidCounts, ShapeMismatch
from .rng import generator

COSINE_OFFSET = 0.008
BETA_MAX = 0.999
BETA_MIN = 1e-8


@dataclass(frozen=True)
class DiffusionSchedule:
    T: int
    S: int
    alpha_bar: np.ndarray
    beta: np.ndarray
    snr: np.ndarray
    p2_weight: np.ndarray
    sampling_steps: np.ndarray

    def to_dict(self) -> dict:
        return {"T": self.T, "S": self.S}


def build_schedule(T: int = 1000, S: int = 50) -> DiffusionSchedule:
    """Cosine schedule tables plus an S-step DDIM grid that always contains T-1."""
    if not (isinstance(T, (int, np.integer)) and isinstance(S, (int, np.integer))) or not 1 <= S <= T:
        raise InvalidCounts(f"need integers 1 <= S <= T, got T={T}, S={S}")
    T, S = int(T), int(S)

    def f(t):
        return np.cos((t / T + COSINE_OFFSET) / (1 + COSINE_OFFSET) * np.pi / 2) ** 2

    alpha_bar = f(np.arange(1, T + 1, dtype=float)) / f(0.0)
    prev = np.concatenate([[1.0], alpha_bar[:-1]])
    beta = np.clip(1.0 - alpha_bar / prev, BETA_MIN, BETA_MAX)
    snr = alpha_bar / (1.0 - alpha_bar)
    p2 = 1.0 / (1.0 + snr)
    steps = np.unique(np.round(np.linspace(T - 1, 0, S)).astype(np.int64))
    for arr in (alpha_bar, beta, snr, p2, steps):
        arr.setflags(write=False)
    return DiffusionSchedule(T, S, alpha_bar, beta, snr, p2, steps)


def _coef(schedule: DiffusionSchedule, t, ndim: int):
    t = np.asarray(t)
    if np.any((t < 0) | (t >= schedule.T)):
        raise InvalidCounts(f"timestep outside 0..{schedule.T - 1}")
    ab = schedule.alpha_bar[t]
    # per-sample coefficients broadcast over the trailing (H, 9) dims
    ab = np.reshape(ab, np.shape(ab) + (1,) * (ndim - np.ndim(ab)))
    return np.sqrt(ab), np.sqrt(1.0 - ab)


def _same_shape(a, b) -> None:
    if np.shape(a) != np.shape(b):
        raise ShapeMismatch(f"shape mismatch {np.shape(a)} vs {np.shape(b)}")


def q_sample(y0, t, eps, schedule: DiffusionSchedule) -> np.ndarray:
    _same_shape(y0, eps)
    sa, sb = _coef(schedule, t, np.ndim(y0))
    return sa * y0 + sb * eps


def v_target(y0, eps, t, schedule: DiffusionSchedule) -> np.ndarray:
    _same_shape(y0, eps)
    sa, sb = _coef(schedule, t, np.ndim(y0))
    return sa * eps - sb * y0


def reconstruct_y0(y_t, v, t, schedule: DiffusionSchedule) -> np.ndarray:
    _same_shape(y_t, v)
    sa, sb = _coef(schedule, t, np.ndim(y_t))
    return sa * y_t - sb * v


def ddim_sample(denoiser, schedule: DiffusionSchedule, conditioning=None, seed: int = 0,
                shape=(8, 9), init=None, return_intermediates: bool = False):
    """Deterministic (eta = 0) DDIM over ``schedule.sampling_steps``.

    ``denoiser(y_t, t, conditioning)`` must return the predicted v with the
    shape of ``y_t``; ``t`` is a Python int. The start noise is drawn from
    ``generator(seed)`` unless ``init`` is given.
    """
    y = np.array(init, dtype=float) if init is not None else generator(seed).standard_normal(shape)
    steps = schedule.sampling_steps[::-1]
    trace = []
    for i, t in enumerate(steps):
        t = int(t)
        v = np.asarray(denoiser(y, t, conditioning), dtype=float)
        _same_shape(y, v)
        ab = schedule.alpha_bar[t]
        y0_hat = np.sqrt(ab) * y - np.sqrt(1.0 - ab) * v
        eps_hat = (y - np.sqrt(ab) * y0_hat) / np.sqrt(1.0 - ab)
        ab_prev = schedule.alpha_bar[int(steps[i + 1])] if i + 1 < len(steps) else 1.0
        y = np.sqrt(ab_prev) * y0_hat + np.sqrt(1.0 - ab_prev) * eps_hat
        if return_intermediates:
            trace.append(y0_hat)
    return (y, trace) if return_intermediates else y


def horizon_weights(H: int) -> np.ndarray:
    """Linear ramp from 1 at the first forecast step to 3 at the last."""
    if H < 1:
        raise InvalidCounts("horizon must be >= 1")
    if H == 1:
        return np.ones(1)
    return 1.0 + 2.0 * np.arange(H) / (H - 1)
