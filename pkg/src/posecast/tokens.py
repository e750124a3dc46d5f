"""Depth-normalized pose tokens, channel standardization and window building.

A pose token is the 9-vector ``[u, v, s, a1, a2, a3, b1, b2, b3]`` with
``u = x/z``, ``v = y/z``, ``s = ln z`` and the 6D rotation columns ``a, b``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import se3
from .errors import AlreadyFrozen, InvalidCounts, NonPositiveDepth, ShapeMismatch, UnfrozenStats

TOKEN_DIM = 9
BOX_DIM = 4
#: Smallest depth (meters) a pose may have and still be tokenized.
Z_MIN_DATA = 1e-4
SIGMA_FLOOR = 1e-6
K_WARMUP = 50


def depth_normalize(pose) -> np.ndarray:
    """Tokenize poses ``(..., 4, 4)`` into ``(..., 9)`` depth-normalized tokens."""
    pose = np.asarray(pose, dtype=float)
    t = se3.translation_of(pose)
    z = t[..., 2]
    if np.any(~(z >= Z_MIN_DATA)):
        raise NonPositiveDepth(f"pose depth below {Z_MIN_DATA} m: min z = {np.min(z):.6g}")
    uv = t[..., :2] / z[..., None]
    return np.concatenate([uv, np.log(z)[..., None], se3.rot6d_encode(se3.rotation_of(pose))], axis=-1)


def depth_denormalize(tokens) -> np.ndarray:
    """Inverse of :func:`depth_normalize`; ``z = exp(s)`` is always positive."""
    tokens = np.asarray(tokens, dtype=float)
    if tokens.shape[-1] != TOKEN_DIM:
        raise ShapeMismatch(f"expected trailing dim {TOKEN_DIM}, got {tokens.shape}")
    z = np.exp(tokens[..., 2])
    t = np.stack([tokens[..., 0] * z, tokens[..., 1] * z, z], axis=-1)
    return se3.make_pose(se3.rot6d_decode(tokens[..., 3:]), t)


@dataclass(frozen=True)
class TokenStats:
    """Per-channel mean and (population) standard deviation of tokens."""

    mu: np.ndarray
    sigma: np.ndarray
    frozen: bool = True

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(TOKEN_DIM)
        sigma = np.maximum(np.array(self.sigma, dtype=float).reshape(TOKEN_DIM), SIGMA_FLOOR)
        mu.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def identity(cls) -> "TokenStats":
        return cls(np.zeros(TOKEN_DIM), np.ones(TOKEN_DIM))

    def to_dict(self) -> dict:
        return {"mu": [float(x) for x in self.mu], "sigma": [float(x) for x in self.sigma], "frozen": self.frozen}

    @classmethod
    def from_dict(cls, d: dict) -> "TokenStats":
        return cls(np.asarray(d["mu"]), np.asarray(d["sigma"]), bool(d.get("frozen", True)))

    def digest(self) -> str:
        return hashlib.sha256(self.mu.tobytes() + self.sigma.tobytes() + bytes([self.frozen])).hexdigest()


def _require_frozen(stats: TokenStats) -> None:
    if not stats.frozen:
        raise UnfrozenStats("token statistics must be frozen before use")


def standardize(tokens, stats: TokenStats) -> np.ndarray:
    _require_frozen(stats)
    return (np.asarray(tokens, dtype=float) - stats.mu) / stats.sigma


def destandardize(tokens, stats: TokenStats) -> np.ndarray:
    _require_frozen(stats)
    return np.asarray(tokens, dtype=float) * stats.sigma + stats.mu


class TokenStandardizer(TransformerMixin, BaseEstimator):
    """Channel-wise standardizer whose statistics freeze after a warmup.

    Statistics are accumulated batch by batch with :meth:`partial_fit`; once
    ``warmup_batches`` batches have been seen the statistics freeze and any
    further fitting raises :class:`AlreadyFrozen`.
    """

    def __init__(self, warmup_batches: int = K_WARMUP):
        self.warmup_batches = warmup_batches

    def partial_fit(self, X, y=None):
        if getattr(self, "stats_", None) is not None and self.stats_.frozen:
            raise AlreadyFrozen("standardization statistics are frozen")
        X = np.asarray(X, dtype=float).reshape(-1, TOKEN_DIM)
        if not hasattr(self, "n_seen_"):
            self.n_seen_, self.n_batches_ = 0, 0
            self.mean_, self.m2_ = np.zeros(TOKEN_DIM), np.zeros(TOKEN_DIM)
        if len(X):
            # Chan et al. pairwise merge of (count, mean, M2)
            n_b = len(X)
            mean_b = X.mean(axis=0)
            m2_b = ((X - mean_b) ** 2).sum(axis=0)
            n = self.n_seen_ + n_b
            delta = mean_b - self.mean_
            self.mean_ = self.mean_ + delta * (n_b / n)
            self.m2_ = self.m2_ + m2_b + delta**2 * (self.n_seen_ * n_b / n)
            self.n_seen_ = n
        self.n_batches_ += 1
        frozen = self.n_batches_ >= self.warmup_batches
        if frozen and self.n_seen_ == 0:
            raise InvalidCounts("no tokens seen during warmup")
        self.stats_ = TokenStats(self.mean_, np.sqrt(self.m2_ / max(self.n_seen_, 1)), frozen=frozen)
        return self

    def fit(self, X, y=None):
        """Fit from a sequence of token batches (each ``(..., 9)``).

        Frozen statistics stay frozen: refitting raises :class:`AlreadyFrozen`
        (use ``sklearn.base.clone`` for a fresh standardizer).
        """
        if getattr(self, "stats_", None) is not None and self.stats_.frozen:
            raise AlreadyFrozen("standardization statistics are frozen")
        for attr in ("stats_", "n_seen_", "n_batches_", "mean_", "m2_"):
            self.__dict__.pop(attr, None)
        batches = list(X)
        if len(batches) < self.warmup_batches:
            raise InvalidCounts(f"need {self.warmup_batches} warmup batches, got {len(batches)}")
        for batch in batches[: self.warmup_batches]:
            self.partial_fit(batch)
        return self

    def transform(self, X):
        return standardize(X, self._stats())

    def inverse_transform(self, X):
        return destandardize(X, self._stats())

    def _stats(self) -> TokenStats:
        stats = getattr(self, "stats_", None)
        if stats is None:
            raise UnfrozenStats("standardizer has not been fitted")
        return stats


def fit_standardization(warmup_batches, k_warmup: int = K_WARMUP) -> TokenStats:
    """Estimate frozen token statistics over the first ``k_warmup`` batches."""
    return TokenStandardizer(warmup_batches=k_warmup).fit(warmup_batches).stats_


@dataclass
class TrajectoryWindow:
    """One sample: C context poses and boxes, H future poses, anchor cloud.

    Every pose is expressed in the anchor camera frame (the last context
    frame). ``anchor_points`` columns are camera xyz then object-frame xyz.
    """

    clip_id: str
    fps: float
    context_poses: np.ndarray
    context_boxes: np.ndarray
    future_poses: np.ndarray
    anchor_points: np.ndarray
    intrinsics: tuple = (500.0, 500.0, 320.0, 240.0)
    label: str | None = None
    extra: dict = field(default_factory=dict)

    @property
    def C(self) -> int:
        return len(self.context_poses)

    @property
    def H(self) -> int:
        return len(self.future_poses)

    @property
    def anchor_pose(self) -> np.ndarray:
        return self.context_poses[-1]

    def validate(self) -> "TrajectoryWindow":
        if self.context_poses.shape[1:] != (4, 4) or self.future_poses.shape[1:] != (4, 4):
            raise ShapeMismatch("poses must be (K, 4, 4)")
        if self.context_boxes.shape != (self.C, BOX_DIM):
            raise ShapeMismatch(f"expected ({self.C}, 4) boxes, got {self.context_boxes.shape}")
        if self.anchor_points.ndim != 2 or self.anchor_points.shape[1] != 6 or len(self.anchor_points) < 1:
            raise ShapeMismatch(f"anchor points must be (N>=1, 6), got {self.anchor_points.shape}")
        z = np.concatenate([self.context_poses[:, 2, 3], self.future_poses[:, 2, 3]])
        if np.any(~(z > 0)):
            raise NonPositiveDepth("window contains a pose with z <= 0")
        if np.any((self.context_boxes < 0) | (self.context_boxes > 1)):
            raise ShapeMismatch("boxes must lie in the unit square")
        return self

    def with_lengths(self, C: int | None = None, H: int | None = None) -> "TrajectoryWindow":
        """Keep the last ``C`` context frames and first ``H`` future frames.

        The anchor frame is unchanged, so trimming never re-expresses poses.
        """
        C = self.C if C is None else C
        H = self.H if H is None else H
        if not (1 <= C <= self.C and 1 <= H <= self.H):
            raise InvalidCounts(f"cannot trim C={self.C},H={self.H} window to C={C},H={H}")
        return TrajectoryWindow(
            self.clip_id, self.fps, self.context_poses[-C:], self.context_boxes[-C:],
            self.future_poses[:H], self.anchor_points, self.intrinsics, self.label, dict(self.extra),
        )


def build_window(
    poses_in_cam,
    cam_to_world,
    boxes,
    anchor_points,
    C: int = 3,
    H: int = 8,
    clip_id: str = "",
    fps: float = 6.0,
    intrinsics=(500.0, 500.0, 320.0, 240.0),
    label: str | None = None,
) -> TrajectoryWindow:
    """Canonicalize a C+H frame slice into the anchor (last context) camera frame.

    Args:
        poses_in_cam: (C+H, 4, 4) object poses, each in its own frame's camera.
        cam_to_world: (C+H, 4, 4) camera extrinsics per frame.
        boxes: (C, 4) or (C+H, 4) normalized ``[cx, cy, w, h]``; only the
            first C rows are used.
        anchor_points: (N, 6) anchor-frame cloud.
    """
    poses_in_cam = np.asarray(poses_in_cam, dtype=float)
    cam_to_world = np.asarray(cam_to_world, dtype=float)
    if len(poses_in_cam) != C + H or len(cam_to_world) != C + H:
        raise ShapeMismatch(f"need {C + H} poses and extrinsics, got {len(poses_in_cam)}/{len(cam_to_world)}")
    boxes = np.asarray(boxes, dtype=float)
    if len(boxes) < C:
        raise ShapeMismatch(f"need at least {C} boxes")
    anchor = C - 1
    canon = se3.reexpress_in_anchor(poses_in_cam, cam_to_world, cam_to_world[anchor])
    if np.any(~(canon[:, 2, 3] >= Z_MIN_DATA)):
        raise NonPositiveDepth("re-expressed pose falls behind the anchor camera")
    return TrajectoryWindow(
        clip_id=clip_id,
        fps=float(fps),
        context_poses=canon[:C],
        context_boxes=boxes[:C].copy(),
        future_poses=canon[C:],
        anchor_points=np.asarray(anchor_points, dtype=float),
        intrinsics=tuple(float(x) for x in intrinsics),
        label=label,
    )
