"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np

from .errors import LengthMismatch, ShapeMismatch
from .tokens import TrajectoryWindow


def check_windows(X, C: int | None = None, H: int | None = None) -> list[TrajectoryWindow]:
    """Materialize ``X`` as a nonempty list of validated windows.

    With ``C``/``H`` given, windows longer than requested are trimmed
    (last C context frames, first H future frames); shorter ones raise.
    """
    if isinstance(X, TrajectoryWindow):
        X = [X]
    windows = list(X)
    if not windows:
        raise ValueError("expected at least one window")
    out = []
    for w in windows:
        if not isinstance(w, TrajectoryWindow):
            raise TypeError(f"expected TrajectoryWindow, got {type(w).__name__}")
        w.validate()
        if C is not None or H is not None:
            if (C is not None and w.C < C) or (H is not None and w.H < H):
                raise LengthMismatch(f"window {w.clip_id} (C={w.C}, H={w.H}) shorter than C={C}, H={H}")
            w = w.with_lengths(C, H)
        out.append(w)
    return out


def check_pose_array(poses, H: int | None = None) -> np.ndarray:
    """``(H, 4, 4)`` or ``(n, H, 4, 4)`` float array of finite poses."""
    poses = np.asarray(poses, dtype=float)
    if poses.ndim not in (3, 4) or poses.shape[-2:] != (4, 4):
        raise ShapeMismatch(f"expected (..., H, 4, 4) poses, got {poses.shape}")
    if H is not None and poses.shape[-3] != H:
        raise LengthMismatch(f"expected horizon {H}, got {poses.shape[-3]}")
    if not np.all(np.isfinite(poses)):
        raise ValueError("poses contain NaN or Inf")
    return poses
