"""Forecast metrics (ADE/FDE/ARE/FRE and error-growth slopes) and baselines."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import se3
from .errors import LengthMismatch
from .rng import generator
from .tokens import TrajectoryWindow

METRIC_NAMES = ("ade", "fde", "des", "are", "fre", "res")


@dataclass(frozen=True)
class MetricReport:
    """Metric means over ``n_samples`` forecasts.

    Translation errors are in meters, rotation errors in degrees; ``des``
    and ``res`` are per-step slopes.
    """

    ade: float
    fde: float
    des: float
    are: float
    fre: float
    res: float
    n_samples: int = 1

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def combine(cls, reports) -> "MetricReport":
        """Size-weighted mean of several reports."""
        reports = [r for r in reports if r.n_samples > 0]
        if not reports:
            raise ValueError("nothing to combine")
        n = sum(r.n_samples for r in reports)
        vals = {k: sum(getattr(r, k) * r.n_samples for r in reports) / n for k in METRIC_NAMES}
        return cls(**vals, n_samples=n)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value", "n"])
        for k in METRIC_NAMES:
            w.writerow([k, repr(float(getattr(self, k))), self.n_samples])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({f.name: getattr(self, f.name) for f in fields(self)}, indent=2, sort_keys=True) + "\n"


def ols_slope(values) -> float:
    """Least-squares slope of ``values`` against step index 1..H (0 if H < 2)."""
    y = np.asarray(values, dtype=float)
    if len(y) < 2:
        return 0.0
    k = np.arange(1, len(y) + 1, dtype=float)
    kc = k - k.mean()
    return float(np.dot(kc, y - y.mean()) / np.dot(kc, kc))


def step_errors(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    """Per-step translation error (m) and geodesic rotation error (deg)."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise LengthMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    if pred.ndim != 3 or len(pred) < 1:
        raise LengthMismatch("need H >= 1 poses of shape (4, 4)")
    e = np.linalg.norm(se3.translation_of(pred) - se3.translation_of(gt), axis=-1)
    r = np.degrees(se3.geodesic_angle(se3.rotation_of(gt), se3.rotation_of(pred)))
    return e, r


def evaluate(pred, gt) -> MetricReport:
    e, r = step_errors(pred, gt)
    return MetricReport(
        ade=float(e.mean()), fde=float(e[-1]), des=ols_slope(e),
        are=float(r.mean()), fre=float(r[-1]), res=ols_slope(r), n_samples=1,
    )


def window_seed(seed: int, clip_id: str) -> int:
    """Deterministic per-window sampling seed."""
    return int(generator(seed, "eval", clip_id).integers(0, 2**63 - 1))


def evaluate_batch(windows, predictor, seed: int = 0, samples: int = 1) -> MetricReport:
    """Mean metrics over windows.

    ``predictor(window, seed)`` returns ``(H, 4, 4)`` poses. With
    ``samples > 1`` each window is scored by the draw with the lowest ADE.
    """
    windows = list(windows)
    if not windows:
        raise ValueError("evaluate_batch needs at least one window")
    reports = []
    for w in windows:
        base = window_seed(seed, w.clip_id)
        best = None
        for j in range(samples):
            rep = evaluate(predictor(w, base if j == 0 else window_seed(base, f"draw-{j}")), w.future_poses)
            if best is None or rep.ade < best.ade:
                best = rep
        reports.append(best)
    return MetricReport.combine(reports)


def baseline_constant_pose(window: TrajectoryWindow, H: int | None = None) -> np.ndarray:
    H = window.H if H is None else H
    return np.repeat(window.anchor_pose[None], H, axis=0)


def baseline_constant_velocity(window: TrajectoryWindow, H: int | None = None) -> np.ndarray:
    H = window.H if H is None else H
    if window.C < 2:
        return baseline_constant_pose(window, H)
    dt, dR = se3.pose_increment(window.context_poses[-2], window.context_poses[-1])
    out = np.empty((H, 4, 4))
    pose = window.anchor_pose
    for k in range(H):
        pose = se3.apply_increment(pose, dt, dR)
        out[k] = pose
    return out
