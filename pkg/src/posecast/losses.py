"""Training objective: weighted v-loss plus decoded-pose SE(3) terms.

The SE(3) terms are computed on poses decoded from the reconstructed clean
tokens, in float64, and each is scaled per sample by alpha_bar at that
sample's diffusion step (the depth floor excepted).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ShapeMismatch
from .schedule import DiffusionSchedule, horizon_weights
from .tokens import TokenStats, TOKEN_DIM


@dataclass(frozen=True)
class LossWeights:
    lambda_R: float = 2.0
    lambda_trans: float = 20.0
    lambda_vel: float = 0.5
    lambda_acc: float = 0.1
    z_min: float = 0.05
    floor_coeff: float = 0.01

    def __post_init__(self):
        if min(asdict(self).values()) < 0:
            raise ValueError("loss weights must be non-negative")


# ------------------------------------------------------------ tensor kernels

def _f64(x) -> Tensor:
    return ag.astype(x, np.float64) if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def geodesic(R1: Tensor, R2: Tensor) -> Tensor:
    """Angle of ``R1^T R2`` as ``atan2(sin, cos)``.

    Same value as ``arccos((tr - 1) / 2)`` but well conditioned near 0 and
    pi, where arccos has an unbounded slope.
    """
    M = ag.swapaxes(R1, -1, -2) @ R2
    cos = (M[..., 0, 0] + M[..., 1, 1] + M[..., 2, 2] - 1.0) * 0.5
    w = ag.stack([M[..., 2, 1] - M[..., 1, 2], M[..., 0, 2] - M[..., 2, 0], M[..., 1, 0] - M[..., 0, 1]], axis=-1)
    sin = ag.sqrt((w * w).sum(axis=-1)) * 0.5
    return ag.atan2(sin, cos)


def _norm(x: Tensor) -> Tensor:
    return ag.sqrt((x * x).sum(axis=-1))


def _increments(R: Tensor, t: Tensor):
    return t[:, 1:] - t[:, :-1], ag.swapaxes(R[:, :-1], -1, -2) @ R[:, 1:]


def _second(dR: Tensor, dt: Tensor):
    return dt[:, 1:] - dt[:, :-1], ag.swapaxes(dR[:, :-1], -1, -2) @ dR[:, 1:]


def decode_tokens(tokens: Tensor) -> tuple[Tensor, Tensor]:
    """Depth-denormalize (B, H, 9) tokens into rotations and translations."""
    z = ag.exp(tokens[..., 2])
    trans = ag.stack([tokens[..., 0] * z, tokens[..., 1] * z, z], axis=-1)
    a, b = tokens[..., 3:6], tokens[..., 6:9]
    c1 = a / _norm(a)[..., None]
    b_perp = b - (c1 * b).sum(axis=-1, keepdims=True) * c1
    c2 = b_perp / _norm(b_perp)[..., None]
    c3 = ag.cross(c1, c2)
    return ag.stack([c1, c2, c3], axis=-1), trans


def v_loss_t(v_pred: Tensor, v_tgt, t, schedule: DiffusionSchedule) -> Tensor:
    v_pred = _f64(v_pred)
    H = v_pred.shape[-2]
    w = horizon_weights(H)
    w = w / w.mean()
    sq = (v_pred - np.asarray(v_tgt, dtype=float)) ** 2
    per = (sq * w[:, None]).mean(axis=(-2, -1))
    return (per * schedule.p2_weight[np.asarray(t)]).mean()


def aux_loss_t(pred_R, pred_t, gt_R, gt_t, ab, w: LossWeights) -> Tensor:
    rot = geodesic(_f64(gt_R), _f64(pred_R)).mean(axis=-1)
    trans = _norm(_f64(gt_t) - _f64(pred_t)).mean(axis=-1)
    return ((rot * w.lambda_R + trans * w.lambda_trans) * np.asarray(ab, dtype=float)).mean()


def _dyn_term(pred, gt) -> Tensor:
    (pdt, pdR), (gdt, gdR) = pred, gt
    d = gdt - pdt
    ang = geodesic(gdR, pdR)
    return ((d * d).sum(axis=-1) + ang * ang).mean(axis=-1)


def vel_loss_t(pred_R, pred_t, gt_R, gt_t, ab) -> Tensor:
    pred_R, pred_t, gt_R, gt_t = map(_f64, (pred_R, pred_t, gt_R, gt_t))
    if pred_t.shape[1] < 2:
        return Tensor(np.zeros(()))
    term = _dyn_term(_increments(pred_R, pred_t), _increments(gt_R, gt_t))
    return (term * np.asarray(ab, dtype=float)).mean()


def acc_loss_t(pred_R, pred_t, gt_R, gt_t, ab) -> Tensor:
    pred_R, pred_t, gt_R, gt_t = map(_f64, (pred_R, pred_t, gt_R, gt_t))
    if pred_t.shape[1] < 3:
        return Tensor(np.zeros(()))
    pdt, pdR = _increments(pred_R, pred_t)
    gdt, gdR = _increments(gt_R, gt_t)
    term = _dyn_term(_second(pdR, pdt), _second(gdR, gdt))
    return (term * np.asarray(ab, dtype=float)).mean()


def zmin_loss_t(pred_t, w: LossWeights) -> Tensor:
    z = _f64(pred_t)[..., 2]
    return ag.relu(w.z_min - z).mean(axis=-1).mean() * w.floor_coeff


# ------------------------------------------------------------ numpy wrappers

def _poses(p) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=float)
    if p.ndim == 3:
        p = p[None]
    if p.ndim != 4 or p.shape[-2:] != (4, 4):
        raise ShapeMismatch(f"expected (H, 4, 4) or (B, H, 4, 4) poses, got {p.shape}")
    return p[..., :3, :3], p[..., :3, 3]


def _alpha(t, schedule, batch: int) -> np.ndarray:
    return np.broadcast_to(schedule.alpha_bar[np.asarray(t)], (batch,))


def loss_v(v_pred, v_tgt, t, schedule: DiffusionSchedule) -> float:
    v_pred = np.asarray(v_pred, dtype=float)
    if v_pred.shape != np.shape(v_tgt) or v_pred.shape[-1] != TOKEN_DIM:
        raise ShapeMismatch(f"v shapes {v_pred.shape} vs {np.shape(v_tgt)}")
    if v_pred.ndim == 2:
        v_pred, v_tgt, t = v_pred[None], np.asarray(v_tgt)[None], np.atleast_1d(t)
    return float(v_loss_t(Tensor(v_pred), v_tgt, t, schedule).data)


def loss_aux(pred_poses, gt_poses, t, schedule: DiffusionSchedule, weights: LossWeights = LossWeights()) -> float:
    (pR, pt), (gR, gt) = _poses(pred_poses), _poses(gt_poses)
    return float(aux_loss_t(pR, pt, gR, gt, _alpha(t, schedule, len(pt)), weights).data)


def loss_vel(pred_poses, gt_poses, t, schedule: DiffusionSchedule) -> float:
    (pR, pt), (gR, gt) = _poses(pred_poses), _poses(gt_poses)
    return float(vel_loss_t(pR, pt, gR, gt, _alpha(t, schedule, len(pt))).data)


def loss_acc(pred_poses, gt_poses, t, schedule: DiffusionSchedule) -> float:
    (pR, pt), (gR, gt) = _poses(pred_poses), _poses(gt_poses)
    return float(acc_loss_t(pR, pt, gR, gt, _alpha(t, schedule, len(pt))).data)


def loss_zmin(pred_poses, weights: LossWeights = LossWeights()) -> float:
    _, pt = _poses(pred_poses)
    return float(zmin_loss_t(pt, weights).data)


TERMS = ("loss_v", "loss_aux", "loss_vel", "loss_acc", "loss_zmin")


def total_loss(batch: dict, v_pred: Tensor, schedule: DiffusionSchedule, stats: TokenStats,
               weights: LossWeights = LossWeights()) -> tuple[Tensor, dict]:
    """Full objective for one batch.

    ``batch`` holds ``y_t`` and ``v_tgt`` (B, H, 9) in standardized token
    space, integer steps ``t`` (B,), and ground-truth ``gt_R`` (B, H, 3, 3)
    and ``gt_t`` (B, H, 3) in the anchor camera frame.

    Returns the scalar loss and a per-term breakdown (already multiplied by
    its lambda, so the breakdown sums to the total).
    """
    if not stats.frozen:
        from .errors import UnfrozenStats

        raise UnfrozenStats("token statistics must be frozen before training")
    t = np.asarray(batch["t"])
    ab = schedule.alpha_bar[t]
    v = _f64(v_pred)
    y_t = np.asarray(batch["y_t"], dtype=float)
    sa = np.sqrt(ab)[:, None, None]
    sb = np.sqrt(1.0 - ab)[:, None, None]
    y0_hat = v * (-sb) + sa * y_t
    tokens = y0_hat * stats.sigma + stats.mu
    pred_R, pred_t = decode_tokens(tokens)
    gt_R, gt_t = batch["gt_R"], batch["gt_t"]
    terms = {
        "loss_v": v_loss_t(v, batch["v_tgt"], t, schedule),
        "loss_aux": aux_loss_t(pred_R, pred_t, gt_R, gt_t, ab, weights),
        "loss_zmin": zmin_loss_t(pred_t, weights),
        "loss_vel": vel_loss_t(pred_R, pred_t, gt_R, gt_t, ab) * weights.lambda_vel,
        "loss_acc": acc_loss_t(pred_R, pred_t, gt_R, gt_t, ab) * weights.lambda_acc,
    }
    total = terms["loss_v"] + terms["loss_aux"] + terms["loss_zmin"] + terms["loss_vel"] + terms["loss_acc"]
    return total, {k: float(v.data) for k, v in terms.items()}
