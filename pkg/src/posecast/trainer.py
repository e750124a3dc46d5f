"""Deterministic training loop and the context/horizon ablation protocol."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import se3
from .errors import DataMismatch, InvalidSpec, NumericFailure
from .losses import TERMS, LossWeights, total_loss
from .metrics import MetricReport, evaluate, evaluate_batch, window_seed
from .model import ForecastNet, ModelConfig, knn_indices
from .rng import generator
from .schedule import build_schedule, ddim_sample, q_sample, v_target
from .tokens import K_WARMUP, TokenStandardizer, TokenStats, depth_denormalize, depth_normalize, destandardize, standardize

log = logging.getLogger(__name__)

SUPPORTED_C = (1, 2, 3, 5, 10)
SUPPORTED_H = (4, 8, 16, 32)


@dataclass
class TrainConfig:
    batch_size: int = 32
    steps: int = 2000
    learning_rate: float = 1e-3
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    grad_clip_norm: float = 1.0
    seed: int = 0
    K_warmup: int = K_WARMUP
    eval_every: int = 0
    C: int = 3
    H: int = 8

    def __post_init__(self):
        self.adam_betas = tuple(float(b) for b in self.adam_betas)
        if self.batch_size < 1 or self.steps < 0 or self.K_warmup < 1 or self.eval_every < 0:
            raise InvalidSpec("batch_size, K_warmup >= 1 and steps, eval_every >= 0 required")
        if not (self.learning_rate > 0 and self.adam_eps > 0 and self.grad_clip_norm > 0):
            raise InvalidSpec("learning rate, adam eps and clip norm must be positive")
        if self.C not in SUPPORTED_C or self.H not in SUPPORTED_H:
            raise InvalidSpec(f"C must be one of {SUPPORTED_C} and H one of {SUPPORTED_H}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


# ------------------------------------------------------------------ arrays

@dataclass
class WindowArrays:
    """Raw (unstandardized) model inputs for a list of windows."""

    ctx_tokens: np.ndarray
    boxes: np.ndarray
    fut_tokens: np.ndarray
    gt_R: np.ndarray
    gt_t: np.ndarray
    points: np.ndarray
    knn: np.ndarray
    centroid: np.ndarray
    clip_ids: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ctx_tokens)

    def take(self, idx) -> "WindowArrays":
        idx = np.asarray(idx)
        return WindowArrays(self.ctx_tokens[idx], self.boxes[idx], self.fut_tokens[idx], self.gt_R[idx],
                            self.gt_t[idx], self.points[idx], self.knn[idx], self.centroid[idx],
                            [self.clip_ids[i] for i in idx])


def resample_points(points: np.ndarray, n: int, seed: int, key: str) -> np.ndarray:
    """Exactly ``n`` points: a seeded subset, or all points plus seeded repeats."""
    m = len(points)
    if m == n:
        return points
    rng = generator(seed, "points", key)
    if m > n:
        idx = np.sort(rng.choice(m, size=n, replace=False))
    else:
        idx = np.concatenate([np.arange(m), np.sort(rng.choice(m, size=n - m, replace=True))])
    return points[idx]


def window_arrays(windows, cfg: ModelConfig, seed: int = 0) -> WindowArrays:
    windows = list(windows)
    pts = np.stack([resample_points(np.asarray(w.anchor_points, dtype=float), cfg.n_points, seed, w.clip_id)
                    for w in windows])
    return WindowArrays(
        ctx_tokens=np.stack([depth_normalize(w.context_poses) for w in windows]),
        boxes=np.stack([w.context_boxes for w in windows]).astype(float),
        fut_tokens=np.stack([depth_normalize(w.future_poses) for w in windows]),
        gt_R=np.stack([se3.rotation_of(w.future_poses) for w in windows]),
        gt_t=np.stack([se3.translation_of(w.future_poses) for w in windows]),
        points=pts,
        knn=np.stack([knn_indices(p[:, :3], cfg.knn_k) for p in pts]),
        centroid=np.stack([se3.translation_of(w.anchor_pose) for w in windows]),
        clip_ids=[w.clip_id for w in windows],
    )


def check_windows(windows, C: int, H: int) -> None:
    for w in windows:
        if w.C != C or w.H != H:
            raise DataMismatch(f"window {w.clip_id} has C={w.C}, H={w.H}; expected C={C}, H={H}")


class BatchStream:
    """Seeded epoch shuffling; ``batch(i)`` is the i-th batch of the stream."""

    def __init__(self, n: int, batch_size: int, seed: int):
        if n < 1:
            raise DataMismatch("training set is empty")
        self.n, self.batch_size, self.seed = n, batch_size, seed
        self._perms: dict[int, np.ndarray] = {}

    def _perm(self, epoch: int) -> np.ndarray:
        if epoch not in self._perms:
            self._perms = {epoch: generator(self.seed, "shuffle", epoch).permutation(self.n)}
        return self._perms[epoch]

    def batch(self, i: int) -> np.ndarray:
        pos = np.arange(i * self.batch_size, (i + 1) * self.batch_size)
        return np.array([self._perm(int(p // self.n))[p % self.n] for p in pos])


# --------------------------------------------------------------- optimizer

class Adam:
    def __init__(self, params: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params, self.lr, self.betas, self.eps = params, lr, betas, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1.0 - b1**self.t, 1.0 - b2**self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            upd = self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            p.data -= upd.astype(p.data.dtype)


def clip_gradients(grads: dict, max_norm: float) -> tuple[dict, float]:
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
    if norm > max_norm:
        s = max_norm / (norm + 1e-12)
        grads = {k: (g * s).astype(g.dtype) for k, g in grads.items()}
    return grads, norm


# ------------------------------------------------------------------ training

@dataclass
class TrainResult:
    model: ForecastNet
    stats: TokenStats
    curve: list

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "loss", *TERMS])
        for row in self.curve:
            w.writerow([row["step"], repr(row["loss"]), *(repr(row[k]) for k in TERMS)])
        return buf.getvalue()


def warmup_stats(data: WindowArrays, stream: BatchStream, k_warmup: int) -> TokenStats:
    """Freeze token statistics over the first ``k_warmup`` batches of the stream."""
    sc = TokenStandardizer(warmup_batches=k_warmup)
    for i in range(k_warmup):
        idx = stream.batch(i)
        sc.partial_fit(np.concatenate([data.ctx_tokens[idx].reshape(-1, 9), data.fut_tokens[idx].reshape(-1, 9)]))
    return sc.stats_


def train_step(model: ForecastNet, batch: WindowArrays, stats: TokenStats, schedule, t, eps,
               weights: LossWeights = LossWeights()):
    """Forward plus backward for one batch; returns ``(loss, terms, grads)``."""
    y0 = standardize(batch.fut_tokens, stats)
    y_t = q_sample(y0, t, eps, schedule)
    v_tgt = v_target(y0, eps, t, schedule)
    for p in model.params.values():
        p.zero_grad()
    cond = model.condition(standardize(batch.ctx_tokens, stats), batch.boxes, batch.points, batch.centroid, batch.knn)
    v_pred = model.dit_forward(y_t, t, cond)
    loss, terms = total_loss({"y_t": y_t, "v_tgt": v_tgt, "t": t, "gt_R": batch.gt_R, "gt_t": batch.gt_t},
                             v_pred, schedule, stats, weights)
    loss.backward()
    grads = {k: (np.zeros_like(p.data) if p.grad is None else p.grad) for k, p in model.params.items()}
    return float(loss.data), terms, grads


def train(windows, model_cfg: ModelConfig, train_cfg: TrainConfig, weights: LossWeights = LossWeights(),
          model: ForecastNet | None = None, progress=None) -> TrainResult:
    """Train a fresh (or given) model; a pure function of its inputs.

    ``progress(step, row)`` is called after each step if given.
    """
    windows = list(windows)
    check_windows(windows, train_cfg.C, train_cfg.H)
    if model_cfg.C != train_cfg.C or model_cfg.H != train_cfg.H:
        raise DataMismatch("model and training configs disagree on C/H")
    data = window_arrays(windows, model_cfg, train_cfg.seed)
    schedule = build_schedule(model_cfg.T, model_cfg.S)
    model = model or ForecastNet(model_cfg, seed=train_cfg.seed)
    stream = BatchStream(len(data), train_cfg.batch_size, train_cfg.seed)
    stats = warmup_stats(data, stream, train_cfg.K_warmup)
    opt = Adam(model.params, train_cfg.learning_rate, train_cfg.adam_betas, train_cfg.adam_eps)
    curve = []
    for step in range(train_cfg.steps):
        batch = data.take(stream.batch(step))
        rng = generator(train_cfg.seed, "step", step)
        t = rng.integers(0, schedule.T, size=len(batch))
        eps = rng.standard_normal(batch.fut_tokens.shape)
        loss, terms, grads = train_step(model, batch, stats, schedule, t, eps, weights)
        if not np.isfinite(loss) or not all(np.isfinite(v) for v in terms.values()):
            raise NumericFailure(f"non-finite loss at step {step}: total={loss}, terms={terms}")
        grads, norm = clip_gradients(grads, train_cfg.grad_clip_norm)
        if not np.isfinite(norm):
            raise NumericFailure(f"non-finite gradient norm at step {step}")
        opt.step(grads)
        row = {"step": step, "loss": loss, **terms}
        curve.append(row)
        if progress is not None:
            progress(step, row)
        if train_cfg.eval_every and (step + 1) % train_cfg.eval_every == 0:
            log.info("step %d loss %.6f", step + 1, loss)
    return TrainResult(model, stats, curve)


# ---------------------------------------------------------------- sampling

def sample_windows(model: ForecastNet, stats: TokenStats, windows, seed: int = 0, n_samples: int = 1,
                   batch_size: int = 64) -> np.ndarray:
    """DDIM forecasts ``(len(windows), n_samples, H, 4, 4)``.

    Draw ``j`` of a window starts from noise seeded by that window's
    ``(seed, clip_id)`` seed (refined by ``j`` for ``j > 0``), so results
    do not depend on batching beyond BLAS roundoff. Identical calls give
    identical bytes.
    """
    windows = list(windows)
    cfg = model.config
    schedule = build_schedule(cfg.T, cfg.S)
    H = windows[0].H if windows else cfg.H
    data = window_arrays(windows, cfg, seed)
    out = np.empty((len(windows), n_samples, H, 4, 4))
    for lo in range(0, len(windows), batch_size):
        part = data.take(np.arange(lo, min(lo + batch_size, len(windows))))
        cond = model.condition(standardize(part.ctx_tokens, stats), part.boxes, part.points, part.centroid, part.knn)
        for j in range(n_samples):
            init = []
            for cid in part.clip_ids:
                s = window_seed(seed, cid)
                if j > 0:
                    s = window_seed(s, f"draw-{j}")
                init.append(generator(s).standard_normal((H, 9)))
            y0 = ddim_sample(model.denoiser(cond), schedule, init=np.stack(init))
            out[lo:lo + len(part), j] = depth_denormalize(destandardize(y0, stats))
    return out


def evaluate_model(model: ForecastNet, stats: TokenStats, windows, seed: int = 0, samples: int = 1) -> MetricReport:
    windows = list(windows)
    preds = sample_windows(model, stats, windows, seed, samples)
    reports = []
    for w, p in zip(windows, preds):
        reps = [evaluate(p[j], w.future_poses) for j in range(samples)]
        reports.append(min(reps, key=lambda r: r.ade))
    return MetricReport.combine(reports)


# ---------------------------------------------------------------- ablation

ABLATION_METRICS = ("ade", "fde", "des", "are", "fre", "res")


def ablation_sweep(train_windows, eval_windows, C_list, H_list, model_cfg: ModelConfig,
                   train_cfg: TrainConfig, seed: int | None = None) -> tuple[list[str], list[list]]:
    """Train and evaluate one model per feasible (C, H) cell.

    Both window sets must be built with the largest C and H of the sweep
    (or larger). Context is trimmed to the last C frames; horizons are
    cropped to the first H steps. Each row reports metrics at the trained
    horizon plus ``ade@h`` for every ``h`` in ``H_list``, written ``-`` when
    ``h`` exceeds the trained horizon.
    """
    train_windows, eval_windows = list(train_windows), list(eval_windows)
    seed = train_cfg.seed if seed is None else seed
    max_C = min(min(w.C for w in train_windows), min(w.C for w in eval_windows))
    max_H = min(min(w.H for w in train_windows), min(w.H for w in eval_windows))
    H_cols = sorted(set(int(h) for h in H_list))
    header = ["C", "H", *ABLATION_METRICS, *(f"ade@{h}" for h in H_cols)]
    rows = []
    for C in C_list:
        for H in H_list:
            if C > max_C or H > max_H:
                continue
            tc = TrainConfig(**{**train_cfg.to_dict(), "C": C, "H": H})
            mc = ModelConfig.from_dict({**model_cfg.to_dict(), "C": C, "H": H})
            res = train([w.with_lengths(C, H) for w in train_windows], mc, tc)
            ev = [w.with_lengths(C, H) for w in eval_windows]
            preds = sample_windows(res.model, res.stats, ev, seed)[:, 0]
            rep = MetricReport.combine([evaluate(p, w.future_poses) for p, w in zip(preds, ev)])
            row = [C, H, *(getattr(rep, m) for m in ABLATION_METRICS)]
            for h in H_cols:
                if h > H:
                    row.append("-")
                else:
                    row.append(float(np.mean([evaluate(p[:h], w.future_poses[:h]).ade for p, w in zip(preds, ev)])))
            rows.append(row)
    return header, rows


def grid_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([x if isinstance(x, str) else repr(x) if isinstance(x, float) else x for x in r])
    return buf.getvalue()
