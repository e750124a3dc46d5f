"""The forecasting network: context encoder, point-set scene encoder, AdaLN-Zero DiT.

All forward functions are batched over a leading axis and built from
:mod:`posecast.autograd` operations, so the same code path serves
inference (numpy in, numpy out) and training (gradients w.r.t. ``params``).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import autograd as ag
from .autograd import Tensor
from .errors import InvalidSpec, ShapeMismatch
from .rng import generator
from .tokens import BOX_DIM, TOKEN_DIM

D_GEOM = 512
POINT_DIM = 6


@dataclass
class ModelConfig:
    C: int = 3
    H: int = 8
    d_ctx: int = 256
    width: int = 128
    depth: int = 2
    n_heads: int | None = None
    ctx_heads: int = 4
    d_geom: int = D_GEOM
    n_points: int = 512
    knn_k: int = 16
    pool_tau: float = 0.2
    point_widths: tuple = (64, 64, 64)
    t_embed_dim: int = 128
    signed_time_dim: int = 32
    mlp_ratio: int = 4
    T: int = 1000
    S: int = 50

    def __post_init__(self):
        self.point_widths = tuple(int(w) for w in self.point_widths)
        if self.n_heads is None:
            self.n_heads = max(1, self.width // 32)
        if self.width % self.n_heads or self.d_ctx % self.ctx_heads:
            raise InvalidSpec("widths must be divisible by their head counts")
        if self.d_geom != D_GEOM:
            raise InvalidSpec(f"scene embedding width is fixed at {D_GEOM}")
        if len(self.point_widths) != 3:
            raise InvalidSpec("point_widths lists the input stage and two aggregation stages")
        if min(self.C, self.H, self.n_points, self.knn_k) < 1 or self.pool_tau <= 0:
            raise InvalidSpec("counts must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["point_widths"] = list(self.point_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: (tuple(v) if k == "point_widths" else v) for k, v in d.items()})


#: Parameters whose initial value is exactly zero (AdaLN-Zero).
def _zero_init(name: str) -> bool:
    return ".ada." in name or name.startswith("dit.final.")


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    Dc, W, P = cfg.d_ctx, cfg.width, cfg.point_widths
    s = {
        "ctx.in.w": (TOKEN_DIM + BOX_DIM, Dc), "ctx.in.b": (Dc,),
        "ctx.time_scale": (),
    }
    for n in ("q", "k", "v", "o"):
        s[f"ctx.{n}.w"], s[f"ctx.{n}.b"] = (Dc, Dc), (Dc,)
    s["pts.in.w"], s["pts.in.b"] = (POINT_DIM, P[0]), (P[0],)
    for i in (1, 2):
        s[f"pts.s{i}.w"], s[f"pts.s{i}.b"] = (2 * P[i - 1], P[i]), (P[i],)
        s[f"pts.s{i}.film.w"], s[f"pts.s{i}.film.b"] = (Dc, 2 * P[i]), (2 * P[i],)
    s["pts.pool_q.w"], s["pts.pool_q.b"] = (Dc, P[2]), (P[2],)
    s["pts.out.w"], s["pts.out.b"] = (P[2], cfg.d_geom), (cfg.d_geom,)
    s["dit.embed.w"], s["dit.embed.b"] = (TOKEN_DIM, W), (W,)
    s["dit.pos"] = (cfg.C + cfg.H, W)
    s["dit.type"] = (2, W)
    s["dit.stime.w"], s["dit.stime.b"] = (cfg.signed_time_dim, W), (W,)
    s["dit.cond.w1"], s["dit.cond.b1"] = (cfg.t_embed_dim + cfg.d_geom, W), (W,)
    s["dit.cond.w2"], s["dit.cond.b2"] = (W, W), (W,)
    for l in range(cfg.depth):
        p = f"dit.blk{l}"
        s[f"{p}.ada.w"], s[f"{p}.ada.b"] = (W, 6 * W), (6 * W,)
        s[f"{p}.qkv.w"], s[f"{p}.qkv.b"] = (W, 3 * W), (3 * W,)
        s[f"{p}.proj.w"], s[f"{p}.proj.b"] = (W, W), (W,)
        s[f"{p}.fc1.w"], s[f"{p}.fc1.b"] = (W, cfg.mlp_ratio * W), (cfg.mlp_ratio * W,)
        s[f"{p}.fc2.w"], s[f"{p}.fc2.b"] = (cfg.mlp_ratio * W, W), (W,)
    s["dit.final.ada.w"], s["dit.final.ada.b"] = (W, 2 * W), (2 * W,)
    s["dit.final.out.w"], s["dit.final.out.b"] = (W, TOKEN_DIM), (TOKEN_DIM,)
    return s


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> dict[str, Tensor]:
    """Seeded initialization.

    Weight matrices: U(-1/sqrt(fan_in), 1/sqrt(fan_in)). Biases: 0. Learned
    position and token-type tables: N(0, 0.02^2). Relative-time scale: 1.
    AdaLN modulation layers and the output head: exactly 0.
    """
    params = {}
    for name, shape in param_shapes(cfg).items():
        rng = generator(seed, "init", name)
        if _zero_init(name) or (name.endswith(".b") or name.endswith(".b1") or name.endswith(".b2")):
            arr = np.zeros(shape)
        elif name == "ctx.time_scale":
            arr = np.ones(shape)
        elif name in ("dit.pos", "dit.type"):
            arr = 0.02 * rng.standard_normal(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            arr = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True)
    return params


def sinusoid(x, dim: int) -> np.ndarray:
    """``[sin(x f_i), cos(x f_i)]`` with geometric frequencies ``f_i = 10000^(-i/(dim/2))``."""
    x = np.asarray(x, dtype=float)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = x[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


def knn_indices(xyz: np.ndarray, k: int) -> np.ndarray:
    """(N, k) indices of each point's k nearest neighbours (itself included)."""
    n = len(xyz)
    k = min(k, n)
    _, idx = cKDTree(xyz).query(xyz, k=k)
    return np.asarray(idx, dtype=np.int64).reshape(n, k)


@dataclass
class Conditioning:
    """Everything the denoiser is conditioned on, batched on axis 0."""

    ctx: Tensor
    z_geom: Tensor
    context_tokens: Tensor
    boxes: Tensor
    pool_weights: np.ndarray | None = field(default=None, repr=False)


def _heads(x: Tensor, n: int) -> Tensor:
    B, L, D = x.shape
    return ag.transpose(x.reshape(B, L, n, D // n), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    B, h, L, d = x.shape
    return ag.transpose(x, (0, 2, 1, 3)).reshape(B, L, h * d)


def _attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    scores = (q @ ag.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(q.shape[-1]))
    return ag.softmax(scores, axis=-1) @ v


class ForecastNet:
    """Parameter container plus the three forward stages."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None, seed: int = 0,
                 dtype=np.float32):
        self.config = config
        self.params = params if params is not None else init_params(config, seed, dtype)
        expected = param_shapes(config)
        if set(self.params) != set(expected):
            raise ShapeMismatch("parameter names do not match the configuration")
        for name, shape in expected.items():
            if self.params[name].shape != tuple(shape):
                raise ShapeMismatch(f"{name}: expected {shape}, got {self.params[name].shape}")

    @property
    def dtype(self):
        return self.params["ctx.in.w"].dtype

    def _const(self, x) -> Tensor:
        return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))

    def _lin(self, x, prefix: str) -> Tensor:
        p = self.params
        return ag.linear(x, p[prefix + ".w"], p[prefix + ".b"])

    def encode_context(self, context_tokens, boxes) -> Tensor:
        """Anchor-query attention over the C conditioning frames -> (B, d_ctx)."""
        cfg, p = self.config, self.params
        tokens = self._const(context_tokens)
        boxes = self._const(boxes)
        if tokens.ndim != 3 or tokens.shape[-1] != TOKEN_DIM or boxes.shape != tokens.shape[:2] + (BOX_DIM,):
            raise ShapeMismatch(f"context tokens {tokens.shape} / boxes {boxes.shape}")
        C = tokens.shape[1]
        e = self._lin(ag.concat([tokens, boxes], axis=-1), "ctx.in")
        rel = sinusoid(np.arange(1, C + 1) - C, cfg.d_ctx).astype(self.dtype)
        e = e + p["ctx.time_scale"] * rel
        anchor = e[:, C - 1 : C, :]
        q = _heads(self._lin(anchor, "ctx.q"), cfg.ctx_heads)
        k = _heads(self._lin(e, "ctx.k"), cfg.ctx_heads)
        v = _heads(self._lin(e, "ctx.v"), cfg.ctx_heads)
        attended = self._lin(_merge_heads(_attention(q, k, v)), "ctx.o")
        return (anchor + attended)[:, 0, :]

    def encode_scene(self, points, ctx: Tensor, centroid, knn=None) -> tuple[Tensor, np.ndarray]:
        """FiLM-conditioned point encoder with object-biased attention pooling.

        Returns the (B, 512) scene embedding and the (B, N) pooling weights.
        """
        cfg, p = self.config, self.params
        pts = np.asarray(points.data if isinstance(points, Tensor) else points, dtype=float)
        if pts.ndim != 3 or pts.shape[-1] != POINT_DIM or pts.shape[1] < 1:
            raise ShapeMismatch(f"points must be (B, N>=1, 6), got {pts.shape}")
        B, N, _ = pts.shape
        if knn is None:
            knn = np.stack([knn_indices(c[:, :3], cfg.knn_k) for c in pts])
        h = ag.gelu(self._lin(self._const(pts), "pts.in"))
        for i in (1, 2):
            agg = ag.knn_max(h, knn)
            g = ag.gelu(self._lin(ag.concat([h, agg], axis=-1), f"pts.s{i}"))
            film = self._lin(ctx, f"pts.s{i}.film")
            width = cfg.point_widths[i]
            gamma = film[:, None, :width]
            beta = film[:, None, width:]
            h = g * (gamma + 1.0) + beta
        width = cfg.point_widths[2]
        q = self._lin(ctx, "pts.pool_q")
        dist = np.linalg.norm(pts[:, :, :3] - np.asarray(centroid, dtype=float)[:, None, :], axis=-1)
        bias = (-dist / cfg.pool_tau).astype(self.dtype)
        logits = (h @ q[:, :, None])[:, :, 0] * (1.0 / np.sqrt(width)) + bias
        w = ag.softmax(logits, axis=1)
        pooled = (w[:, None, :] @ h)[:, 0, :]
        return self._lin(pooled, "pts.out"), w.data

    def condition(self, context_tokens, boxes, points, centroid, knn=None) -> Conditioning:
        ctx = self.encode_context(context_tokens, boxes)
        z, weights = self.encode_scene(points, ctx, centroid, knn)
        return Conditioning(ctx, z, self._const(context_tokens), self._const(boxes), weights)

    def dit_forward(self, y_t, t, cond: Conditioning, return_blocks: bool = False):
        """Predict v for the H future tokens; the C context tokens form a prefix."""
        cfg, p = self.config, self.params
        y = self._const(y_t)
        ctx_tok = cond.context_tokens
        B, C = ctx_tok.shape[0], ctx_tok.shape[1]
        if y.ndim != 3 or y.shape[0] != B or y.shape[-1] != TOKEN_DIM:
            raise ShapeMismatch(f"noised tokens {y.shape} vs context batch {B}")
        H = y.shape[1]
        if C + H > p["dit.pos"].shape[0]:
            raise ShapeMismatch(f"sequence C+H={C + H} exceeds configured {p['dit.pos'].shape[0]}")
        t = np.broadcast_to(np.asarray(t), (B,))
        x = self._lin(ag.concat([ctx_tok, y], axis=1), "dit.embed")
        x = x + p["dit.pos"][: C + H]
        type_ids = np.array([0] * C + [1] * H)
        x = x + p["dit.type"][type_ids]
        offsets = np.arange(1, C + H + 1) - C
        x = x + self._lin(self._const(sinusoid(offsets, cfg.signed_time_dim)), "dit.stime")
        temb = self._const(sinusoid(t.astype(float), cfg.t_embed_dim))
        c = ag.linear(ag.concat([temb, cond.z_geom], axis=-1), p["dit.cond.w1"], p["dit.cond.b1"])
        c = ag.linear(ag.gelu(c), p["dit.cond.w2"], p["dit.cond.b2"])
        c_act = ag.gelu(c)
        W = cfg.width
        blocks = []
        for l in range(cfg.depth):
            pre = f"dit.blk{l}"
            mod = self._lin(c_act, f"{pre}.ada")[:, None, :]
            shift1, scale1, gate1 = mod[:, :, 0:W], mod[:, :, W : 2 * W], mod[:, :, 2 * W : 3 * W]
            shift2, scale2, gate2 = mod[:, :, 3 * W : 4 * W], mod[:, :, 4 * W : 5 * W], mod[:, :, 5 * W :]
            h = ag.layer_norm(x) * (scale1 + 1.0) + shift1
            qkv = self._lin(h, f"{pre}.qkv")
            q, k, v = (_heads(qkv[:, :, i * W : (i + 1) * W], cfg.n_heads) for i in range(3))
            x = x + gate1 * self._lin(_merge_heads(_attention(q, k, v)), f"{pre}.proj")
            h = ag.layer_norm(x) * (scale2 + 1.0) + shift2
            x = x + gate2 * self._lin(ag.gelu(self._lin(h, f"{pre}.fc1")), f"{pre}.fc2")
            if return_blocks:
                blocks.append(x)
        mod = self._lin(c_act, "dit.final.ada")[:, None, :]
        h = ag.layer_norm(x) * (mod[:, :, W:] + 1.0) + mod[:, :, :W]
        out = self._lin(h, "dit.final.out")[:, C:, :]
        return (out, blocks) if return_blocks else out

    def denoiser(self, cond: Conditioning):
        """Adapter for :func:`posecast.schedule.ddim_sample` (numpy in/out, float64)."""

        def fn(y, t, _cond=None):
            return self.dit_forward(y, t, cond).data.astype(float)

        return fn

    def n_parameters(self) -> int:
        return int(sum(t.data.size for t in self.params.values()))


def gradient_check(params: dict[str, Tensor], loss_fn, n_probes: int = 200, h: float = 1e-5,
                   seed: int = 0, floor: float = 1e-8, noise_floor: float = 1e-5, kink_tol: float = 1e-5,
                   max_redraws: int = 5) -> dict:
    """Compare analytic gradients with central differences on sampled scalars.

    ``loss_fn()`` must rebuild the graph from ``params`` and return a scalar
    Tensor. Parameters must be float64. Probes cycle through every array (in
    name order) and pick a random entry of each, so every trainable array is
    covered once ``n_probes >= len(params)``.

    The relative error of a probe is
    ``|a - n| / max(|a|, |n|, floor, noise_floor * max(1, |L|))``. The
    loss-scaled ``noise_floor`` keeps gradients below what a
    double-precision central difference can resolve (roundoff grows like
    ``eps * |L| / h``) from turning pure noise into large relative errors;
    ``n_floored`` counts the probes it affected. ``noise_floor=0`` gives the
    plain ``max(|a|, |n|, 1e-8)`` denominator.

    Each probe is also differenced at ``h/2``. If the two estimates disagree
    by more than ``kink_tol`` (relative) the stencil straddles a point where
    the loss is not differentiable (a max or relu switching branch) and the
    entry is redrawn, up to ``max_redraws`` times; ``n_kinks`` counts
    redraws. A wrong analytic gradient cannot pass this way, because the
    two differences agree with each other and not with it.

    Returns a dict with ``max_rel_error``, ``n_floored``, ``n_kinks``, the
    loss value and the per-probe records.
    """
    for name, t in params.items():
        if t.dtype != np.float64:
            raise TypeError(f"gradient check needs float64 parameters ({name} is {t.dtype})")
    for t in params.values():
        t.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {k: (np.zeros_like(t.data) if t.grad is None else np.array(t.grad)) for k, t in params.items()}
    names = sorted(params)
    scale = max(floor, noise_floor * max(1.0, abs(float(loss.data))))
    n_floored = 0
    rng = generator(seed, "gradcheck")
    probes = []
    worst = 0.0
    n_kinks = 0

    def central(arr, idx, step):
        orig = arr[idx]
        arr[idx] = orig + step
        up = float(loss_fn().data)
        arr[idx] = orig - step
        down = float(loss_fn().data)
        arr[idx] = orig
        return (up - down) / (2 * step)

    for i in range(n_probes):
        name = names[i % len(names)]
        arr = params[name].data
        for _ in range(max_redraws + 1):
            idx = np.unravel_index(int(rng.integers(arr.size)), arr.shape)
            numeric = central(arr, idx, h)
            # disagreeing step sizes mean the stencil straddles a max/relu kink
            if abs(numeric - central(arr, idx, h / 2)) <= kink_tol * max(abs(numeric), scale):
                break
            n_kinks += 1
        a = float(analytic[name][idx])
        denom = max(abs(a), abs(numeric))
        if denom < scale:
            n_floored += 1
        rel = abs(a - numeric) / max(denom, scale)
        worst = max(worst, rel)
        probes.append({"name": name, "index": tuple(int(j) for j in idx), "analytic": a, "numeric": numeric, "rel": rel})
    return {"max_rel_error": worst, "n_floored": n_floored, "n_kinks": n_kinks, "probes": probes, "loss": float(loss.data)}
