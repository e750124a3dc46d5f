"""Deterministic synthetic rigid-object clips.

Objects follow simple motion primitives in a world frame that coincides with
the first camera. An optional moving camera supplies per-frame extrinsics;
poses are reported in each frame's own camera, as a tracker would see them.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import se3
from .errors import BehindCamera, InvalidSpec, NonPositiveDepth
from .formats import write_windows
from .rng import generator
from .tokens import TrajectoryWindow, build_window

KINDS = ("static", "lift", "slide", "arc_rotate", "place", "pick_place")
RAMPS = ("constant_velocity", "cosine_ramp")
DEFAULT_INTRINSICS = (500.0, 500.0, 320.0, 240.0)
DEFAULT_IMAGE = (640, 480)


@dataclass(frozen=True)
class MotionPrimitive:
    """A parametric rigid motion.

    ``distance`` (m) and ``angle`` (rad) are totals reached after
    ``duration`` inter-frame steps starting at frame ``onset``. ``duration``
    of ``None`` means "until the last frame". ``direction`` overrides the
    default translation axis of lift (-y), slide (+x) and place (+y).
    """

    kind: str = "static"
    distance: float = 0.0
    angle: float = 0.0
    axis: tuple = (0.0, 1.0, 0.0)
    duration: int | None = None
    onset: int = 0
    ramp: str = "constant_velocity"
    direction: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidSpec(f"unknown primitive kind {self.kind!r}")
        if self.ramp not in RAMPS:
            raise InvalidSpec(f"unknown ramp {self.ramp!r}")
        if self.distance < 0:
            raise InvalidSpec("distance must be >= 0")
        if self.duration is not None and self.duration < 1:
            raise InvalidSpec("duration must be >= 1")
        if self.onset < 0:
            raise InvalidSpec("onset must be >= 0")
        if not np.linalg.norm(self.axis) > 0:
            raise InvalidSpec("rotation axis must be nonzero")
        if self.direction is not None and not np.linalg.norm(self.direction) > 0:
            raise InvalidSpec("direction must be nonzero")


@dataclass
class SceneSpec:
    object_extent: tuple = (0.1, 0.1, 0.1)
    object_start: np.ndarray = field(default_factory=lambda: se3.make_pose(np.eye(3), [0.0, 0.0, 1.0]))
    table_height: float | None = None
    table_extent: float = 0.5
    intrinsics: tuple = DEFAULT_INTRINSICS
    image_size: tuple = DEFAULT_IMAGE
    camera_motion: np.ndarray | None = None
    noise: tuple = (0.0, 0.0)

    def validate(self) -> "SceneSpec":
        start = np.asarray(self.object_start, dtype=float)
        if start.shape != (4, 4) or not start[2, 3] > 0:
            raise InvalidSpec("object_start must be a pose with z > 0")
        if min(self.intrinsics) <= 0 or min(self.image_size) <= 0:
            raise InvalidSpec("intrinsics and image size must be positive")
        if min(self.object_extent) < 0 or min(self.noise) < 0:
            raise InvalidSpec("extent and noise must be non-negative")
        return self

    @property
    def table_y(self) -> float:
        """World y of the table plane (defaults to the object's underside)."""
        if self.table_height is not None:
            return float(self.table_height)
        return float(self.object_start[1, 3] + self.object_extent[1] / 2)


def ramp_progress(tau, ramp: str = "constant_velocity") -> np.ndarray:
    """Fraction of the motion completed at normalized time ``tau``.

    The cosine ramp integrates a velocity proportional to ``(1 - cos 2 pi tau)/2``,
    so it starts and stops at rest.
    """
    tau = np.clip(np.asarray(tau, dtype=float), 0.0, 1.0)
    if ramp == "cosine_ramp":
        return tau - np.sin(2 * np.pi * tau) / (2 * np.pi)
    return tau


_DEFAULT_DIRS = {"lift": (0.0, -1.0, 0.0), "slide": (1.0, 0.0, 0.0), "place": (0.0, 1.0, 0.0),
                 "pick_place": (1.0, 0.0, 0.0), "arc_rotate": (-1.0, 0.0, 0.0)}


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def object_world_poses(primitive: MotionPrimitive, start, n_frames: int) -> np.ndarray:
    """Noise-free world poses of the object over ``n_frames`` frames."""
    start = np.asarray(start, dtype=float)
    duration = primitive.duration or max(n_frames - 1 - primitive.onset, 1)
    frames = np.arange(n_frames, dtype=float)
    p = ramp_progress((frames - primitive.onset) / duration, primitive.ramp)
    R0, t0 = start[:3, :3], start[:3, 3]
    d = _unit(primitive.direction if primitive.direction is not None else _DEFAULT_DIRS.get(primitive.kind, (1, 0, 0)))
    out = np.empty((n_frames, 4, 4))
    for k, pk in enumerate(p):
        R, t = R0, t0.copy()
        kind = primitive.kind
        if kind in ("lift", "slide", "place"):
            t = t0 + primitive.distance * pk * d
        elif kind == "arc_rotate":
            # rotate about an axis through a pivot offset from the object center
            Ra = se3.axis_angle_matrix(primitive.axis, primitive.angle * pk)
            pivot = t0 + primitive.distance * d
            R, t = Ra @ R0, pivot + Ra @ (t0 - pivot)
        elif kind == "pick_place":
            Ra = se3.axis_angle_matrix(primitive.axis, primitive.angle * pk)
            hop = 0.5 * primitive.distance * math.sin(math.pi * pk)
            R, t = Ra @ R0, t0 + primitive.distance * pk * d + hop * np.array([0.0, -1.0, 0.0])
        out[k] = se3.make_pose(R, t)
    return out


def camera_random_walk(rng: np.random.Generator, n_frames: int, trans_std: float, rot_std: float) -> np.ndarray:
    """Camera-to-world extrinsics from a small random walk starting at identity."""
    out = np.empty((n_frames, 4, 4))
    out[0] = np.eye(4)
    for k in range(1, n_frames):
        w = rng.normal(0.0, rot_std, 3) if rot_std > 0 else np.zeros(3)
        ang = np.linalg.norm(w)
        dR = se3.axis_angle_matrix(w, ang) if ang > 0 else np.eye(3)
        dt = rng.normal(0.0, trans_std, 3) if trans_std > 0 else np.zeros(3)
        out[k] = out[k - 1] @ se3.make_pose(dR, dt)
    return out


def _jitter(pose, seed: int, frame: int, noise) -> np.ndarray:
    trans_std, rot_std = noise
    if trans_std == 0 and rot_std == 0:
        return pose
    rng = generator(seed, "jitter", frame)
    w = rng.normal(0.0, rot_std, 3)
    dt = rng.normal(0.0, trans_std, 3)
    ang = np.linalg.norm(w)
    dR = se3.axis_angle_matrix(w, ang) if ang > 0 else np.eye(3)
    return se3.make_pose(dR @ pose[:3, :3], pose[:3, 3] + dt)


def generate_trajectory(primitive: MotionPrimitive, scene: SceneSpec, C: int = 3, H: int = 8,
                        fps: float = 6.0, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame camera-coordinate object poses and camera extrinsics.

    Returns ``(poses_in_cam, cam_to_world)``, both ``(C+H, 4, 4)``. ``fps``
    only labels the clip; primitives are parameterized in frames.
    """
    scene.validate()
    if C < 1 or H < 1 or not fps > 0:
        raise InvalidSpec("need C >= 1, H >= 1 and fps > 0")
    n = C + H
    world = object_world_poses(primitive, scene.object_start, n)
    world = np.stack([_jitter(world[k], seed, k, scene.noise) for k in range(n)])
    if scene.camera_motion is None:
        extr = se3.identity_pose(n)
    else:
        extr = np.asarray(scene.camera_motion, dtype=float)
        if extr.shape != (n, 4, 4):
            raise InvalidSpec(f"camera_motion must be ({n}, 4, 4)")
    return se3.invert_pose(extr) @ world, extr


def box_corners(extent) -> np.ndarray:
    half = np.asarray(extent, dtype=float) / 2
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
    return signs * half


def project_box(pose, object_extent, intrinsics=DEFAULT_INTRINSICS, image_size=DEFAULT_IMAGE) -> np.ndarray:
    """Normalized ``[cx, cy, w, h]`` of the projected 3D bounding box."""
    pose = np.asarray(pose, dtype=float)
    pts = box_corners(object_extent) @ pose[:3, :3].T + pose[:3, 3]
    if np.any(~(pts[:, 2] > 0)):
        raise BehindCamera("bounding box corner at or behind the camera plane")
    fx, fy, cx, cy = intrinsics
    W, H = image_size
    u = np.clip(fx * pts[:, 0] / pts[:, 2] + cx, 0.0, W) / W
    v = np.clip(fy * pts[:, 1] / pts[:, 2] + cy, 0.0, H) / H
    return np.array([(u.min() + u.max()) / 2, (v.min() + v.max()) / 2, u.max() - u.min(), v.max() - v.min()])


def sample_pointcloud(scene: SceneSpec, anchor_pose, N: int, seed: int = 0, anchor_cam_to_world=None) -> np.ndarray:
    """Anchor-frame cloud: camera xyz then object-frame xyz per point.

    About 60% of points lie on the object's box faces and the rest on the
    table plane (a horizontal world plane around the object's start).
    """
    if N < 1:
        raise InvalidSpec("need at least one point")
    rng = generator(seed, "cloud")
    anchor_pose = np.asarray(anchor_pose, dtype=float)
    n_obj = int(round(0.6 * N))
    half = np.asarray(scene.object_extent, dtype=float) / 2
    # face areas: pair of faces normal to axis i has area 4 * prod(half of the other two)
    areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]])
    probs = areas / areas.sum() if areas.sum() > 0 else np.full(3, 1 / 3)
    axis = rng.choice(3, size=n_obj, p=probs)
    obj = rng.uniform(-1.0, 1.0, (n_obj, 3)) * half
    side = np.where(rng.random(n_obj) < 0.5, -1.0, 1.0)
    obj[np.arange(n_obj), axis] = side * half[axis]
    cam_obj = obj @ anchor_pose[:3, :3].T + anchor_pose[:3, 3]

    n_tab = N - n_obj
    start = np.asarray(scene.object_start, dtype=float)[:3, 3]
    tab_world = np.column_stack([
        start[0] + rng.uniform(-scene.table_extent, scene.table_extent, n_tab),
        np.full(n_tab, scene.table_y),
        start[2] + rng.uniform(-scene.table_extent, scene.table_extent, n_tab),
    ])
    to_cam = se3.invert_pose(np.eye(4) if anchor_cam_to_world is None else anchor_cam_to_world)
    cam_tab = tab_world @ to_cam[:3, :3].T + to_cam[:3, 3]
    inv_anchor = se3.invert_pose(anchor_pose)
    obj_tab = cam_tab @ inv_anchor[:3, :3].T + inv_anchor[:3, 3]
    return np.concatenate([np.hstack([cam_obj, obj]), np.hstack([cam_tab, obj_tab])], axis=0)


# ------------------------------------------------------------------- datasets

@dataclass
class DatasetConfig:
    """Dataset recipe; ``primitives`` entries give a kind, a weight and
    ``[lo, hi]`` ranges for ``distance`` and ``angle``."""

    count: int = 100
    C: int = 3
    H: int = 8
    fps: float = 6.0
    n_points: int = 256
    mode: str = "mixture"
    primitives: list = field(default_factory=lambda: [
        {"kind": "static", "weight": 1.0},
        {"kind": "lift", "weight": 1.0, "distance": [0.05, 0.3]},
        {"kind": "slide", "weight": 1.0, "distance": [0.05, 0.3], "direction": "random_xz"},
        {"kind": "arc_rotate", "weight": 1.0, "distance": [0.0, 0.1], "angle": [0.3, 1.2], "axis": "random"},
        {"kind": "place", "weight": 1.0, "distance": [0.05, 0.2], "ramp": "cosine_ramp"},
        {"kind": "pick_place", "weight": 1.0, "distance": [0.1, 0.3], "angle": [0.0, 0.8], "ramp": "cosine_ramp"},
    ])
    extent: list = field(default_factory=lambda: [0.05, 0.15])
    depth: list = field(default_factory=lambda: [0.7, 1.2])
    lateral: float = 0.15
    noise: list = field(default_factory=lambda: [0.0, 0.0])
    camera_motion: list = field(default_factory=lambda: [0.0, 0.0])
    bimodal_distance: float = 0.2

    def validate(self) -> "DatasetConfig":
        if self.count < 0 or self.C < 1 or self.H < 1 or self.n_points < 1 or not self.fps > 0:
            raise InvalidSpec("count >= 0, C >= 1, H >= 1, n_points >= 1 and fps > 0 required")
        if self.mode not in ("mixture", "bimodal"):
            raise InvalidSpec(f"unknown dataset mode {self.mode!r}")
        if self.mode == "mixture" and not self.primitives:
            raise InvalidSpec("mixture mode needs at least one primitive")
        for p in self.primitives:
            if p.get("kind") not in KINDS or p.get("weight", 1.0) < 0:
                raise InvalidSpec(f"bad primitive entry {p!r}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec(f"unknown dataset config keys: {sorted(unknown)}")
        return cls(**d).validate()

    @classmethod
    def load(cls, path) -> "DatasetConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _range(rng, spec, default=0.0) -> float:
    if spec is None:
        return default
    if isinstance(spec, (int, float)):
        return float(spec)
    lo, hi = spec
    return float(rng.uniform(lo, hi))


def _sample_primitive(rng, entry: dict, n_frames: int) -> MotionPrimitive:
    direction = entry.get("direction")
    if direction == "random_xz":
        phi = rng.uniform(0, 2 * np.pi)
        direction = (math.cos(phi), 0.0, math.sin(phi))
    axis = entry.get("axis", (0.0, 1.0, 0.0))
    if axis == "random":
        axis = tuple(_unit(rng.standard_normal(3)))
    return MotionPrimitive(
        kind=entry["kind"],
        distance=_range(rng, entry.get("distance")),
        angle=_range(rng, entry.get("angle")),
        axis=tuple(axis),
        duration=entry.get("duration"),
        onset=int(entry.get("onset", 0)),
        ramp=entry.get("ramp", "constant_velocity"),
        direction=None if direction is None else tuple(direction),
    )


def _sample_scene(rng, cfg: DatasetConfig) -> SceneSpec:
    extent = tuple(float(x) for x in rng.uniform(cfg.extent[0], cfg.extent[1], 3))
    z = rng.uniform(cfg.depth[0], cfg.depth[1])
    x, y = rng.uniform(-cfg.lateral, cfg.lateral, 2)
    R = se3.random_rotations(rng, 1)[0]
    return SceneSpec(object_extent=extent, object_start=se3.make_pose(R, [x, y, z]), noise=tuple(cfg.noise))


def _assemble(cfg: DatasetConfig, scene: SceneSpec, primitive: MotionPrimitive, seed: int,
              clip_id: str, label: str | None) -> TrajectoryWindow:
    poses, extr = generate_trajectory(primitive, scene, cfg.C, cfg.H, cfg.fps, seed)
    boxes = np.stack([project_box(poses[k], scene.object_extent, scene.intrinsics, scene.image_size)
                      for k in range(cfg.C)])
    anchor = cfg.C - 1
    # anchor pose in the anchor camera is just the per-frame pose at that frame
    cloud = sample_pointcloud(scene, poses[anchor], cfg.n_points, seed, extr[anchor])
    window = build_window(poses, extr, boxes, cloud, cfg.C, cfg.H, clip_id, cfg.fps, scene.intrinsics, label)
    return window.validate()


def make_window(cfg: DatasetConfig, seed: int, index: int) -> TrajectoryWindow:
    """The ``index``-th window of the dataset defined by ``(cfg, seed)``."""
    n = cfg.C + cfg.H
    if cfg.mode == "bimodal":
        # consecutive pairs share everything up to the anchor frame
        pair = index // 2
        rng = generator(seed, "pair", pair)
        for attempt in range(100):
            scene = _sample_scene(generator(seed, "pair", pair, attempt), cfg)
            kind = "lift" if index % 2 == 0 else "slide"
            prim = MotionPrimitive(kind=kind, distance=cfg.bimodal_distance, onset=cfg.C - 1,
                                   duration=cfg.H, ramp="cosine_ramp")
            try:
                return _assemble(cfg, scene, prim, _word_seed(rng), f"bim-{index:06d}", kind)
            except (BehindCamera, NonPositiveDepth):
                continue
        raise InvalidSpec(f"could not place bimodal pair {pair} in view")
    weights = np.array([p.get("weight", 1.0) for p in cfg.primitives], dtype=float)
    if not weights.sum() > 0:
        raise InvalidSpec("primitive weights sum to zero")
    for attempt in range(100):
        rng = generator(seed, "window", index, attempt)
        entry = cfg.primitives[int(rng.choice(len(weights), p=weights / weights.sum()))]
        prim = _sample_primitive(rng, entry, n)
        scene = _sample_scene(rng, cfg)
        if max(cfg.camera_motion) > 0:
            scene.camera_motion = camera_random_walk(rng, n, *cfg.camera_motion)
        try:
            return _assemble(cfg, scene, prim, _word_seed(rng), f"syn-{index:06d}", prim.kind)
        except (BehindCamera, NonPositiveDepth):
            continue
    raise InvalidSpec(f"could not place window {index} in view")


def _word_seed(rng) -> int:
    return int(rng.integers(0, 2**63 - 1))


def _make_window_args(args):
    return make_window(*args)


def generate_windows(cfg: DatasetConfig, seed: int = 0, jobs: int = 1) -> list[TrajectoryWindow]:
    cfg.validate()
    args = [(cfg, seed, i) for i in range(cfg.count)]
    if jobs > 1 and cfg.count > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_make_window_args, args, chunksize=max(1, cfg.count // (4 * jobs))))
    return [make_window(*a) for a in args]


def generate_dataset(cfg: DatasetConfig, seed: int, out_dir, jobs: int = 1, name: str = "windows") -> Path:
    """Write ``<name>.jsonl``, ``<name>.ofpc`` and ``meta.json`` to ``out_dir``.

    Output bytes depend only on ``(cfg, seed)``.
    """
    out_dir = Path(out_dir)
    windows = generate_windows(cfg, seed, jobs)
    jsonl = out_dir / f"{name}.jsonl"
    try:
        write_windows(jsonl, windows)
        labels: dict = {}
        for w in windows:
            labels[w.label] = labels.get(w.label, 0) + 1
        meta = {"seed": int(seed), "count": len(windows), "labels": dict(sorted(labels.items())),
                "config": cfg.to_dict()}
        (out_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"failed writing dataset to {out_dir}: {exc}") from exc
    return jsonl


# ------------------------------------------------------------ detection streams

def box_mask(box, shape=(24, 32)) -> np.ndarray:
    """Rasterize a normalized ``[cx, cy, w, h]`` box onto an ``(h, w)`` grid."""
    h, w = shape
    cx, cy, bw, bh = box
    x0, x1 = int(np.floor((cx - bw / 2) * w)), int(np.ceil((cx + bw / 2) * w))
    y0, y1 = int(np.floor((cy - bh / 2) * h)), int(np.ceil((cy + bh / 2) * h))
    m = np.zeros(shape, dtype=bool)
    m[max(y0, 0):max(min(y1, h), 0), max(x0, 0):max(min(x1, w), 0)] = True
    return m


def generate_stream(n_clips: int, seed: int = 0, frames=(12, 30), fps: float = 6.0,
                    dip_prob: float = 0.05, drop_prob: float = 0.05, grid=(24, 32),
                    n_points: int = 0, points_path=None) -> list[dict]:
    """Frame records of a synthetic detection/pose stream.

    Each clip holds one moving object whose projection IoU sits near 0.9,
    with occasional collapses below the re-registration threshold
    (``dip_prob``) and occasional sudden drops (``drop_prob``). When
    ``n_points`` > 0 and ``points_path`` is given, an anchor cloud per frame
    is appended to that OFPC file and referenced from the records.
    """
    from .curation import rle_encode
    from .formats import encode_ofpc

    records = []
    offset = 0
    fh = open(points_path, "wb") if (n_points > 0 and points_path is not None) else None
    try:
        for c in range(n_clips):
            rng = generator(seed, "stream", c)
            n = int(rng.integers(frames[0], frames[1] + 1))
            entry = {"kind": str(rng.choice(["lift", "slide", "static", "arc_rotate"])),
                     "distance": [0.05, 0.25], "angle": [0.2, 0.8], "direction": "random_xz", "axis": "random"}
            prim = _sample_primitive(rng, entry, n)
            scene = _sample_scene(rng, DatasetConfig())
            world = object_world_poses(prim, scene.object_start, n)
            mesh_radius = float(np.linalg.norm(scene.object_extent) / 2)
            ious = np.clip(0.9 + rng.normal(0.0, 0.01, n), 0.0, 1.0)
            for k in range(n):
                u = rng.random()
                if u < dip_prob:
                    ious[k] = rng.uniform(0.0, 0.09)
                elif u < dip_prob + drop_prob:
                    ious[k] = rng.uniform(0.5, 0.75)
            clip_id = f"clip-{c:04d}"
            for k in range(n):
                pose = world[k]
                box = project_box(pose, scene.object_extent, scene.intrinsics, scene.image_size)
                rec = {
                    "clip_id": clip_id, "frame": k, "fps": float(fps), "hand": True, "object": True,
                    "intrinsics": list(scene.intrinsics),
                    "extrinsics": [float(x) for x in se3.pose_to_vec9(np.eye(4))],
                    "mesh_radius": mesh_radius,
                    "components": [{
                        "mask": rle_encode(box_mask(box, grid)),
                        "iou": float(ious[k]),
                        "pose": [float(x) for x in se3.pose_to_vec9(pose)],
                        "radius": float(mesh_radius * (1.0 + rng.normal(0.0, 0.02))),
                        "inliers": float(rng.integers(50, 500)),
                    }],
                }
                if fh is not None:
                    block = encode_ofpc(sample_pointcloud(scene, pose, n_points, seed=_word_seed(rng)))
                    fh.write(block)
                    rec["points_file"] = Path(points_path).name
                    rec["points_offset"] = offset
                    offset += len(block)
                records.append(rec)
    finally:
        if fh is not None:
            fh.close()
    return records
