"""Trajectory curation over abstract detection / mask / pose streams.

The pipeline works per clip: presence smoothing selects clips, components
are linked into tracks by greedy IoU matching, a metric scale is fixed per
track, tracks are split into registration segments wherever the projection
IoU collapses, and sliding windows are cut inside clean segments. Every
stage is counted in :class:`FunnelStats`.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import se3
from .errors import AlreadyLocked, DimensionMismatch, FormatError, NoValidFrames, NonPositiveDepth
from .formats import read_ofpc
from .tokens import TrajectoryWindow, build_window

REREG_IOU = 0.1
MAX_IOU_DROP = 0.1


# ------------------------------------------------------------------ signals

@dataclass
class BinarySignal:
    values: np.ndarray
    fps: float = 6.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=bool).ravel()
        if self.values.size == 0:
            raise ValueError("binary signal must be nonempty")


def _runs(values: np.ndarray, target: bool) -> list[tuple[int, int]]:
    """``(start, length)`` of maximal runs equal to ``target``."""
    out, start = [], None
    for i, v in enumerate(values):
        if v == target and start is None:
            start = i
        elif v != target and start is not None:
            out.append((start, i - start))
            start = None
    if start is not None:
        out.append((start, len(values) - start))
    return out


def smoothing_length(clip_frames: int) -> int:
    return max(1, int(round(0.05 * clip_frames)))


def run_length_smooth(signal, clip_frames: int | None = None, m: int | None = None) -> BinarySignal:
    """Fill false gaps shorter than ``m``, then drop true runs shorter than ``m``.

    ``m`` defaults to 5% of the clip length (at least 1). Gaps touching the
    clip boundary are left alone: they are not bounded by presence on both
    sides.
    """
    sig = signal if isinstance(signal, BinarySignal) else BinarySignal(signal)
    vals = sig.values.copy()
    if m is None:
        m = smoothing_length(len(vals) if clip_frames is None else clip_frames)
    for start, length in _runs(vals, False):
        if length < m and start > 0 and start + length < len(vals):
            vals[start:start + length] = True
    for start, length in _runs(vals, True):
        if length < m:
            vals[start:start + length] = False
    return BinarySignal(vals, sig.fps)


# -------------------------------------------------------------------- masks

def _check_dims(*masks) -> None:
    shapes = {np.shape(m) for m in masks}
    if len(shapes) != 1:
        raise DimensionMismatch(f"mask shapes differ: {sorted(shapes)}")


def consensus_mask(masks) -> np.ndarray:
    """Pixels present in every mask of the window."""
    masks = [np.asarray(m, dtype=bool) for m in masks]
    if not masks:
        raise ValueError("consensus needs at least one mask")
    _check_dims(*masks)
    return np.logical_and.reduce(masks)


def iou(a, b) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    _check_dims(a, b)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def rle_encode(mask) -> dict:
    """Row-major ``[start, length]`` runs of set pixels."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    return {"h": int(h), "w": int(w), "runs": [[int(s), int(n)] for s, n in _runs(mask.ravel(), True)]}


def rle_decode(rle: dict) -> np.ndarray:
    try:
        h, w = int(rle["h"]), int(rle["w"])
        flat = np.zeros(h * w, dtype=bool)
        for start, length in rle["runs"]:
            if start < 0 or length < 0 or start + length > h * w:
                raise FormatError(f"mask run {start},{length} outside {h}x{w}")
            flat[start:start + length] = True
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed mask RLE: {exc}") from exc
    return flat.reshape(h, w)


def mask_box(mask) -> np.ndarray | None:
    """Normalized ``[cx, cy, w, h]`` of the set pixels (None if empty)."""
    mask = np.asarray(mask, dtype=bool)
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return None
    h, w = mask.shape
    x0, x1 = xs.min() / w, (xs.max() + 1) / w
    y0, y1 = ys.min() / h, (ys.max() + 1) / h
    return np.array([(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0])


# ------------------------------------------------------------------- tracks

@dataclass
class Component:
    """One detected object instance in one frame."""

    mask: np.ndarray
    iou: float = 1.0
    pose: np.ndarray | None = None
    radius: float = float("nan")
    inliers: float = 0.0


@dataclass
class TrackRecord:
    """A linked object track over the frame span ``[start, start + len)``.

    Gap frames (no matched component) carry ``None`` masks, zero IoU and
    NaN poses. ``segments`` are inclusive local index ranges.
    """

    track_id: int
    start: int
    masks: list
    ious: np.ndarray
    poses: np.ndarray
    extrinsics: np.ndarray
    radii: np.ndarray = None
    inliers: np.ndarray = None
    segments: list = field(default_factory=list)
    seed_index: int = 0
    scale: float | None = None
    clip_id: str = ""
    fps: float = 6.0
    clip_frames: int = 0
    points: Callable | None = None
    intrinsics: tuple = (500.0, 500.0, 320.0, 240.0)

    def __post_init__(self):
        self.ious = np.clip(np.asarray(self.ious, dtype=float), 0.0, 1.0)
        n = len(self.ious)
        if self.radii is None:
            self.radii = np.full(n, np.nan)
        if self.inliers is None:
            self.inliers = np.zeros(n)
        if not self.segments:
            self.segments = segment_registrations(self.ious)

    def __len__(self) -> int:
        return len(self.ious)

    @property
    def frames(self) -> np.ndarray:
        return np.arange(self.start, self.start + len(self))


def dedup(candidate, active_tracks, frame: int, dedup_iou: float = 0.7, window: int = 3):
    """``("accept", None)`` or ``("reject", track_id)`` for a new-track candidate.

    A candidate is rejected when it overlaps any active track's mask from
    the last ``window`` frames (``frame - window + 1 .. frame``) with IoU at
    or above ``dedup_iou``.
    """
    best, best_id = -1.0, None
    for tr in active_tracks:
        for f, m in zip(tr["frames"][::-1], tr["masks"][::-1]):
            if f <= frame - window:
                break
            if f > frame:
                continue
            v = iou(candidate, m)
            if v > best:
                best, best_id = v, tr["id"]
    if best >= dedup_iou:
        return "reject", best_id
    return "accept", None


def link_tracks(frames, iou_thresh: float = 0.5, gap_tol: int = 2, min_len: int = 1,
                dedup_iou: float | None = 0.7, dedup_window: int = 3) -> list[dict]:
    """Greedy IoU linking of per-frame components into tracks.

    ``frames`` is a list (indexed by frame) of component lists; components
    are masks or :class:`Component`. Returns raw tracks as dicts with keys
    ``id``, ``frames`` and ``comps`` (matched component per frame). Tracks
    whose span is shorter than ``min_len`` frames are dropped, but
    ``link_tracks.last_total`` keeps the count before that filter.
    """
    tracks: list[dict] = []
    for f, comps in enumerate(frames):
        comps = [c if isinstance(c, Component) else Component(np.asarray(c, dtype=bool)) for c in comps]
        active = [t for t in tracks if f - t["frames"][-1] - 1 <= gap_tol]
        pairs = []
        for t in active:
            for j, c in enumerate(comps):
                v = iou(t["masks"][-1], c.mask)
                if v >= iou_thresh:
                    pairs.append((-v, t["id"], j))
        pairs.sort()
        used_t, used_c = set(), set()
        by_id = {t["id"]: t for t in tracks}
        for _, tid, j in pairs:
            if tid in used_t or j in used_c:
                continue
            used_t.add(tid)
            used_c.add(j)
            t = by_id[tid]
            t["frames"].append(f)
            t["masks"].append(comps[j].mask)
            t["comps"].append(comps[j])
        for j, c in enumerate(comps):
            if j in used_c:
                continue
            if dedup_iou is not None and dedup(c.mask, active, f, dedup_iou, dedup_window)[0] == "reject":
                continue
            t = {"id": len(tracks), "frames": [f], "masks": [c.mask], "comps": [c]}
            tracks.append(t)
            active.append(t)
    link_tracks.last_total = len(tracks)
    return [t for t in tracks if t["frames"][-1] - t["frames"][0] + 1 >= min_len]


link_tracks.last_total = 0


# -------------------------------------------------------------------- scale

def weighted_lower_median(values, weights) -> float:
    """Smallest value whose cumulative weight reaches half the total."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(weights[order])
    return float(values[order][np.searchsorted(cum, cum[-1] / 2, side="left")])


class ScaleEstimator:
    """Per-track metric scale, locked after the first estimate."""

    def __init__(self, mesh_radius: float):
        if not mesh_radius > 0:
            raise ValueError("mesh radius must be positive")
        self.mesh_radius = float(mesh_radius)
        self.scale: float | None = None

    @property
    def locked(self) -> bool:
        return self.scale is not None

    def estimate(self, observed_radii, weights) -> float:
        if self.locked:
            raise AlreadyLocked("scale is locked after the first estimate")
        r = np.asarray(observed_radii, dtype=float).ravel()
        w = np.asarray(weights, dtype=float).ravel()
        ok = np.isfinite(r) & np.isfinite(w) & (w > 0) & (r > 0)
        if not ok.any():
            raise NoValidFrames("no frame has a usable radius observation")
        self.scale = weighted_lower_median(r[ok] / self.mesh_radius, w[ok])
        return self.scale


def estimate_scale(observed_radii, weights, mesh_radius: float) -> float:
    return ScaleEstimator(mesh_radius).estimate(observed_radii, weights)


# ------------------------------------------------------------- registration

def segment_registrations(ious, threshold: float = REREG_IOU, seed: int = 0,
                          monitors=()) -> list[tuple[int, int]]:
    """Split a track into registration segments (inclusive index ranges).

    Tracking runs forward from ``seed`` then backward from it. Going
    forward, a frame whose IoU is below ``threshold`` (or that any monitor
    flags) triggers re-registration and starts a new segment. Going
    backward, the trigger frame starts the segment that covers the earlier
    frames. ``monitors`` are optional callables ``(index) -> bool``.
    """
    ious = np.asarray(ious, dtype=float).ravel()
    n = len(ious)
    if n == 0:
        raise ValueError("empty IoU series")
    if not 0 <= seed < n:
        raise ValueError(f"seed index {seed} outside track of length {n}")

    def trig(k):
        return ious[k] < threshold or any(m(k) for m in monitors)

    # forward and backward tracking share the registration made at the seed
    starts = {0}
    for k in range(seed + 1, n):
        if trig(k):
            starts.add(k)
    for k in range(seed - 1, -1, -1):
        if trig(k):
            starts.add(k + 1)
    s = sorted(starts)
    return [(a, b - 1) for a, b in zip(s, s[1:] + [n])]


# ------------------------------------------------------------------- funnel

STAGES = ("segments", "selected_clips", "tracks", "filtered_tracks", "models", "pose_tracks",
          "prefilter_windows", "postfilter_windows")
#: Chains of stages along which counts can only shrink.
CHAINS = (("segments", "selected_clips"),
          ("tracks", "filtered_tracks", "models", "pose_tracks"),
          ("prefilter_windows", "postfilter_windows"))


@dataclass
class FunnelStats:
    counts: dict = field(default_factory=lambda: {s: 0 for s in STAGES})

    def add(self, stage: str, n: int = 1) -> None:
        if stage not in self.counts:
            raise KeyError(f"unknown funnel stage {stage!r}")
        self.counts[stage] += int(n)

    def __add__(self, other: "FunnelStats") -> "FunnelStats":
        return FunnelStats({s: self.counts[s] + other.counts[s] for s in STAGES})

    def is_monotone(self) -> bool:
        return all(self.counts[a] >= self.counts[b] for chain in CHAINS for a, b in zip(chain, chain[1:]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stage", "count"])
        for s in STAGES:
            w.writerow([s, self.counts[s]])
        return buf.getvalue()


# ------------------------------------------------------------------ windows

def _window_ok(track: TrackRecord, a: int, b: int) -> bool:
    if not any(s <= a and b <= e for s, e in track.segments):
        return False
    iw = track.ious[a:b + 1]
    if iw.min() < REREG_IOU:
        return False
    if np.any(iw[:-1] - iw[1:] > MAX_IOU_DROP):
        return False
    return bool(np.all(np.isfinite(track.poses[a:b + 1])))


def _track_boxes(track: TrackRecord, a: int, b: int) -> np.ndarray:
    boxes = []
    for k in range(a, b + 1):
        near = [track.masks[j] for j in range(max(0, k - 1), min(len(track), k + 2)) if track.masks[j] is not None]
        stable = consensus_mask(near) if near else None
        box = mask_box(stable) if stable is not None else None
        if box is None and track.masks[k] is not None:
            box = mask_box(track.masks[k])
        boxes.append(np.zeros(4) if box is None else box)
    return np.stack(boxes)


def slice_windows(track: TrackRecord, C: int = 3, H: int = 8, max_clip_seconds: float = 10.0):
    """Cut gated C+H windows from a track.

    Returns ``(windows, stats)`` where ``stats`` holds the
    ``prefilter_windows`` and ``postfilter_windows`` counts.
    """
    L = C + H
    stats = FunnelStats()
    clip_frames = track.clip_frames or len(track)
    if clip_frames / track.fps > max_clip_seconds:
        return [], stats
    windows = []
    for a in range(0, len(track) - L + 1):
        b = a + L - 1
        stats.add("prefilter_windows")
        if not _window_ok(track, a, b):
            continue
        anchor = a + C - 1
        cloud = track.points(track.start + anchor) if track.points is not None else None
        if cloud is None:
            cloud = np.concatenate([track.poses[anchor, :3, 3], np.zeros(3)])[None]
        try:
            w = build_window(track.poses[a:b + 1], track.extrinsics[a:b + 1], _track_boxes(track, a, b),
                             cloud, C, H, f"{track.clip_id}/t{track.track_id}/f{track.start + a}",
                             track.fps, track.intrinsics)
        except NonPositiveDepth:
            continue
        if track.scale is not None:
            w.extra["scale"] = track.scale
        windows.append(w)
        stats.add("postfilter_windows")
    return windows, stats


# ----------------------------------------------------------------- pipeline

@dataclass
class CurationConfig:
    C: int = 3
    H: int = 8
    iou_thresh: float = 0.5
    gap_tol: int = 2
    dedup_iou: float = 0.7
    dedup_window: int = 3
    min_len: int | None = None
    max_clip_seconds: float = 10.0
    clip_predicate: Callable | None = None
    track_predicate: Callable | None = None
    monitors: tuple = ()


def _pose9(v) -> np.ndarray:
    return se3.pose_from_vec9(np.asarray(v, dtype=float))


def curate_clip(clip_id: str, records: list[dict], cfg: CurationConfig, base_dir=".") -> tuple[list, FunnelStats]:
    """Run the pipeline on one clip's ordered frame records."""
    stats = FunnelStats()
    stats.add("segments")
    n = len(records)
    if n == 0:
        return [], stats
    fps = float(records[0].get("fps", 6.0))
    hand = run_length_smooth([bool(r.get("hand", True)) for r in records], n).values
    obj = run_length_smooth([bool(r.get("object", True)) for r in records], n).values
    if not np.any(hand & obj):
        return [], stats
    if cfg.clip_predicate is not None and not cfg.clip_predicate(clip_id, records):
        return [], stats
    stats.add("selected_clips")

    frames = []
    for r in records:
        comps = []
        for c in r.get("components", []):
            comps.append(Component(
                mask=rle_decode(c["mask"]), iou=float(c.get("iou", 1.0)),
                pose=_pose9(c["pose"]) if c.get("pose") is not None else None,
                radius=float(c.get("radius", np.nan)), inliers=float(c.get("inliers", 0.0)),
            ))
        frames.append(comps)
    min_len = cfg.min_len if cfg.min_len is not None else cfg.C + cfg.H
    raw = link_tracks(frames, cfg.iou_thresh, cfg.gap_tol, 1, cfg.dedup_iou, cfg.dedup_window)
    stats.add("tracks", len(raw))
    extr = np.stack([_pose9(r["extrinsics"]) if r.get("extrinsics") is not None else np.eye(4) for r in records])
    intrinsics = tuple(records[0].get("intrinsics", (500.0, 500.0, 320.0, 240.0)))
    cache: dict = {}

    def points_at(frame):
        r = records[frame]
        if "points_file" not in r:
            return None
        path = Path(base_dir) / r["points_file"]
        key = (str(path), int(r["points_offset"]))
        if key not in cache:
            cache[key] = read_ofpc(path, int(r["points_offset"]))
        return cache[key]

    windows = []
    for t in raw:
        span = t["frames"][-1] - t["frames"][0] + 1
        if span < min_len:
            continue
        if cfg.track_predicate is not None and not cfg.track_predicate(clip_id, t):
            continue
        stats.add("filtered_tracks")
        start = t["frames"][0]
        masks = [None] * span
        ious = np.zeros(span)
        poses = np.full((span, 4, 4), np.nan)
        radii = np.full(span, np.nan)
        inl = np.zeros(span)
        for f, c in zip(t["frames"], t["comps"]):
            k = f - start
            masks[k], ious[k], radii[k], inl[k] = c.mask, c.iou, c.radius, c.inliers
            if c.pose is not None:
                poses[k] = c.pose
        mesh_radius = next((float(records[f]["mesh_radius"]) for f in t["frames"] if "mesh_radius" in records[f]), None)
        if mesh_radius is None:
            finite = radii[np.isfinite(radii) & (radii > 0)]
            mesh_radius = float(finite[0]) if len(finite) else 1.0
        try:
            scale = estimate_scale(radii, inl, mesh_radius)
        except NoValidFrames:
            continue
        stats.add("models")
        if not np.any(np.isfinite(poses[:, 0, 0])):
            continue
        stats.add("pose_tracks")
        monitors = tuple(lambda k, m=m, t=t: m(t, k) for m in cfg.monitors)
        track = TrackRecord(
            track_id=t["id"], start=start, masks=masks, ious=ious, poses=poses,
            extrinsics=extr[start:start + span], radii=radii, inliers=inl,
            segments=segment_registrations(ious, monitors=monitors), seed_index=0, scale=scale,
            clip_id=clip_id, fps=fps, clip_frames=n, points=points_at, intrinsics=intrinsics,
        )
        w, s = slice_windows(track, cfg.C, cfg.H, cfg.max_clip_seconds)
        windows.extend(w)
        stats = stats + s
    return windows, stats


def read_stream(path) -> dict[str, list[dict]]:
    """Group a detection-stream JSONL file by clip, frames in order."""
    clips: dict[str, list[dict]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                clips.setdefault(str(rec["clip_id"]), []).append(rec)
            except (json.JSONDecodeError, KeyError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    for cid, recs in clips.items():
        recs.sort(key=lambda r: int(r["frame"]))
        if [int(r["frame"]) for r in recs] != list(range(len(recs))):
            raise FormatError(f"clip {cid}: frames must be 0..n-1 without holes")
    return clips


def run_pipeline(clips: dict[str, list[dict]], cfg: CurationConfig = CurationConfig(), base_dir="."):
    """Curate every clip (sorted by id); returns windows and merged funnel."""
    total = FunnelStats()
    windows = []
    for cid in sorted(clips):
        w, s = curate_clip(cid, clips[cid], cfg, base_dir)
        windows.extend(w)
        total = total + s
    return windows, total


def funnel_report(stats_list) -> FunnelStats:
    total = FunnelStats()
    for s in stats_list:
        total = total + s
    return total
