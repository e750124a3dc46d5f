"""Window JSONL records and the OFPC binary point-cloud sidecar.

OFPC block layout (little endian)::

    b"OFPC" | u16 version (=1) | u32 count | count * 6 float32 (x, y, z, xo, yo, zo)

Several blocks may be concatenated in one file; a window record points at
its block by byte offset.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from . import se3
from .errors import FormatError
from .tokens import TrajectoryWindow

OFPC_MAGIC = b"OFPC"
OFPC_VERSION = 1
_OFPC_HEADER = struct.Struct("<4sHI")


def encode_ofpc(points) -> bytes:
    points = np.asarray(points, dtype="<f4")
    if points.ndim != 2 or points.shape[1] != 6:
        raise FormatError(f"point block must be (N, 6), got {points.shape}")
    return _OFPC_HEADER.pack(OFPC_MAGIC, OFPC_VERSION, len(points)) + points.tobytes(order="C")


def decode_ofpc(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one block starting at ``offset``; returns points and the end offset."""
    if len(buf) < offset + _OFPC_HEADER.size:
        raise FormatError("truncated OFPC header")
    magic, version, count = _OFPC_HEADER.unpack_from(buf, offset)
    if magic != OFPC_MAGIC:
        raise FormatError(f"bad OFPC magic {magic!r} at offset {offset}")
    if version != OFPC_VERSION:
        raise FormatError(f"unsupported OFPC version {version}")
    start = offset + _OFPC_HEADER.size
    end = start + count * 24
    if len(buf) < end:
        raise FormatError("truncated OFPC payload")
    pts = np.frombuffer(buf, dtype="<f4", count=count * 6, offset=start).reshape(count, 6)
    return pts.astype(float), end


def read_ofpc(path, offset: int = 0) -> np.ndarray:
    with open(path, "rb") as fh:
        fh.seek(offset)
        head = fh.read(_OFPC_HEADER.size)
        if len(head) < _OFPC_HEADER.size:
            raise FormatError(f"truncated OFPC header in {path}")
        _, _, count = _OFPC_HEADER.unpack(head)
        body = fh.read(count * 24)
    return decode_ofpc(head + body)[0]


def iter_ofpc(buf: bytes):
    """Yield ``(offset, points)`` for every block in a sidecar buffer."""
    offset = 0
    while offset < len(buf):
        pts, end = decode_ofpc(buf, offset)
        yield offset, pts
        offset = end


def _floats(a) -> list:
    return [float(x) for x in np.ravel(a)]


def window_to_record(window: TrajectoryWindow, points_file: str, points_offset: int) -> dict:
    rec = {
        "clip_id": window.clip_id,
        "fps": float(window.fps),
        "C": window.C,
        "H": window.H,
        "intrinsics": _floats(window.intrinsics),
        "context_poses": [_floats(v) for v in se3.pose_to_vec9(window.context_poses)],
        "context_boxes": [_floats(b) for b in window.context_boxes],
        "future_poses": [_floats(v) for v in se3.pose_to_vec9(window.future_poses)],
        "points_file": points_file,
        "points_offset": int(points_offset),
    }
    if window.label is not None:
        rec["label"] = window.label
    return rec


def record_to_window(rec: dict, base_dir=".", cache: dict | None = None) -> TrajectoryWindow:
    try:
        path = Path(base_dir) / rec["points_file"]
        if cache is not None:
            key = str(path)
            if key not in cache:
                cache[key] = path.read_bytes()
            points, _ = decode_ofpc(cache[key], int(rec["points_offset"]))
        else:
            points = read_ofpc(path, int(rec["points_offset"]))
        ctx = se3.pose_from_vec9(np.asarray(rec["context_poses"], dtype=float))
        fut = se3.pose_from_vec9(np.asarray(rec["future_poses"], dtype=float))
        window = TrajectoryWindow(
            clip_id=str(rec["clip_id"]),
            fps=float(rec["fps"]),
            context_poses=ctx,
            context_boxes=np.asarray(rec["context_boxes"], dtype=float).reshape(-1, 4),
            future_poses=fut,
            anchor_points=points,
            intrinsics=tuple(float(x) for x in rec["intrinsics"]),
            label=rec.get("label"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed window record: {exc}") from exc
    if window.C != rec["C"] or window.H != rec["H"]:
        raise FormatError(f"record {rec['clip_id']}: C/H fields disagree with pose counts")
    return window


def dumps_record(rec: dict) -> str:
    return json.dumps(rec, separators=(",", ":"), sort_keys=False)


def write_windows(jsonl_path, windows, points_name: str | None = None) -> None:
    """Write windows to ``jsonl_path`` with a sibling OFPC sidecar."""
    jsonl_path = Path(jsonl_path)
    points_name = points_name or jsonl_path.with_suffix(".ofpc").name
    points_path = jsonl_path.parent / points_name
    jsonl_path.parent.mkdir(parents=True, exist_ok=True)
    offset = 0
    with open(points_path, "wb") as pf, open(jsonl_path, "w", encoding="utf-8", newline="\n") as jf:
        for w in windows:
            block = encode_ofpc(w.anchor_points)
            pf.write(block)
            jf.write(dumps_record(window_to_record(w, points_name, offset)) + "\n")
            offset += len(block)


def read_windows(jsonl_path) -> list[TrajectoryWindow]:
    jsonl_path = Path(jsonl_path)
    cache: dict = {}
    out = []
    with open(jsonl_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{jsonl_path}:{lineno}: {exc}") from exc
            out.append(record_to_window(rec, jsonl_path.parent, cache))
    return out


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
