"""Binary checkpoint format.

Layout (little endian)::

    b"OFCK" | u16 version | u32 header_len | header JSON (utf-8) | float32 blobs

The header records the model config, frozen token statistics, schedule
sizes, seed, free-form metadata and a table of ``{name, shape, offset,
count}`` entries locating each parameter (offsets relative to the blob
start). Saving then loading is bit-exact for float32 parameters.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .errors import FormatError
from .formats import atomic_write_bytes
from .model import ForecastNet, ModelConfig
from .tokens import TokenStats

MAGIC = b"OFCK"
VERSION = 1
_HEAD = struct.Struct("<4sHI")


def dumps_checkpoint(model: ForecastNet, stats: TokenStats, seed: int = 0, meta: dict | None = None) -> bytes:
    table, blobs, offset = [], [], 0
    for name in sorted(model.params):
        arr = np.asarray(model.params[name].data, dtype="<f4", order="C")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "config": model.config.to_dict(),
        "stats": stats.to_dict(),
        "schedule": {"T": model.config.T, "S": model.config.S},
        "seed": int(seed),
        "meta": meta or {},
        "params": table,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _HEAD.pack(MAGIC, VERSION, len(hbytes)) + hbytes + b"".join(blobs)


def loads_checkpoint(buf: bytes, dtype=np.float32) -> tuple[ForecastNet, TokenStats, dict]:
    """Returns ``(model, stats, header)``."""
    if len(buf) < _HEAD.size:
        raise FormatError("truncated checkpoint header")
    magic, version, hlen = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(buf[_HEAD.size:_HEAD.size + hlen].decode("utf-8"))
        cfg = ModelConfig.from_dict(header["config"])
        stats = TokenStats.from_dict(header["stats"])
        base = _HEAD.size + hlen
        params = {}
        for entry in header["params"]:
            start = base + int(entry["offset"])
            count = int(entry["count"])
            if start + 4 * count > len(buf):
                raise FormatError(f"parameter {entry['name']} runs past end of file")
            arr = np.frombuffer(buf, dtype="<f4", count=count, offset=start).reshape(tuple(entry["shape"]))
            params[entry["name"]] = Tensor(arr.astype(dtype), requires_grad=True)
    except (KeyError, TypeError, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed checkpoint: {exc}") from exc
    return ForecastNet(cfg, params), stats, header


def save_checkpoint(path, model: ForecastNet, stats: TokenStats, seed: int = 0, meta: dict | None = None) -> None:
    atomic_write_bytes(path, dumps_checkpoint(model, stats, seed, meta))


def load_checkpoint(path, dtype=np.float32):
    return loads_checkpoint(Path(path).read_bytes(), dtype)
