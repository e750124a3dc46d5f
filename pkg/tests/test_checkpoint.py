from __future__ import annotations

import numpy as np
import pytest

from posecast.checkpoint import dumps_checkpoint, load_checkpoint, loads_checkpoint, save_checkpoint
from posecast.errors import FormatError
from posecast.model import ForecastNet
from posecast.tokens import TokenStats


def test_roundtrip(tiny_config, rng, tmp_path):
    net = ForecastNet(tiny_config, seed=4)
    for p in net.params.values():
        p.data += rng.standard_normal(p.shape).astype(np.float32)
    stats = TokenStats(rng.standard_normal(9), rng.uniform(0.5, 2, 9))
    path = tmp_path / "m.ofck"
    save_checkpoint(path, net, stats, seed=9, meta={"note": "x"})
    back, st, header = load_checkpoint(path)
    assert back.config == tiny_config and st.digest() == stats.digest()
    assert header["seed"] == 9 and header["meta"] == {"note": "x"}
    for k in net.params:
        np.testing.assert_array_equal(back.params[k].data, net.params[k].data)
    assert dumps_checkpoint(back, st, 9, {"note": "x"}) == path.read_bytes()


def test_float64_load(tiny_config):
    buf = dumps_checkpoint(ForecastNet(tiny_config), TokenStats.identity())
    net, _, _ = loads_checkpoint(buf, dtype=np.float64)
    assert net.dtype == np.float64


@pytest.mark.parametrize("mangle", [
    lambda b: b"NOPE" + b[4:],
    lambda b: b[:4] + b"\x09\x00" + b[6:],
    lambda b: b[:-100],
    lambda b: b[:8],
    lambda b: b[:10] + b"\xff" + b[11:],
])
def test_corrupt_checkpoint(tiny_config, mangle):
    buf = dumps_checkpoint(ForecastNet(tiny_config), TokenStats.identity())
    with pytest.raises(FormatError):
        loads_checkpoint(mangle(buf))
