from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from posecast import se3  # noqa: E402
from posecast.model import ModelConfig  # noqa: E402
from posecast.synth import DatasetConfig, generate_windows  # noqa: E402

TINY = dict(width=32, d_ctx=32, n_points=32, point_widths=(16, 16, 16), knn_k=8, S=10)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_config():
    return ModelConfig(**TINY)


@pytest.fixture(scope="session")
def small_windows():
    cfg = DatasetConfig(count=24, n_points=40, noise=[0.002, 0.002])
    return generate_windows(cfg, seed=5)


def random_pose(rng, z=(0.5, 2.0)):
    R = se3.random_rotations(rng, 1)[0]
    t = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(*z)])
    return se3.make_pose(R, t)
