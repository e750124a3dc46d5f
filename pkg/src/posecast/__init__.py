"""Diffusion forecasting of future 6-DoF object poses from short observations."""

from .errors import PosecastError
from .estimator import ConstantPoseForecaster, ConstantVelocityForecaster, TrajectoryForecaster
from .metrics import MetricReport, evaluate
from .model import ForecastNet, ModelConfig
from .schedule import build_schedule
from .tokens import TokenStats, TrajectoryWindow, build_window

__all__ = [
    "ConstantPoseForecaster",
    "ConstantVelocityForecaster",
    "ForecastNet",
    "MetricReport",
    "ModelConfig",
    "PosecastError",
    "TokenStats",
    "TrajectoryForecaster",
    "TrajectoryWindow",
    "build_schedule",
    "build_window",
    "evaluate",
]

__version__ = "0.1.0"
