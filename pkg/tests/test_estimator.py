from __future__ import annotations

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from posecast import ConstantPoseForecaster, ConstantVelocityForecaster, TrajectoryForecaster
from posecast.errors import LengthMismatch
from posecast.validation import check_pose_array, check_windows

SMALL = dict(width=32, d_ctx=32, n_points=16, point_width=16, knn_k=4, S=5, steps=2, batch_size=4, K_warmup=1)


def test_baseline_estimators(small_windows):
    cp = ConstantPoseForecaster().fit(small_windows)
    pred = cp.predict(small_windows[:3])
    assert pred.shape == (3, 8, 4, 4)
    np.testing.assert_array_equal(pred[0, -1], small_windows[0].anchor_pose)
    cv = ConstantVelocityForecaster(H=4).fit(None)
    assert cv.predict(small_windows[:2]).shape == (2, 4, 4, 4)
    assert cp.score(small_windows) <= 0


def test_forecaster_fit_predict_save(small_windows, tmp_path):
    est = TrajectoryForecaster(**SMALL)
    with pytest.raises(NotFittedError):
        est.predict(small_windows[:1])
    est.fit(small_windows)
    assert len(est.loss_curve_) == 2
    pred = est.predict(small_windows[:3])
    assert pred.shape == (3, 8, 4, 4)
    samples = est.sample(small_windows[:2], n_samples=3, seed=1)
    assert samples.shape == (2, 3, 8, 4, 4)
    path = tmp_path / "est.ofck"
    est.save(path)
    back = TrajectoryForecaster.load(path)
    assert back.get_params() == est.get_params()
    np.testing.assert_array_equal(back.predict(small_windows[:3]), pred)
    assert not hasattr(clone(est), "model_")


def test_validation_helpers(small_windows):
    trimmed = check_windows(small_windows[:2], C=2, H=4)
    assert trimmed[0].C == 2 and trimmed[0].H == 4
    with pytest.raises(LengthMismatch):
        check_windows(small_windows[:2], H=16)
    with pytest.raises(LengthMismatch):
        check_pose_array(np.zeros((3, 4, 4)), H=4)
