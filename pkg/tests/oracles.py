"""Independent reference implementations used only by the tests.

Each oracle computes the same quantity as a package function by a different
route (quaternions instead of matrices, explicit loops instead of
vectorized numpy, brute force instead of closed form).
"""

from __future__ import annotations

import math

import numpy as np


def matrix_to_quaternion(R) -> np.ndarray:
    """Shepperd's method; returns unit (w, x, y, z)."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    return q / np.linalg.norm(q)


def quaternion_angle(R1, R2) -> float:
    q1, q2 = matrix_to_quaternion(R1), matrix_to_quaternion(R2)
    return 2.0 * math.acos(min(1.0, abs(float(np.dot(q1, q2)))))


def rotation_from_axis_angle(axis, angle) -> np.ndarray:
    """Quaternion route to a rotation matrix."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    w = math.cos(angle / 2)
    x, y, z = axis * math.sin(angle / 2)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def slope_by_polyfit(y) -> float:
    y = list(y)
    if len(y) < 2:
        return 0.0
    return float(np.polyfit(np.arange(1, len(y) + 1, dtype=float), np.asarray(y, dtype=float), 1)[0])


def brute_metrics(pred, gt) -> dict:
    """Loop-based ADE/FDE/ARE/FRE with quaternion angles and polyfit slopes."""
    e, r = [], []
    for P, G in zip(pred, gt):
        d = [P[i][3] - G[i][3] for i in range(3)]
        e.append(math.sqrt(sum(x * x for x in d)))
        r.append(math.degrees(quaternion_angle(np.asarray(G)[:3, :3], np.asarray(P)[:3, :3])))
    return {
        "ade": sum(e) / len(e), "fde": e[-1], "des": slope_by_polyfit(e),
        "are": sum(r) / len(r), "fre": r[-1], "res": slope_by_polyfit(r),
    }


def brute_weighted_lower_median(values, weights) -> float:
    """Minimizer of sum_i w_i |x_i - m| over the data points (smallest on ties)."""
    best, best_cost = None, None
    for m in sorted(values):
        cost = sum(w * abs(v - m) for v, w in zip(values, weights))
        if best_cost is None or cost < best_cost - 1e-15:
            best, best_cost = m, cost
    return best


def naive_smooth(values, m: int) -> list[bool]:
    """Run-length smoothing written as explicit scans."""
    v = [bool(x) for x in values]
    n = len(v)
    i = 0
    while i < n:
        if not v[i]:
            j = i
            while j < n and not v[j]:
                j += 1
            if i > 0 and j < n and j - i < m:
                for k in range(i, j):
                    v[k] = True
            i = j
        else:
            i += 1
    i = 0
    while i < n:
        if v[i]:
            j = i
            while j < n and v[j]:
                j += 1
            if j - i < m:
                for k in range(i, j):
                    v[k] = False
            i = j
        else:
            i += 1
    return v


def chord_angle(R1, R2) -> np.ndarray:
    """Rotation angle from the Frobenius chord ``||R1 - R2|| = 2 sqrt(2) sin(theta / 2)``.

    Well conditioned near zero, where arccos of the trace is not.
    """
    d = np.linalg.norm(np.asarray(R1, dtype=float) - np.asarray(R2, dtype=float), axis=(-2, -1))
    return 2.0 * np.arcsin(np.clip(d / (2.0 * math.sqrt(2.0)), 0.0, 1.0))
