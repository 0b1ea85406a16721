"""Velocity ground truth from timestamped poses.

Linear velocity is reported in the camera frame (m/s). Angular velocity is
reported as rates of intrinsic Z-Y-X Euler angles, ordered
``(roll_rate, pitch_rate, yaw_rate)`` in deg/s.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation


@dataclass
class PoseSample:
    t: float  # seconds
    position: np.ndarray  # (3,) metres, world frame
    orientation: np.ndarray  # unit quaternion (w, x, y, z), camera -> world

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.orientation = np.asarray(self.orientation, dtype=np.float64)
        if abs(np.linalg.norm(self.orientation) - 1.0) > 1e-9:
            raise ValueError("orientation must be a unit quaternion")


@dataclass
class VelocityRecord:
    t: float
    linear: np.ndarray  # (3,) m/s, camera frame
    angular: np.ndarray  # (3,) deg/s, Euler-angle rates (roll, pitch, yaw)
    bin_index: int = 0

    def as_vector(self) -> np.ndarray:
        """6-vector ``(linear, angular)``."""
        return np.concatenate([self.linear, self.angular])


def _rotation(q_wxyz: np.ndarray) -> Rotation:
    q = np.asarray(q_wxyz, dtype=np.float64)
    return Rotation.from_quat(q[..., [1, 2, 3, 0]])


def euler_zyx(rot: Rotation) -> np.ndarray:
    """Intrinsic Z-Y-X angles as ``(roll, pitch, yaw)`` radians."""
    yaw, pitch, roll = rot.as_euler("ZYX").T
    return np.stack([roll, pitch, yaw], axis=-1)


def body_rate_to_euler_rates(omega_body: np.ndarray, roll: float, pitch: float) -> np.ndarray:
    """Map a body-frame angular velocity to Z-Y-X Euler-angle rates.

    Singular at pitch = +-90 degrees (gimbal lock).
    """
    p, q, r = omega_body
    sr, cr = np.sin(roll), np.cos(roll)
    cp = np.cos(pitch)
    if abs(cp) < 1e-9:
        raise ValueError("Euler rates undefined at gimbal lock")
    tp = np.tan(pitch)
    return np.array(
        [
            p + sr * tp * q + cr * tp * r,
            cr * q - sr * r,
            (sr * q + cr * r) / cp,
        ]
    )


def _pairs(n: int) -> list[tuple[int, int]]:
    """Central-difference index pairs with one-sided ends."""
    return [(0, 1)] + [(k - 1, k + 1) for k in range(1, n - 1)] + [(n - 2, n - 1)]


def poses_to_velocity(poses: list[PoseSample]) -> list[VelocityRecord]:
    """Differentiate a pose sequence into velocity records, one per pose."""
    if len(poses) < 3:
        raise ValueError("need at least 3 poses")
    t = np.array([p.t for p in poses])
    if np.any(np.diff(t) <= 0):
        raise ValueError("pose timestamps must be strictly increasing (duplicate or reversed stamp)")
    pos = np.stack([p.position for p in poses])
    rots = _rotation(np.stack([p.orientation for p in poses]))
    angles = euler_zyx(rots)
    out = []
    for k, (a, b) in enumerate(_pairs(len(poses))):
        dt = t[b] - t[a]
        v_world = (pos[b] - pos[a]) / dt
        r_k = rots[k]
        v_cam = r_k.inv().apply(v_world)
        rel = rots[a].inv() * rots[b]  # body-frame relative rotation
        omega_body = rel.as_rotvec() / dt
        rates = body_rate_to_euler_rates(omega_body, angles[k, 0], angles[k, 1])
        out.append(VelocityRecord(float(t[k]), v_cam, np.degrees(rates)))
    return out


def write_poses_csv(poses: list[PoseSample], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", "px", "py", "pz", "qw", "qx", "qy", "qz"])
        for p in poses:
            w.writerow([repr(float(p.t))] + [repr(float(v)) for v in (*p.position, *p.orientation)])


def read_poses_csv(path: Path) -> list[PoseSample]:
    out = []
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows)
        if header[:1] != ["t_s"]:
            raise ValueError(f"{path}: unexpected pose header {header}")
        for lineno, row in enumerate(rows, 2):
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed pose row") from None
            if len(vals) != 8:
                raise ValueError(f"{path}:{lineno}: expected 8 fields")
            out.append(PoseSample(vals[0], np.array(vals[1:4]), np.array(vals[4:8])))
    return out
