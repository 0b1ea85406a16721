"""Ideal event camera moving in front of a textured plane.

The world plane ``Z = plane_depth`` carries a periodic random texture. A
pinhole camera (looking down +Z at identity orientation) follows an analytic
constant-velocity trajectory; each pixel emits an event whenever its
log-intensity moves one contrast threshold away from its reference level.
Ground-truth velocities come straight from the trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates
from scipy.spatial.transform import Rotation

from ..encoding import EVENT_DTYPE
from .poses import PoseSample, VelocityRecord, body_rate_to_euler_rates, euler_zyx


class DegenerateGeometryError(ValueError):
    """Some pixel ray misses the scene plane."""


@dataclass(frozen=True)
class Trajectory:
    """Constant world-frame linear velocity and constant body angular rate."""

    linear_velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)  # m/s, world frame
    body_rate: tuple[float, float, float] = (0.0, 0.0, 0.0)  # rad/s, camera frame
    position0: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotvec0: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def rotation(self, t) -> Rotation:
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        r0 = Rotation.from_rotvec(self.rotvec0)
        return r0 * Rotation.from_rotvec(np.outer(t, self.body_rate))

    def position(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        return np.asarray(self.position0) + np.outer(t, self.linear_velocity)

    def velocity(self, t: float) -> VelocityRecord:
        """Analytic ground truth at time ``t``."""
        rot = self.rotation(t)
        v_cam = rot.inv().apply(np.asarray(self.linear_velocity, dtype=np.float64))[0]
        roll, pitch, _ = euler_zyx(rot)[0]
        rates = body_rate_to_euler_rates(np.asarray(self.body_rate, dtype=np.float64), roll, pitch)
        return VelocityRecord(float(t), v_cam, np.degrees(rates))


@dataclass(frozen=True)
class SyntheticSceneSpec:
    sensor_h: int = 64
    sensor_w: int = 64
    focal: float = 60.0  # px
    principal: tuple[float, float] | None = None  # (cx, cy); sensor centre by default
    plane_depth: float = 2.0  # m
    texture_density: float = 0.3  # fraction of bright cells before blurring
    texture_cells: int = 128
    texture_extent: float = 8.0  # m covered by one texture period
    texture_blur: float = 1.0  # texture cells
    contrast_threshold: float = 0.2  # log-intensity
    render_dt: float = 5e-4  # s between rendered frames
    pose_rate: float = 200.0  # Hz
    trajectory: Trajectory = field(default_factory=Trajectory)

    def __post_init__(self):
        if self.focal <= 0:
            raise ValueError("focal length must be positive")
        if self.contrast_threshold <= 0:
            raise ValueError("contrast threshold must be positive")
        if not 0 < self.texture_density < 1:
            raise ValueError("texture density must lie in (0, 1)")

    @property
    def center(self) -> tuple[float, float]:
        if self.principal is not None:
            return self.principal
        return ((self.sensor_w - 1) / 2.0, (self.sensor_h - 1) / 2.0)


@dataclass
class SyntheticClip:
    events: np.ndarray  # EVENT_DTYPE, sorted
    poses: list[PoseSample]
    velocities: list[VelocityRecord]  # at the pose timestamps
    scene: SyntheticSceneSpec
    duration: float


def make_texture(scene: SyntheticSceneSpec, rng: np.random.Generator) -> np.ndarray:
    cells = (rng.random((scene.texture_cells, scene.texture_cells)) < scene.texture_density).astype(float)
    tex = gaussian_filter(cells, scene.texture_blur, mode="wrap")
    tex = (tex - tex.min()) / max(tex.max() - tex.min(), 1e-12)
    return 0.1 + 0.9 * tex


def _pixel_rays(scene: SyntheticSceneSpec) -> np.ndarray:
    cx, cy = scene.center
    v, u = np.mgrid[0 : scene.sensor_h, 0 : scene.sensor_w].astype(np.float64)
    return np.stack([(u - cx) / scene.focal, (v - cy) / scene.focal, np.ones_like(u)], axis=-1).reshape(-1, 3)


def render_log_intensity(scene: SyntheticSceneSpec, texture: np.ndarray, t: float, rays: np.ndarray | None = None) -> np.ndarray:
    """Log intensity seen by every pixel at time ``t``, shape ``(H, W)``."""
    rays = _pixel_rays(scene) if rays is None else rays
    traj = scene.trajectory
    rot = traj.rotation(t)[0]
    pos = traj.position(t)[0]
    d = rot.apply(rays)
    if np.any(d[:, 2] <= 1e-9) or pos[2] >= scene.plane_depth:
        raise DegenerateGeometryError(f"camera at t={t:.4f}s does not see the scene plane")
    lam = (scene.plane_depth - pos[2]) / d[:, 2]
    pts = pos[:2] + lam[:, None] * d[:, :2]
    coords = (pts / scene.texture_extent * scene.texture_cells).T[::-1]  # (row, col) = (Y, X)
    inten = map_coordinates(texture, coords, order=1, mode="grid-wrap")
    return np.log(inten).reshape(scene.sensor_h, scene.sensor_w)


def gen_synthetic_events(scene: SyntheticSceneSpec, duration: float, seed: int = 0) -> SyntheticClip:
    """Render the clip and convert brightness changes into events.

    Crossing times inside a rendering interval are linearly interpolated.
    """
    rng = np.random.default_rng(seed)
    texture = make_texture(scene, rng)
    rays = _pixel_rays(scene)
    n_frames = int(round(duration / scene.render_dt))
    times = np.arange(n_frames + 1) * scene.render_dt
    c = scene.contrast_threshold
    prev = render_log_intensity(scene, texture, 0.0, rays).ravel()
    ref = prev.copy()
    chunks = []
    for j in range(1, n_frames + 1):
        cur = render_log_intensity(scene, texture, times[j], rays).ravel()
        diff = cur - ref
        n = np.floor(np.abs(diff) / c).astype(np.int64)
        hit = np.flatnonzero(n)
        if len(hit):
            sign = np.sign(diff[hit])
            reps = n[hit]
            pix = np.repeat(hit, reps)
            sgn = np.repeat(sign, reps)
            step = np.concatenate([np.arange(1, k + 1) for k in reps])
            level = ref[pix] + sgn * c * step
            span = cur[pix] - prev[pix]
            frac = np.where(np.abs(span) > 1e-15, (level - prev[pix]) / np.where(span == 0, 1, span), 1.0)
            frac = np.clip(frac, 0.0, 1.0)
            t_us = np.floor((times[j - 1] + frac * scene.render_dt) * 1e6).astype(np.uint64)
            ev = np.empty(len(pix), dtype=EVENT_DTYPE)
            ev["t"] = t_us
            ev["x"] = pix % scene.sensor_w
            ev["y"] = pix // scene.sensor_w
            ev["p"] = sgn.astype(np.int8)
            chunks.append(ev)
            ref[hit] += sign * reps * c
        prev = cur
    events = np.concatenate(chunks) if chunks else np.zeros(0, dtype=EVENT_DTYPE)
    order = np.lexsort((events["p"], events["x"], events["y"], events["t"]))
    events = events[order]

    n_poses = int(np.floor(duration * scene.pose_rate)) + 1
    pose_t = np.arange(n_poses) / scene.pose_rate
    traj = scene.trajectory
    rots = traj.rotation(pose_t)
    pos = traj.position(pose_t)
    quats = rots.as_quat()[:, [3, 0, 1, 2]]
    poses = [PoseSample(float(t), p, q / np.linalg.norm(q)) for t, p, q in zip(pose_t, pos, quats)]
    vels = [traj.velocity(t) for t in pose_t]
    return SyntheticClip(events, poses, vels, scene, duration)


def random_trajectory(
    rng: np.random.Generator,
    lateral_speed: float = 1.0,
    forward_speed: tuple[float, float] = (-0.5, 1.0),
    max_rate_deg: float = 20.0,
) -> Trajectory:
    """Draw a clip trajectory: lateral components in +-lateral_speed, forward
    component in the given range, body rates in +-max_rate_deg per axis."""
    lin = (
        rng.uniform(-lateral_speed, lateral_speed),
        rng.uniform(-lateral_speed, lateral_speed),
        rng.uniform(*forward_speed),
    )
    rate = tuple(np.radians(rng.uniform(-max_rate_deg, max_rate_deg, size=3)))
    return Trajectory(lin, rate)
