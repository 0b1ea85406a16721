import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from neurove.datasets.poses import (
    PoseSample,
    body_rate_to_euler_rates,
    poses_to_velocity,
    read_poses_csv,
    write_poses_csv,
)
from neurove.datasets.sine import SineDatasetSpec, gen_sine_dataset, read_sine_dataset, write_sine_dataset
from neurove.datasets.synthetic import (
    DegenerateGeometryError,
    SyntheticSceneSpec,
    Trajectory,
    gen_synthetic_events,
    make_texture,
    render_log_intensity,
)
from neurove.datasets.velocity import (
    VelocityDatasetSpec,
    label_times,
    load_velocity_dataset,
    make_clip,
    read_manifest,
    write_velocity_dataset,
)
from neurove.encoding import WindowSpec, save_events
from neurove.training.velocity import dihedral_augment

# -- sine ---------------------------------------------------------------------------


def test_sine_examples_and_split():
    ds = gen_sine_dataset(seed=3)
    assert ds.values.shape == (100, 2000)
    assert len(ds.train_idx) == 97 and len(ds.val_idx) == 3
    assert not set(ds.train_idx) & set(ds.val_idx)
    assert np.all(np.abs(ds.values) <= 1)
    k = np.arange(2000)
    np.testing.assert_allclose(ds.values[5], np.sin(k * 2 * np.pi / 100 + ds.phases[5]))
    assert np.all((ds.phases >= 0) & (ds.phases < 2 * np.pi))


def test_sine_zero_phase_starts_at_zero():
    spec = SineDatasetSpec()
    ds = gen_sine_dataset(spec, 0)
    ds.phases[0] = 0.0
    assert math.sin(0 * spec.x_step + ds.phases[0]) == 0.0


def test_sine_determinism():
    a, b = gen_sine_dataset(seed=9), gen_sine_dataset(seed=9)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.val_idx, b.val_idx)
    assert not np.array_equal(a.phases, gen_sine_dataset(seed=10).phases)


def test_sine_spec_validation():
    with pytest.raises(ValueError):
        SineDatasetSpec(num_sequences=10, train_count=8, val_count=1)


def test_sine_csv_round_trip(tmp_path):
    ds = gen_sine_dataset(SineDatasetSpec(num_sequences=5, train_count=4, val_count=1, steps=20, forecast_steps=20), 1)
    files = write_sine_dataset(ds, tmp_path)
    assert len(files) == 6
    back = read_sine_dataset(tmp_path)
    np.testing.assert_array_equal(back.values, ds.values)
    np.testing.assert_array_equal(back.val_idx, ds.val_idx)
    np.testing.assert_array_equal(back.phases, ds.phases)


# -- poses ---------------------------------------------------------------------------


def _q_axis(axis, angle):
    """(w, x, y, z) quaternion of a rotation by ``angle`` about a unit axis."""
    a = np.asarray(axis, dtype=float)
    return np.concatenate([[math.cos(angle / 2)], math.sin(angle / 2) * a])


def test_constant_position_zero_velocity():
    poses = [PoseSample(0.1 * k, np.array([1.0, 2.0, 3.0]), np.array([1.0, 0, 0, 0])) for k in range(5)]
    for r in poses_to_velocity(poses):
        assert np.all(r.linear == 0) and np.all(r.angular == 0)


def test_forward_motion():
    poses = [PoseSample(0.01 * k, np.array([0.0, 0.0, 0.01 * k]), np.array([1.0, 0, 0, 0])) for k in range(10)]
    for r in poses_to_velocity(poses):
        np.testing.assert_allclose(r.linear, [0, 0, 1], atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(
    v=st.tuples(*[st.floats(-5, 5)] * 3),
    rotvec=st.tuples(*[st.floats(-1, 1)] * 3),
    dt=st.floats(0.001, 0.2),
)
def test_constant_velocity_in_rotated_frame(v, rotvec, dt):
    rot = Rotation.from_rotvec(rotvec)
    q = rot.as_quat()[[3, 0, 1, 2]]
    q /= np.linalg.norm(q)
    poses = [PoseSample(k * dt, k * dt * np.array(v), q) for k in range(6)]
    want = rot.inv().apply(v)
    for r in poses_to_velocity(poses):
        np.testing.assert_allclose(r.linear, want, atol=1e-9)
        np.testing.assert_allclose(r.angular, 0, atol=1e-9)


def test_yaw_rate_from_uniform_rotation():
    t = np.arange(91) * 0.1  # 10 Hz over 9 s
    poses = [PoseSample(tk, np.zeros(3), _q_axis([0, 0, 1], math.radians(10 * tk))) for tk in t]
    for r in poses_to_velocity(poses):
        assert r.angular[2] == pytest.approx(10.0, abs=0.1)
        assert abs(r.angular[0]) < 1e-9 and abs(r.angular[1]) < 1e-9


@pytest.mark.parametrize("axis,idx", [([1, 0, 0], 0), ([0, 1, 0], 1)])
def test_roll_and_pitch_rates(axis, idx):
    poses = [PoseSample(0.05 * k, np.zeros(3), _q_axis(axis, math.radians(4.0 * 0.05 * k))) for k in range(20)]
    for r in poses_to_velocity(poses):
        assert r.angular[idx] == pytest.approx(4.0, abs=1e-6)


def test_euler_rates_match_angle_differences():
    rng = np.random.default_rng(0)
    r0 = Rotation.from_euler("ZYX", [0.3, -0.4, 0.2])
    omega = rng.normal(size=3) * 0.5
    h = 1e-6
    ang = lambda tt: (r0 * Rotation.from_rotvec(omega * tt)).as_euler("ZYX")[::-1]  # roll, pitch, yaw
    num = (ang(h) - ang(-h)) / (2 * h)
    roll, pitch, _ = ang(0.0)
    np.testing.assert_allclose(body_rate_to_euler_rates(omega, roll, pitch), num, atol=1e-7)


def test_pose_errors():
    q = np.array([1.0, 0, 0, 0])
    with pytest.raises(ValueError):
        poses_to_velocity([PoseSample(0, np.zeros(3), q), PoseSample(1, np.zeros(3), q)])
    with pytest.raises(ValueError):
        poses_to_velocity([PoseSample(t, np.zeros(3), q) for t in (0, 1, 1, 2)])
    with pytest.raises(ValueError):
        PoseSample(0.0, np.zeros(3), np.array([1.0, 1.0, 0, 0]))


def test_pose_csv_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    poses = []
    for k in range(7):
        q = rng.normal(size=4)
        poses.append(PoseSample(0.01 * k, rng.normal(size=3), q / np.linalg.norm(q)))
    write_poses_csv(poses, tmp_path / "p.csv")
    back = read_poses_csv(tmp_path / "p.csv")
    for a, b in zip(poses, back):
        assert a.t == b.t
        np.testing.assert_array_equal(a.position, b.position)
        np.testing.assert_array_equal(a.orientation, b.orientation)
    (tmp_path / "bad.csv").write_text("t_s,px\n0.0,abc\n")
    with pytest.raises(ValueError):
        read_poses_csv(tmp_path / "bad.csv")


# -- synthetic camera ------------------------------------------------------------------

SMALL = dict(sensor_h=16, sensor_w=16, focal=15.0)


def test_static_camera_emits_nothing():
    clip = gen_synthetic_events(SyntheticSceneSpec(**SMALL), 0.02, seed=0)
    assert len(clip.events) == 0
    assert all(np.all(v.linear == 0) and np.all(v.angular == 0) for v in clip.velocities)


def test_forward_translation_ground_truth():
    scene = SyntheticSceneSpec(**SMALL, trajectory=Trajectory((0.0, 0.0, 1.0)))
    clip = gen_synthetic_events(scene, 0.02, seed=0)
    for v in clip.velocities:
        np.testing.assert_allclose(v.linear, [0, 0, 1], atol=1e-12)
        np.testing.assert_allclose(v.angular, 0, atol=1e-12)


def test_yaw_fires_periphery_more_than_center():
    scene = SyntheticSceneSpec(trajectory=Trajectory(body_rate=(0.0, 0.0, math.radians(10.0))))
    ev = gen_synthetic_events(scene, 0.5, seed=1).events
    r = np.hypot(ev["x"] - 31.5, ev["y"] - 31.5)
    yy, xx = np.mgrid[0:64, 0:64]
    area_c = np.sum(np.hypot(xx - 31.5, yy - 31.5) < 16)
    rate_center = np.sum(r < 16) / area_c
    rate_edge = np.sum(r >= 16) / (64 * 64 - area_c)
    assert rate_edge > rate_center


def test_events_match_intensity_change():
    traj = Trajectory((0.4, -0.3, 0.2), (0.05, -0.1, 0.2), (1.0, 2.0, 0.0))
    scene = SyntheticSceneSpec(**SMALL, trajectory=traj)
    dur = 0.05
    clip = gen_synthetic_events(scene, dur, seed=4)
    tex = make_texture(scene, np.random.default_rng(4))
    delta = render_log_intensity(scene, tex, dur) - render_log_intensity(scene, tex, 0.0)
    net = np.zeros((16, 16))
    np.add.at(net, (clip.events["y"].astype(int), clip.events["x"].astype(int)), clip.events["p"])
    assert np.all(np.abs(delta - scene.contrast_threshold * net) < scene.contrast_threshold + 1e-9)
    assert len(clip.events) > 0


def test_event_stream_is_sorted_and_shares_the_pose_clock():
    scene = SyntheticSceneSpec(**SMALL, trajectory=Trajectory((0.5, 0.2, 0.0)))
    clip = gen_synthetic_events(scene, 0.05, seed=2)
    t = clip.events["t"].astype(np.int64)
    assert np.all(np.diff(t) >= 0)
    assert t[0] >= 0 and t[-1] <= 50_000
    assert clip.poses[0].t == 0.0 and clip.poses[-1].t == pytest.approx(0.05)
    assert all(abs(np.linalg.norm(p.orientation) - 1) < 1e-9 for p in clip.poses)


def test_generation_is_byte_identical(tmp_path):
    scene = SyntheticSceneSpec(**SMALL, trajectory=Trajectory((0.5, -0.5, 0.1), (0.1, 0.0, 0.0)))
    for name in ("a", "b"):
        save_events(gen_synthetic_events(scene, 0.03, seed=5).events, tmp_path / name)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_degenerate_geometry():
    scene = SyntheticSceneSpec(**SMALL, trajectory=Trajectory(position0=(0.0, 0.0, 2.0)))
    with pytest.raises(DegenerateGeometryError):
        gen_synthetic_events(scene, 0.01)
    with pytest.raises(ValueError):
        SyntheticSceneSpec(focal=0.0)


def test_pose_differentiation_agrees_with_analytic_ground_truth():
    traj = Trajectory((0.3, 0.6, -0.2), (0.1, -0.05, 0.15))
    clip = gen_synthetic_events(SyntheticSceneSpec(**SMALL, trajectory=traj), 0.05, seed=0)
    est = poses_to_velocity(clip.poses)
    for e, g in list(zip(est, clip.velocities))[1:-1]:
        np.testing.assert_allclose(e.linear, g.linear, atol=1e-3)
        np.testing.assert_allclose(e.angular, g.angular, atol=1e-2)


# -- velocity dataset ----------------------------------------------------------------


def test_label_times_are_bin_midpoints_of_last_window():
    w = WindowSpec(0.05, 5, 5)
    np.testing.assert_allclose(label_times(w), 0.2 + (np.arange(5) + 0.5) * 0.01)


def test_make_clip_labels_follow_trajectory():
    spec = VelocityDatasetSpec(n_train=1, n_val=0, window=WindowSpec(0.01, 2, 2, 16, 16))
    clip, label = make_clip(spec, seed=3)
    assert label.shape == (2, 6)
    speed = np.linalg.norm(label[:, :3], axis=1)
    assert np.all((speed >= 0.5 - 1e-9) & (speed <= 1.5 + 1e-9))
    assert np.all(np.abs(label[:, 3:]) < 5.0 * 1.01)


def test_dataset_round_trip(tmp_path):
    spec = VelocityDatasetSpec(n_train=2, n_val=1, window=WindowSpec(0.01, 2, 2, 16, 16))
    write_velocity_dataset(spec, 7, tmp_path)
    m = read_manifest(tmp_path)
    assert [c["split"] for c in m["clips"]] == ["train", "train", "val"]
    ds = load_velocity_dataset(tmp_path)
    assert ds.inputs.shape == (2, 3, 4, 16, 16)
    assert ds.labels.shape == (3, 2, 6)
    x, y = ds.subset("val")
    assert x.shape[1] == 1 and y.shape[0] == 1
    first = (tmp_path / "manifest.json").read_bytes()
    write_velocity_dataset(spec, 7, tmp_path / "again")
    assert (tmp_path / "again" / "manifest.json").read_bytes() == first
    assert json.loads(first)["seed"] == 7


# -- augmentation ----------------------------------------------------------------------


def test_horizontal_flip_matches_mirrored_world():
    """Flipping image columns is the same as mirroring the scene along camera x."""
    traj = Trajectory((0.4, -0.7, 0.3), (0.05, 0.08, -0.06), (1.3, 0.7, 0.0))
    mirror = Trajectory((-0.4, -0.7, 0.3), (0.05, -0.08, 0.06), (-1.3, 0.7, 0.0))
    scene = SyntheticSceneSpec(**SMALL, trajectory=traj)
    scene_m = SyntheticSceneSpec(**SMALL, trajectory=mirror)
    tex = make_texture(scene, np.random.default_rng(0))
    tex_m = tex[:, (-np.arange(tex.shape[1])) % tex.shape[1]]
    for t in (0.0, 0.1, 0.2):
        np.testing.assert_allclose(
            render_log_intensity(scene_m, tex_m, t), render_log_intensity(scene, tex, t)[:, ::-1], atol=1e-9
        )
    # the label transform applied by the augmentation
    label = np.stack([traj.velocity(t).as_vector() for t in (0.1, 0.2)])[None]
    want = np.stack([mirror.velocity(t).as_vector() for t in (0.1, 0.2)])[None]
    x = np.zeros((1, 1, 1, 4, 4))
    x[..., 0, 0] = 1

    class FlipOnlyW:
        calls = 0

        def random(self):
            FlipOnlyW.calls += 1
            return 0.0 if FlipOnlyW.calls == 1 else 1.0

    xa, ya = dihedral_augment(x, label, FlipOnlyW())
    assert xa[0, 0, 0, 0, 3] == 1
    np.testing.assert_allclose(ya[..., :3], want[..., :3], atol=1e-12)
    np.testing.assert_allclose(ya[..., 3:], want[..., 3:], atol=1e-3)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_augmentation_preserves_speed_and_binarity(seed):
    rng = np.random.default_rng(seed)
    x = (rng.random((2, 3, 2, 6, 6)) < 0.3).astype(np.uint8)
    y = rng.normal(size=(3, 2, 6))
    xa, ya = dihedral_augment(x, y, rng)
    np.testing.assert_allclose(np.linalg.norm(ya[..., :3], axis=-1), np.linalg.norm(y[..., :3], axis=-1))
    np.testing.assert_allclose(np.linalg.norm(ya[..., 3:], axis=-1), np.linalg.norm(y[..., 3:], axis=-1))
    assert xa.sum() == x.sum() and set(np.unique(xa)) <= {0, 1}
