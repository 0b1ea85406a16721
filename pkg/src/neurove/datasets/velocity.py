"""Synthetic velocity-estimation dataset built from rendered event clips.

Each clip covers ``t_steps`` windows. Its label has one row per chronological
bin of the final window: row ``j`` is the ground-truth velocity at the middle
of bin ``j``. On disk a dataset directory holds, per clip, an event file and a
pose CSV, plus ``manifest.json`` listing clips, labels and split.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..encoding import WindowSpec, encode_events, load_events, save_events
from .poses import read_poses_csv, write_poses_csv
from .synthetic import SyntheticSceneSpec, Trajectory, gen_synthetic_events

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class VelocityDatasetSpec:
    n_train: int = 200
    n_val: int = 20
    speed_range: tuple[float, float] = (0.5, 1.5)  # m/s
    max_forward: float = 0.8  # cap on |z| share of the unit direction
    max_rate_deg: float = 5.0  # per-axis body rate bound, deg/s
    window: WindowSpec = WindowSpec()

    @property
    def duration(self) -> float:
        return self.window.t_steps * self.window.window_duration


@dataclass
class VelocityDataset:
    inputs: np.ndarray  # [T, N, 2n, H, W] uint8
    labels: np.ndarray  # [N, n, 6]
    split: list[str]  # "train" / "val" per clip
    clip_ids: list[str]

    def subset(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        idx = [i for i, s in enumerate(self.split) if s == which]
        return self.inputs[:, idx], self.labels[idx]


def clip_trajectory(rng: np.random.Generator, spec: VelocityDatasetSpec) -> Trajectory:
    """Random direction (forward share capped), random speed and body rates,
    random start offset over the texture."""
    while True:
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        if abs(d[2]) <= spec.max_forward:
            break
    speed = rng.uniform(*spec.speed_range)
    rate = np.radians(rng.uniform(-spec.max_rate_deg, spec.max_rate_deg, size=3))
    start = (rng.uniform(0, 8), rng.uniform(0, 8), 0.0)
    return Trajectory(tuple(speed * d), tuple(rate), start)


def label_times(window: WindowSpec) -> np.ndarray:
    """Mid-times (s) of the bins of the final window."""
    bin_d = window.window_duration / window.n_bins
    t_last = (window.t_steps - 1) * window.window_duration
    return t_last + (np.arange(window.n_bins) + 0.5) * bin_d


def make_clip(spec: VelocityDatasetSpec, seed: int, scene: SyntheticSceneSpec | None = None):
    """Render one clip; returns (events, poses, label [n, 6])."""
    rng = np.random.default_rng(seed)
    traj = clip_trajectory(rng, spec)
    w = spec.window
    base = scene or SyntheticSceneSpec(sensor_h=w.sensor_h, sensor_w=w.sensor_w)
    scene = SyntheticSceneSpec(**{**_scene_fields(base), "trajectory": traj})
    clip = gen_synthetic_events(scene, spec.duration, seed=seed)
    label = np.stack([traj.velocity(t).as_vector() for t in label_times(w)])
    return clip, label


def _scene_fields(scene: SyntheticSceneSpec) -> dict:
    return {k: getattr(scene, k) for k in scene.__dataclass_fields__}


def build_velocity_dataset(spec: VelocityDatasetSpec = VelocityDatasetSpec(), seed: int = 0) -> VelocityDataset:
    """In-memory dataset; clip ``i`` uses seed ``seed * 100003 + i``."""
    n = spec.n_train + spec.n_val
    xs, ys, ids = [], [], []
    for i in range(n):
        clip, label = make_clip(spec, seed * 100003 + i)
        xs.append(encode_events(clip.events, spec.window, t0=0))
        ys.append(label)
        ids.append(f"clip_{i:04d}")
    split = ["train"] * spec.n_train + ["val"] * spec.n_val
    return VelocityDataset(np.concatenate(xs, axis=1), np.stack(ys), split, ids)


def _render(args):
    spec, clip_seed = args
    return make_clip(spec, clip_seed)


def write_velocity_dataset(
    spec: VelocityDatasetSpec, seed: int, out_dir: Path, event_format: str = "binary", workers: int = 1
) -> Path:
    """Render every clip to disk and write the manifest last.

    Clips are independent, so ``workers > 1`` renders them in a process pool;
    the output bytes do not depend on the worker count.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clips = []
    ext = "evt" if event_format == "binary" else "txt"
    jobs = [(spec, seed * 100003 + i) for i in range(spec.n_train + spec.n_val)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            rendered = list(pool.map(_render, jobs))
    else:
        rendered = map(_render, jobs)
    for i, (clip, label) in enumerate(rendered):
        cid = f"clip_{i:04d}"
        save_events(clip.events, out_dir / f"{cid}.{ext}", event_format)
        write_poses_csv(clip.poses, out_dir / f"{cid}_poses.csv")
        clips.append(
            {
                "id": cid,
                "events": f"{cid}.{ext}",
                "poses": f"{cid}_poses.csv",
                "split": "train" if i < spec.n_train else "val",
                "n_events": int(len(clip.events)),
                "label": label.tolist(),
            }
        )
    manifest = {
        "version": MANIFEST_VERSION,
        "kind": "synthetic-events",
        "seed": seed,
        "spec": asdict(spec),
        "clips": clips,
    }
    tmp = out_dir / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=1))
    os.replace(tmp, out_dir / "manifest.json")
    return out_dir / "manifest.json"


def read_manifest(path: Path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    m = json.loads(path.read_text())
    if m.get("version") != MANIFEST_VERSION:
        raise ValueError(f"{path}: unsupported manifest version {m.get('version')}")
    return m


def load_velocity_dataset(path: Path) -> VelocityDataset:
    path = Path(path)
    root = path if path.is_dir() else path.parent
    m = read_manifest(path)
    w = WindowSpec(**m["spec"]["window"])
    xs, ys, split, ids = [], [], [], []
    for c in m["clips"]:
        ev = load_events(root / c["events"], height=w.sensor_h, width=w.sensor_w)
        read_poses_csv(root / c["poses"])  # validates the pose file
        xs.append(encode_events(ev, w, t0=0))
        ys.append(np.asarray(c["label"], dtype=np.float64))
        split.append(c["split"])
        ids.append(c["id"])
    return VelocityDataset(np.concatenate(xs, axis=1), np.stack(ys), split, ids)
