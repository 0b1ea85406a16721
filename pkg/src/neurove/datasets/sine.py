"""Phase-shifted sine sequences for regression and closed-loop forecasting."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class SineDatasetSpec:
    num_sequences: int = 100
    train_count: int = 97
    val_count: int = 3
    steps: int = 1000
    forecast_steps: int = 1000
    x_step: float = 2 * np.pi / 100

    def __post_init__(self):
        if self.train_count + self.val_count != self.num_sequences:
            raise ValueError("train_count + val_count must equal num_sequences")
        if self.steps <= 0 or self.forecast_steps < 0:
            raise ValueError("steps must be positive")

    @property
    def length(self) -> int:
        return self.steps + self.forecast_steps


@dataclass
class SineDataset:
    spec: SineDatasetSpec
    phases: np.ndarray  # (num_sequences,)
    values: np.ndarray  # (num_sequences, steps + forecast_steps)
    train_idx: np.ndarray
    val_idx: np.ndarray

    @property
    def train(self) -> np.ndarray:
        return self.values[self.train_idx]

    @property
    def val(self) -> np.ndarray:
        return self.values[self.val_idx]


def gen_sine_dataset(spec: SineDatasetSpec = SineDatasetSpec(), seed: int = 0) -> SineDataset:
    """Draw ``num_sequences`` curves ``sin(k * x_step + d_i)`` with d_i ~ U[0, 2pi).

    The model input at step k is ``y[k]`` and its target ``y[k + 1]``.
    """
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2 * np.pi, size=spec.num_sequences)
    k = np.arange(spec.length)
    values = np.sin(k[None, :] * spec.x_step + phases[:, None])
    order = rng.permutation(spec.num_sequences)
    train_idx = np.sort(order[: spec.train_count])
    val_idx = np.sort(order[spec.train_count :])
    return SineDataset(spec, phases, values, train_idx, val_idx)


def write_sine_dataset(ds: SineDataset, out_dir: Path) -> list[Path]:
    """One CSV per sequence (``step,value``) plus ``split.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i, row in enumerate(ds.values):
        path = out_dir / f"seq_{i:03d}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "value"])
            for k, y in enumerate(row):
                w.writerow([k, repr(float(y))])
        written.append(path)
    split = out_dir / "split.csv"
    val = set(ds.val_idx.tolist())
    with open(split, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sequence", "phase", "split"])
        for i, d in enumerate(ds.phases):
            w.writerow([f"seq_{i:03d}.csv", repr(float(d)), "val" if i in val else "train"])
    written.append(split)
    return written


def read_sine_dataset(data_dir: Path, spec: SineDatasetSpec | None = None) -> SineDataset:
    data_dir = Path(data_dir)
    names, phases, splits = [], [], []
    with open(data_dir / "split.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            names.append(row["sequence"])
            phases.append(float(row["phase"]))
            splits.append(row["split"])
    values = []
    for name in names:
        with open(data_dir / name, newline="") as fh:
            values.append([float(r["value"]) for r in csv.DictReader(fh)])
    values = np.array(values)
    splits = np.array(splits)
    train_idx = np.flatnonzero(splits == "train")
    val_idx = np.flatnonzero(splits == "val")
    if spec is None:
        steps = values.shape[1] // 2
        spec = SineDatasetSpec(
            num_sequences=len(names),
            train_count=len(train_idx),
            val_count=len(val_idx),
            steps=steps,
            forecast_steps=values.shape[1] - steps,
        )
    return SineDataset(spec, np.array(phases), values, train_idx, val_idx)
