"""Error metrics and firing-frequency analysis."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from .neuron import NeuronParams, simulate


def _as_rows(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a[:, None] if a.ndim == 1 else a.reshape(len(a), -1)


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p, g = _as_rows(pred), _as_rows(gt)
    if len(g) == 0:
        raise ValueError("metrics need at least one sample")
    if p.shape != g.shape:
        raise ValueError(f"prediction shape {p.shape} != ground truth shape {g.shape}")
    return p, g


def rmse(pred, gt) -> float:
    """sqrt(mean_i ||gt_i - pred_i||^2); samples run along the first axis."""
    p, g = _pair(pred, gt)
    return float(np.sqrt(np.mean(np.sum((g - p) ** 2, axis=1))))


def relative_error(pred, gt, eps: float = 1e-6) -> float:
    """mean_i ||gt_i - pred_i|| / max(||gt_i||, eps)."""
    p, g = _pair(pred, gt)
    num = np.linalg.norm(g - p, axis=1)
    den = np.maximum(np.linalg.norm(g, axis=1), eps)
    return float(np.mean(num / den))


def rmse_dagger(pred, gt) -> float:
    """RMSE x 10^3, the convention used for the sine regression tables."""
    return 1000.0 * rmse(pred, gt)


@dataclass
class MetricReport:
    rmse: dict[str, float]
    re: dict[str, float]
    rmse_dagger: dict[str, float]
    rmse_star_angular: float | None
    n_samples: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def metric_report(pred: dict[str, np.ndarray], gt: dict[str, np.ndarray], eps: float = 1e-6) -> MetricReport:
    """Metrics for each named quantity (e.g. ``linear`` / ``angular``)."""
    r = {k: rmse(pred[k], gt[k]) for k in gt}
    re = {k: relative_error(pred[k], gt[k], eps) for k in gt}
    star = 100.0 * r["angular"] if "angular" in r else None
    n = len(_as_rows(next(iter(gt.values()))))
    return MetricReport(r, re, {k: 1000.0 * v for k, v in r.items()}, star, n)


@dataclass
class FiringProfile:
    kind: str
    counts: np.ndarray  # spikes per neuron over the window
    rate: float  # mean spikes per step
    isi_hist: np.ndarray  # counts of inter-spike intervals 1, 2, ...
    spikes: np.ndarray  # (steps, n) spike raster
    potentials: np.ndarray  # (steps, n)

    def isi_mode(self) -> int | None:
        if self.isi_hist.sum() == 0:
            return None
        return int(np.argmax(self.isi_hist)) + 1


def firing_profile(
    kind: Literal["lif", "alif"],
    params: NeuronParams,
    current: np.ndarray,
) -> FiringProfile:
    """Simulate ``kind`` on a ``(steps,)`` or ``(steps, n)`` current trace."""
    current = np.asarray(current, dtype=np.float64)
    if not np.all(np.isfinite(current)):
        raise ValueError("current trace must be finite")
    vs, ss = simulate(kind, current, params)
    steps = len(ss)
    isis = []
    for col in ss.T:
        t = np.flatnonzero(col)
        isis.extend(np.diff(t).tolist())
    hist = np.bincount(np.asarray(isis, dtype=int), minlength=steps + 1)[1:] if isis else np.zeros(steps, int)
    return FiringProfile(kind, ss.sum(axis=0), float(ss.mean()), hist, ss, vs)


def write_profile_csv(profile: FiringProfile, path: Path) -> None:
    """Long-format raster: ``step,neuron_id,spike``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "neuron_id", "spike"])
        for t, row in enumerate(profile.spikes):
            for j, s in enumerate(row):
                w.writerow([t, j, int(s)])
