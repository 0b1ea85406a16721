"""Training loop for the event-camera velocity model."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..metrics import metric_report, rmse
from ..network import (
    BlockConfig,
    EstimatorConfig,
    FeatureExtractorConfig,
    NeuroVEModel,
    build_model,
    forward,
    load_model,
    save_model,
)
from ..neuron import SurrogateSpec
from .loss import LossScaleState, update_loss_scales, velocity_loss
from .optim import Adam, AdamConfig, clip_global_norm
from .sine import TrainingDiverged

log = logging.getLogger(__name__)


@dataclass
class VelocityTrainConfig:
    channels: tuple = (16, 32, 64, 128)
    kernel_size: int = 3
    stride: int = 2
    padding: int = 1
    pool: int = 2
    hidden_dim: int = 64
    n_layers: int = 1
    alpha: float = 0.9
    v_th: float = 1.0
    diffusion_d: float = 0.5
    kappa: float = 0.5
    surrogate_kind: str = "rectangular"
    surrogate_width: float = 1.0
    lr: float = 3e-3
    cosine: bool = True
    epochs: int = 60
    batch: int = 20
    clip_norm: float = 5.0
    scale_decay: float = 0.99
    dynamic_scaling: bool = True
    augment: bool = True
    normalize_targets: bool = True
    patience: int = 0
    seed: int = 0


def build_velocity_model(cfg: VelocityTrainConfig, n_bins: int, sensor_h: int, sensor_w: int) -> NeuroVEModel:
    ex = FeatureExtractorConfig(
        blocks=tuple(BlockConfig(int(c), cfg.kernel_size, cfg.stride, cfg.padding) for c in cfg.channels),
        in_channels=2 * n_bins,
        sensor_h=sensor_h,
        sensor_w=sensor_w,
        alpha=cfg.alpha,
        v_th=cfg.v_th,
        pool=cfg.pool,
    )
    est = EstimatorConfig(
        hidden_dim=cfg.hidden_dim,
        n_layers=cfg.n_layers,
        n_bins=n_bins,
        alpha=cfg.alpha,
        v_th=cfg.v_th,
        diffusion_d=cfg.diffusion_d,
        kappa=cfg.kappa,
    )
    return build_model(ex, est, cfg.seed, SurrogateSpec(cfg.surrogate_kind, cfg.surrogate_width))


def _head_part_norms(grads: dict[str, np.ndarray]) -> tuple[float, float]:
    """Gradient norms of the head columns feeding angular and linear outputs."""
    cols_a = cols_l = 0.0
    for name in ("head.proj", "head.w_x", "head.bias"):
        g = grads[name].reshape(-1, grads[name].shape[-1])
        lin = (np.arange(g.shape[1]) % 6) < 3
        cols_l += float(np.sum(g[:, lin] ** 2))
        cols_a += float(np.sum(g[:, ~lin] ** 2))
    return math.sqrt(cols_a), math.sqrt(cols_l)


def dihedral_augment(x: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random flip / transpose of each clip with the matching label transform.

    Image columns run along camera x and rows along camera y, so mirroring
    the (square) sensor is a reflection ``M`` of the camera frame. Linear
    velocity maps to ``M v``; angular rates are axial and map to
    ``det(M) M w``. Euler rates equal body rates at the identity attitude the
    clips start from, so the angular map holds to second order over a clip.
    """
    x, y = x.copy(), y.copy()
    for i in range(x.shape[1]):
        m = np.eye(3)
        if rng.random() < 0.5:
            x[:, i] = x[:, i, :, :, ::-1]
            m = np.diag([-1.0, 1.0, 1.0]) @ m
        if rng.random() < 0.5:
            x[:, i] = x[:, i, :, ::-1, :]
            m = np.diag([1.0, -1.0, 1.0]) @ m
        if x.shape[-1] == x.shape[-2] and rng.random() < 0.5:
            x[:, i] = np.swapaxes(x[:, i], -1, -2)
            m = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]) @ m
        y[i, :, :3] = y[i, :, :3] @ m.T
        y[i, :, 3:] = np.linalg.det(m) * (y[i, :, 3:] @ m.T)
    return x, y


def predict(model: NeuroVEModel, inputs: np.ndarray, batch: int = 20) -> tuple[np.ndarray, dict[str, float]]:
    """Inference over ``[T, N, C, H, W]``; returns ``[N, n, 6]`` and mean rates."""
    outs, rates, n = [], {}, inputs.shape[1]
    for b0 in range(0, n, batch):
        res = forward(model, inputs[:, b0 : b0 + batch].astype(np.float64))
        outs.append(np.asarray(ad.value(res.velocity)))
        w = min(batch, n - b0)
        for k, r in res.rates.items():
            rates[k] = rates.get(k, 0.0) + r * w / n
    vel = np.concatenate(outs) if outs else np.zeros((0, model.n_bins, 6))
    return vel, rates


def velocity_metrics(pred: np.ndarray, gt: np.ndarray, train_mean: np.ndarray | None = None) -> dict:
    p, g = pred.reshape(-1, 6), gt.reshape(-1, 6)
    rep = metric_report({"linear": p[:, :3], "angular": p[:, 3:]}, {"linear": g[:, :3], "angular": g[:, 3:]})
    out = json.loads(rep.to_json())
    speed_p, speed_g = np.linalg.norm(p[:, :3], axis=1), np.linalg.norm(g[:, :3], axis=1)
    out["speed_rel_error"] = float(np.mean(np.abs(speed_p - speed_g) / np.maximum(speed_g, 1e-6)))
    if train_mean is not None:
        base = np.broadcast_to(train_mean.reshape(-1, 6)[0], g.shape)
        out["mean_baseline_rmse"] = {"linear": rmse(base[:, :3], g[:, :3]), "angular": rmse(base[:, 3:], g[:, 3:])}
    return out


@dataclass
class VelocityTrainReport:
    epochs_run: int
    best_epoch: int | None
    best: dict | None
    history: list[dict]
    scales: dict


def train_velocity(
    inputs: np.ndarray,
    labels: np.ndarray,
    val_inputs: np.ndarray,
    val_labels: np.ndarray,
    cfg: VelocityTrainConfig,
    out_dir: Path | None = None,
    on_epoch=None,
) -> tuple[NeuroVEModel, VelocityTrainReport]:
    """``inputs`` are ``[T, N, 2n, H, W]`` spike tensors, ``labels`` ``[N, n, 6]``."""
    if inputs.shape[1] == 0:
        raise ValueError("training split is empty")
    T, N, C, H, W = inputs.shape
    n_bins = labels.shape[1]
    model = build_velocity_model(cfg, n_bins, H, W)
    train_mean = labels.reshape(-1, 6).mean(axis=0)
    if cfg.normalize_targets:
        model.output_scale[...] = np.maximum(labels.reshape(-1, 6).std(axis=0), 1e-3)
    params = model.parameters()
    names = list(params)
    opt = Adam(AdamConfig(lr=cfg.lr))
    rng = np.random.default_rng(cfg.seed)
    scale = LossScaleState(decay=cfg.scale_decay)
    best_score, best_epoch, best, stale = math.inf, None, None, 0
    history = []
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "epochs.ndjson").write_text("")
    for epoch in range(cfg.epochs):
        lr = cfg.lr * (0.5 * (1 + math.cos(math.pi * epoch / cfg.epochs)) if cfg.cosine else 1.0)
        order = rng.permutation(N)
        tot = la_tot = ll_tot = 0.0
        nb = 0
        rates: dict[str, float] = {}
        for b0 in range(0, N, cfg.batch):
            idx = order[b0 : b0 + cfg.batch]
            x, target = inputs[:, idx].astype(np.float64), labels[idx]
            if cfg.augment:
                x, target = dihedral_augment(x, target, rng)
            with ad.Tape() as tape:
                res = forward(model, x, training=True)
                lo = velocity_loss(res.velocity, target, scale)
            lv = float(ad.value(lo.total))
            if not np.isfinite(lv):
                raise TrainingDiverged(f"loss became {lv}", [lv])
            grads = dict(zip(names, tape.backward(lo.total, [params[k] for k in names])))
            if cfg.dynamic_scaling:
                ga, gl = _head_part_norms(grads)
                scale = update_loss_scales(scale, ga / scale.scale_a, gl / scale.scale_l)
            grads, gn = clip_global_norm(grads, cfg.clip_norm)
            opt.step({k: params[k].data for k in names}, grads, lr=lr)
            tot += lv
            la_tot += lo.angular
            ll_tot += lo.linear
            nb += 1
            for k, r in res.rates.items():
                rates[k] = rates.get(k, 0.0) + r
        rec = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": tot / nb,
            "train_loss_angular": la_tot / nb,
            "train_loss_linear": ll_tot / nb,
            "scale_a": scale.scale_a,
            "scale_l": scale.scale_l,
            "firing_rates": {k: v / nb for k, v in sorted(rates.items())},
        }
        if val_inputs.shape[1]:
            pred, vrates = predict(model, val_inputs, cfg.batch)
            m = velocity_metrics(pred, val_labels, train_mean)
            score = m["rmse"]["linear"] / max(m["mean_baseline_rmse"]["linear"], 1e-12) + m["rmse"]["angular"] / max(
                m["mean_baseline_rmse"]["angular"], 1e-12
            )
            rec.update(val=m, val_score=score, val_firing_rates=vrates)
            if score < best_score:
                best_score, best_epoch, stale = score, epoch, 0
                best = {"val": m, "val_score": score}
                if out_dir is not None:
                    save_model(model, out_dir / "best.ckpt", meta={"epoch": epoch, "score": score, "train_mean": train_mean.tolist()})
            else:
                stale += 1
        history.append(rec)
        if out_dir is not None:
            with open(out_dir / "epochs.ndjson", "a") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
            save_model(model, out_dir / "last.ckpt", meta={"epoch": epoch, "train_mean": train_mean.tolist()})
        if on_epoch is not None:
            on_epoch(rec)
        if cfg.patience and stale >= cfg.patience:
            break
    return model, VelocityTrainReport(len(history), best_epoch, best, history, asdict(scale))


def load_best(out_dir: Path) -> NeuroVEModel:
    model, _ = load_model(Path(out_dir) / "best.ckpt")
    return model
