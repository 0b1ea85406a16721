"""Train / evaluate the stacked ASLSTM regressor on the sine task.

Training is teacher forced with truncated BPTT: each batch walks the known
``steps`` values in chunks of ``chunk`` steps, carrying the (detached) state
across chunk boundaries. The first ``washout`` predictions of every sequence
are excluded from loss and metrics while the state settles from zero.

Evaluation runs the same teacher-forced pass on the held-out sequences
(fit phase), then keeps going closed loop for ``forecast_steps`` steps, each
step consuming the previous prediction (forecast phase).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from ..datasets.sine import SineDataset
from ..metrics import rmse
from ..neuron import SurrogateSpec
from ..recurrent import ASLSTMRegressor
from .optim import Adam, AdamConfig, clip_global_norm

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, msg: str, tail: list[float]):
        super().__init__(msg)
        self.tail = tail


@dataclass
class SineTrainConfig:
    hidden_dim: int = 32
    n_layers: int = 2
    alpha: float = 0.9
    v_th: float = 2.0
    diffusion_d: float = 0.5
    kappa: float = 0.5
    surrogate_kind: str = "rectangular"
    surrogate_width: float = 1.0
    use_bias: bool = False
    baseline: str = "aslstm"
    lr: float = 3e-3
    cosine: bool = True
    epochs: int = 200
    batch: int = 97
    chunk: int = 50
    washout: int = 10
    clip_norm: float = 5.0
    eval_every: int = 5
    patience: int = 0  # evaluations without improvement before stopping; 0 disables
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.epochs < 0 or self.batch < 1 or self.chunk < 1 or self.eval_every < 1:
            raise ValueError("epochs/batch/chunk/eval_every out of range")
        if self.baseline not in ("aslstm", "slstm"):
            raise ValueError(f"unknown baseline {self.baseline!r}")


def build_regressor(cfg: SineTrainConfig) -> ASLSTMRegressor:
    return ASLSTMRegressor(
        input_dim=1,
        hidden_dim=cfg.hidden_dim,
        output_dim=1,
        n_layers=cfg.n_layers,
        seed=cfg.seed,
        alpha=cfg.alpha,
        v_th=cfg.v_th,
        diffusion_d=cfg.diffusion_d,
        kappa=cfg.kappa,
        surrogate=SurrogateSpec(cfg.surrogate_kind, cfg.surrogate_width),
        use_bias=cfg.use_bias,
        baseline=cfg.baseline,
    )


@dataclass
class SineEval:
    fit_rmse: list[float]
    forecast_rmse: list[float]
    fit_pred: np.ndarray  # (steps - 1, N): predictions of y[1 .. steps-1]
    forecast_pred: np.ndarray  # (forecast_steps, N): predictions of y[steps ..]
    rates: list[float]
    fit_rates: list[float] = field(default_factory=list)

    @property
    def score(self) -> float:
        return float(np.mean(self.fit_rmse) + np.mean(self.forecast_rmse))


def evaluate_sine(model: ASLSTMRegressor, values: np.ndarray, steps: int, washout: int = 10) -> SineEval:
    """``values`` is ``(N, total_len)``; the first ``steps`` are known."""
    seq = values.T[:, :, None]
    n_fc = seq.shape[0] - steps
    outs, st, fit_rates = model.run(seq[:steps])
    pred = np.stack(outs)[:, :, 0]  # pred[k] predicts y[k + 1]
    fit = [rmse(pred[washout : steps - 1, j], seq[washout + 1 : steps, j, 0]) for j in range(seq.shape[1])]
    fc = [pred[steps - 1]]
    y = outs[-1]
    fired = np.zeros(len(model.layers))
    for _ in range(n_fc - 1):
        y, st, spikes = model.step(y, st)
        fc.append(y[:, 0])
        fired += [s.mean() for s in spikes]
    fc = np.stack(fc)
    fc_rmse = [rmse(fc[:, j], seq[steps:, j, 0]) for j in range(seq.shape[1])] if n_fc else []
    total_rates = (fit_rates * steps + fired) / max(steps + n_fc - 1, 1)
    return SineEval(fit, fc_rmse, pred[: steps - 1], fc, total_rates.tolist(), list(map(float, fit_rates)))


def write_curve_csv(ev: SineEval, values: np.ndarray, steps: int, path: Path, seq: int = 0) -> None:
    """``step,gt,pred,phase`` over the whole horizon for one sequence."""
    gt = values[seq]
    pred = np.concatenate([[np.nan], ev.fit_pred[:, seq], ev.forecast_pred[:, seq]])
    with open(path, "w") as fh:
        fh.write("step,gt,pred,phase\n")
        for k in range(len(gt)):
            fh.write(f"{k},{gt[k]!r},{pred[k]!r},{'fit' if k < steps else 'forecast'}\n")


# -- checkpoints ------------------------------------------------------------------


def sine_checkpoint(model: ASLSTMRegressor, cfg: SineTrainConfig, opt: Adam | None = None, meta: dict | None = None) -> Checkpoint:
    tensors = {k: p.data for k, p in model.parameters().items()}
    if opt is not None:
        tensors.update(opt.state_arrays())
    meta = dict(meta or {})
    if opt is not None:
        meta["adam_step"] = opt.cfg.step
    return Checkpoint("sine", asdict(cfg), tensors, meta)


def load_sine_model(path) -> tuple[ASLSTMRegressor, SineTrainConfig, Checkpoint]:
    ck = load_checkpoint(path)
    if ck.kind != "sine":
        raise ValueError(f"{path} holds a {ck.kind!r} checkpoint, not a sine model")
    cfg = SineTrainConfig(**ck.config)
    model = build_regressor(cfg)
    for k, p in model.parameters().items():
        if k not in ck.tensors:
            raise KeyError(f"checkpoint lacks {k}")
        p.data[...] = ck.tensors[k]
    return model, cfg, ck


# -- training -----------------------------------------------------------------------


@dataclass
class SineTrainReport:
    epochs_run: int
    best_epoch: int | None
    best: dict | None
    final_rates: list[float]
    stopped_early: bool
    history: list[dict]


def _lr_at(cfg: SineTrainConfig, epoch: int) -> float:
    if not cfg.cosine or cfg.epochs == 0:
        return cfg.lr
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))


def train_epoch(model, opt, params, train: np.ndarray, cfg: SineTrainConfig, steps: int, lr: float, rng) -> tuple[float, float, list[float]]:
    """One pass over the training sequences; returns (mean loss, last grad norm, rates)."""
    n = train.shape[0]
    order = rng.permutation(n) if cfg.batch < n else np.arange(n)
    tot, cnt, gn = 0.0, 0, 0.0
    rates = np.zeros(len(model.layers))
    n_rate = 0
    names = list(params)
    for b0 in range(0, n, cfg.batch):
        seq = train[order[b0 : b0 + cfg.batch]].T[:, :, None]
        st = None
        for k0 in range(0, steps - 1, cfg.chunk):
            k1 = min(k0 + cfg.chunk, steps - 1)
            w0 = max(0, cfg.washout - k0)
            with ad.Tape() as tape:
                outs, st2, r = model.run(seq[k0:k1], st)
                if w0 >= len(outs):
                    loss = None
                else:
                    pred = ad.stack(outs[w0:])
                    loss = ad.mean(ad.square(pred - seq[k0 + 1 + w0 : k1 + 1]))
            st = [s.detached() for s in st2]
            rates += r
            n_rate += 1
            if loss is None:
                continue
            lv = float(ad.value(loss))
            if not np.isfinite(lv):
                raise TrainingDiverged(f"loss became {lv}", [lv])
            grads = dict(zip(names, tape.backward(loss, [params[k] for k in names])))
            grads, gn = clip_global_norm(grads, cfg.clip_norm)
            opt.step({k: params[k].data for k in names}, grads, lr=lr)
            tot += lv
            cnt += 1
    return tot / max(cnt, 1), gn, (rates / max(n_rate, 1)).tolist()


def train_sine(
    dataset: SineDataset,
    cfg: SineTrainConfig,
    out_dir: Path | None = None,
    resume: Path | None = None,
    on_epoch=None,
) -> tuple[ASLSTMRegressor, SineTrainReport]:
    """Full training run. With ``out_dir`` set, writes ``epochs.ndjson``,
    ``last.ckpt`` (every epoch) and ``best.ckpt`` (best validation score)."""
    if len(dataset.train_idx) == 0:
        raise ValueError("training split is empty")
    steps = dataset.spec.steps
    model = build_regressor(cfg)
    params = model.parameters()
    opt = Adam(AdamConfig(lr=cfg.lr))
    rng = np.random.default_rng(cfg.seed)
    start, best_score, best_epoch, best, history, stale = 0, math.inf, None, None, [], 0
    if resume is not None:
        ck = load_checkpoint(resume)
        for k, p in params.items():
            p.data[...] = ck.tensors[k]
        opt.load_state_arrays({k: v for k, v in ck.tensors.items() if k.startswith("adam.")}, ck.meta["adam_step"])
        start = ck.meta["epoch"] + 1
        best_score = ck.meta.get("best_score")
        best_score = math.inf if best_score is None else best_score
        best_epoch = ck.meta.get("best_epoch")
        stale = ck.meta.get("stale", 0)
        rng.bit_generator.state = ck.meta["rng_state"]
    log_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "epochs.ndjson"
        if resume is None:
            log_path.write_text("")
    train = dataset.train
    val = dataset.val
    tail: list[float] = []
    stopped = False
    rates: list[float] = []
    for epoch in range(start, cfg.epochs):
        lr = _lr_at(cfg, epoch)
        loss, gn, rates = train_epoch(model, opt, params, train, cfg, steps, lr, rng)
        tail = (tail + [loss])[-10:]
        rec = {"epoch": epoch, "lr": lr, "train_loss": loss, "grad_norm": gn, "firing_rates": rates}
        evaluated = (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1
        if evaluated and len(val):
            ev = evaluate_sine(model, val, steps, cfg.washout)
            rec.update(
                val_fit_rmse=ev.fit_rmse,
                val_fit_rmse_dagger=[1000 * r for r in ev.fit_rmse],
                val_forecast_rmse=ev.forecast_rmse,
                val_score=ev.score,
                val_firing_rates=ev.rates,
            )
            finite = np.isfinite(ev.score)
            if finite and ev.score < best_score:
                best_score, best_epoch, stale = ev.score, epoch, 0
                best = {k: rec[k] for k in ("val_fit_rmse", "val_forecast_rmse", "val_score", "val_firing_rates")}
                if out_dir is not None:
                    save_checkpoint(sine_checkpoint(model, cfg, meta={"epoch": epoch, "score": ev.score}), out_dir / "best.ckpt")
            else:
                stale += 1
        history.append(rec)
        if log_path is not None:
            with open(log_path, "a") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
            meta = {
                "epoch": epoch,
                "best_score": best_score if np.isfinite(best_score) else None,
                "best_epoch": best_epoch,
                "stale": stale,
                "rng_state": rng.bit_generator.state,
            }
            save_checkpoint(sine_checkpoint(model, cfg, opt, meta), out_dir / "last.ckpt")
        if on_epoch is not None:
            on_epoch(rec)
        if cfg.patience and stale >= cfg.patience:
            log.info("validation plateau after epoch %d, stopping", epoch)
            stopped = True
            break
    report = SineTrainReport(len(history), best_epoch, best, rates, stopped, history)
    return model, report
