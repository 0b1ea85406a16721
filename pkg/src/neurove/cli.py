"""``neurove`` command-line entry point.

Commands: ``gen-data``, ``train``, ``eval``, ``predict``, ``analyze-neurons``.
Every command resolves its configuration (defaults, then ``--config`` file,
then ``--set key=value`` flags and dedicated flags), writes the resolved
config to ``<out>/config.resolved`` and only then starts computing.
"""

from __future__ import annotations

import os

# BLAS thread caps must be in place before numpy loads
_threads = os.environ.get("NEUROVE_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402
from dataclasses import asdict  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import config as C  # noqa: E402
from .checkpoint import CheckpointError, load_checkpoint  # noqa: E402
from .datasets.sine import SineDatasetSpec, gen_sine_dataset, read_sine_dataset, write_sine_dataset  # noqa: E402
from .datasets.velocity import VelocityDatasetSpec, load_velocity_dataset, write_velocity_dataset  # noqa: E402
from .encoding import EncodingError, WindowSpec, encode_events, load_events  # noqa: E402
from .metrics import firing_profile, write_profile_csv  # noqa: E402
from .neuron import NeuronParams  # noqa: E402

log = logging.getLogger("neurove")


class CommandError(RuntimeError):
    """Expected failure: reported on stderr with a nonzero exit."""


def worker_count() -> int:
    raw = os.environ.get("NEUROVE_THREADS")
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise CommandError(f"NEUROVE_THREADS must be an integer, got {raw!r}") from None


def _defaults() -> dict:
    from .training.sine import SineTrainConfig
    from .training.velocity import VelocityTrainConfig

    d = {"seed": 0}
    for k, v in C.dataclass_defaults("data.sine", SineDatasetSpec).items():
        d[k] = v
    w = WindowSpec()
    d.update(
        {
            "data.synthetic.n_train": 200,
            "data.synthetic.n_val": 20,
            "data.synthetic.speed_min": 0.5,
            "data.synthetic.speed_max": 1.5,
            "data.synthetic.max_forward": 0.8,
            "data.synthetic.max_rate_deg": 5.0,
            "data.synthetic.window_duration": w.window_duration,
            "data.synthetic.n_bins": w.n_bins,
            "data.synthetic.t_steps": w.t_steps,
            "data.synthetic.sensor_h": w.sensor_h,
            "data.synthetic.sensor_w": w.sensor_w,
            "data.synthetic.event_format": "binary",
        }
    )
    d.update({k: v for k, v in C.dataclass_defaults("sine", SineTrainConfig).items() if k != "sine.seed"})
    d.update({k: v for k, v in C.dataclass_defaults("velocity", VelocityTrainConfig).items() if k != "velocity.seed"})
    d.update(
        {
            "analyze.steps": 1000,
            "analyze.neurons": 100,
            "analyze.current_low": 0.0,
            "analyze.current_high": 0.5,
            "analyze.alpha": 0.9,
            "analyze.v_th": 1.0,
            "analyze.diffusion_d": 0.5,
        }
    )
    return d


def resolve_config(args) -> dict:
    file_layer = C.read_config(args.config) if args.config else {}
    flags = C.parse_overrides(args.set)
    if args.seed is not None:
        flags["seed"] = args.seed
    for key, attr in getattr(args, "_flag_keys", {}).items():
        val = getattr(args, attr, None)
        if val is not None:
            flags[key] = val
    return C.resolve(_defaults(), file_layer, flags)


def _prepare_out(args, cfg: dict) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        C.write_config(cfg, out / "config.resolved")
    except OSError as exc:
        raise CommandError(f"cannot write to output directory {out}: {exc}") from None
    return out


def _sine_spec(cfg: dict) -> SineDatasetSpec:
    return SineDatasetSpec(**C.section(cfg, "data.sine"))


def _velocity_spec(cfg: dict) -> VelocityDatasetSpec:
    s = C.section(cfg, "data.synthetic")
    window = WindowSpec(s["window_duration"], s["n_bins"], s["t_steps"], s["sensor_h"], s["sensor_w"])
    return VelocityDatasetSpec(
        n_train=s["n_train"],
        n_val=s["n_val"],
        speed_range=(s["speed_min"], s["speed_max"]),
        max_forward=s["max_forward"],
        max_rate_deg=s["max_rate_deg"],
        window=window,
    )


def _sine_train_cfg(cfg: dict):
    from .training.sine import SineTrainConfig

    return SineTrainConfig(**C.section(cfg, "sine"), seed=cfg["seed"])


def _velocity_train_cfg(cfg: dict):
    from .training.velocity import VelocityTrainConfig

    s = C.section(cfg, "velocity")
    s["channels"] = tuple(s["channels"])
    return VelocityTrainConfig(**s, seed=cfg["seed"])


def _write_json(obj, path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


# -- commands -----------------------------------------------------------------------


def cmd_gen_data(args, cfg: dict) -> int:
    out = _prepare_out(args, cfg)
    if args.kind == "sine":
        ds = gen_sine_dataset(_sine_spec(cfg), cfg["seed"])
        files = write_sine_dataset(ds, out)
        manifest = {
            "version": 1,
            "kind": "sine",
            "seed": cfg["seed"],
            "spec": asdict(ds.spec),
            "files": [p.name for p in files],
            "train": [int(i) for i in ds.train_idx],
            "val": [int(i) for i in ds.val_idx],
        }
        _write_json(manifest, out / "manifest.json")
        print(f"wrote {len(ds.values)} sine sequences ({len(ds.train_idx)} train / {len(ds.val_idx)} val) to {out}")
    else:
        spec = _velocity_spec(cfg)
        path = write_velocity_dataset(spec, cfg["seed"], out, cfg["data.synthetic.event_format"], workers=worker_count())
        m = json.loads(path.read_text())
        n_ev = sum(c["n_events"] for c in m["clips"])
        print(f"wrote {len(m['clips'])} clips ({spec.n_train} train / {spec.n_val} val, {n_ev} events) to {out}")
    return 0


def _load_sine_data(args, cfg: dict):
    if args.data:
        return read_sine_dataset(Path(args.data), _sine_spec(cfg))
    return gen_sine_dataset(_sine_spec(cfg), cfg["seed"])


def cmd_train(args, cfg: dict) -> int:
    from .training.sine import TrainingDiverged, train_sine

    out = _prepare_out(args, cfg)
    t0 = time.perf_counter()

    def echo(rec):
        msg = f"epoch {rec['epoch']:4d} loss {rec['train_loss']:.4e}"
        if "val_fit_rmse" in rec:
            msg += f" fit RMSE x1e3 {np.round(rec['val_fit_rmse_dagger'], 3).tolist()} forecast {np.round(rec['val_forecast_rmse'], 3).tolist()}"
        if "val_score" in rec and "val" in rec:
            msg += f" val RMSE lin {rec['val']['rmse']['linear']:.3f} ang {rec['val']['rmse']['angular']:.3f}"
        if not args.quiet:
            print(msg, flush=True)

    try:
        if args.task == "sine":
            data = _load_sine_data(args, cfg)
            tcfg = _sine_train_cfg(cfg)
            model, rep = train_sine(data, tcfg, out, resume=args.resume, on_epoch=echo)
            report = {
                "task": "sine",
                "baseline": tcfg.baseline,
                "epochs_run": rep.epochs_run,
                "best_epoch": rep.best_epoch,
                "best": rep.best,
                "final_firing_rates": rep.final_rates,
                "stopped_early": rep.stopped_early,
            }
        else:
            from .training.velocity import train_velocity

            if not args.data:
                raise CommandError("velocity training needs --data (run gen-data synthetic-events first)")
            ds = load_velocity_dataset(Path(args.data))
            x, y = ds.subset("train")
            vx, vy = ds.subset("val")
            tcfg = _velocity_train_cfg(cfg)
            model, rep = train_velocity(x, y, vx, vy, tcfg, out, on_epoch=echo)
            report = {
                "task": "velocity",
                "epochs_run": rep.epochs_run,
                "best_epoch": rep.best_epoch,
                "best": rep.best,
                "final_firing_rates": rep.history[-1]["firing_rates"] if rep.history else {},
                "loss_scales": rep.scales,
            }
    except TrainingDiverged as exc:
        tail = ", ".join(f"{v:.4g}" for v in exc.tail)
        raise CommandError(f"training diverged: {exc} (recent losses: {tail}); last good checkpoint kept in {out}") from None
    report["wall_seconds"] = round(time.perf_counter() - t0, 2)
    _write_json(report, out / "report.json")
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _checkpoint_kind(path: Path) -> str:
    try:
        return load_checkpoint(path).kind
    except CheckpointError as exc:
        raise CommandError(str(exc)) from None


def cmd_eval(args, cfg: dict) -> int:
    model_path = Path(args.model)
    kind = _checkpoint_kind(model_path)
    out = _prepare_out(args, cfg)
    if kind == "sine":
        from .training.sine import evaluate_sine, load_sine_model, write_curve_csv

        model, tcfg, _ = load_sine_model(model_path)
        data = _load_sine_data(args, cfg)
        values = data.val if args.split == "val" else data.train
        idx = data.val_idx if args.split == "val" else data.train_idx
        ev = evaluate_sine(model, values, data.spec.steps, tcfg.washout)
        for j, i in enumerate(idx):
            write_curve_csv(ev, values, data.spec.steps, out / f"curve_seq{int(i):03d}.csv", seq=j)
        report = {
            "task": "sine",
            "split": args.split,
            "sequences": [int(i) for i in idx],
            "fit": {"rmse": ev.fit_rmse, "rmse_dagger": [1000 * r for r in ev.fit_rmse]},
            "forecast": {"rmse": ev.forecast_rmse},
            "firing_rates": ev.rates,
        }
    else:
        from .network import load_model
        from .training.velocity import predict, velocity_metrics

        model, ck = load_model(model_path)
        if not args.data:
            raise CommandError("velocity eval needs --data")
        ds = load_velocity_dataset(Path(args.data))
        x, y = ds.subset(args.split)
        pred, rates = predict(model, x)
        mean = np.asarray(ck.meta.get("train_mean", np.zeros(6)))
        report = {"task": "velocity", "split": args.split, **velocity_metrics(pred, y, mean), "firing_rates": rates}
        ids = [c for c, s in zip(ds.clip_ids, ds.split) if s == args.split]
        cols = ["vx", "vy", "vz", "roll_rate", "pitch_rate", "yaw_rate"]
        with open(out / "predictions.csv", "w") as fh:
            fh.write("clip,bin," + ",".join(f"gt_{c}" for c in cols) + "," + ",".join(f"pred_{c}" for c in cols) + "\n")
            for cid, g, p in zip(ids, y, pred):
                for j in range(len(g)):
                    fh.write(f"{cid},{j}," + ",".join(repr(float(v)) for v in (*g[j], *p[j])) + "\n")
    _write_json(report, out / "metrics.json")
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_predict(args, cfg: dict) -> int:
    model_path = Path(args.model)
    kind = _checkpoint_kind(model_path)
    out = _prepare_out(args, cfg)
    if kind == "sine":
        from .training.sine import load_sine_model

        model, _, _ = load_sine_model(model_path)
        if not args.input:
            raise CommandError("sine predict needs --input (CSV with a 'value' column)")
        import csv

        with open(args.input, newline="") as fh:
            hist = np.array([float(r["value"]) for r in csv.DictReader(fh)])
        if len(hist) == 0:
            raise CommandError("input sequence is empty")
        outs, st, _ = model.run(hist[:, None, None])
        y = outs[-1]
        preds = [float(y[0, 0])]
        for _ in range(args.horizon - 1):
            y, st, _ = model.step(y, st)
            preds.append(float(y[0, 0]))
        with open(out / "forecast.csv", "w") as fh:
            fh.write("step,pred\n")
            for k, v in enumerate(preds):
                fh.write(f"{len(hist) + k},{v!r}\n")
        print(f"forecast {args.horizon} steps after {len(hist)} inputs -> {out / 'forecast.csv'}")
        return 0
    from .network import forward, load_model

    model, _ = load_model(model_path)
    if not args.input:
        raise CommandError("velocity predict needs --input (event file)")
    ecfg = model.extractor_cfg
    w = WindowSpec(cfg["data.synthetic.window_duration"], model.n_bins, cfg["data.synthetic.t_steps"], ecfg.sensor_h, ecfg.sensor_w)
    events = load_events(Path(args.input), args.format, ecfg.sensor_h, ecfg.sensor_w)
    t0 = int(events["t"][0]) if len(events) else 0
    spikes = encode_events(events, w, t0=t0).astype(np.float64)
    res = forward(model, spikes)
    recs = res.records(t0 / 1e6 + (w.t_steps - 1) * w.window_duration, w.window_duration / w.n_bins)[0]
    rows = [{"t": r.t, "bin": r.bin_index, "linear": r.linear.tolist(), "angular": r.angular.tolist()} for r in recs]
    _write_json({"velocities": rows, "firing_rates": res.rates, "n_events": int(len(events))}, out / "prediction.json")
    print(json.dumps(rows, indent=2))
    return 0


def cmd_analyze_neurons(args, cfg: dict) -> int:
    out = _prepare_out(args, cfg)
    a = C.section(cfg, "analyze")
    rng = np.random.default_rng(cfg["seed"])
    current = rng.uniform(a["current_low"], a["current_high"], size=(a["steps"], a["neurons"]))
    with open(out / "input.csv", "w") as fh:
        fh.write("step,neuron_id,current\n")
        for t, row in enumerate(current):
            for j, v in enumerate(row):
                fh.write(f"{t},{j},{v!r}\n")
    summary = {"seed": cfg["seed"], "steps": a["steps"], "neurons": a["neurons"]}
    for kind in ("lif", "alif"):
        params = NeuronParams(alpha=a["alpha"], v_th=a["v_th"], diffusion_d=a["diffusion_d"] if kind == "alif" else 0.0)
        prof = firing_profile(kind, params, current)
        write_profile_csv(prof, out / f"{kind}.csv")
        summary[f"{kind}_rate"] = prof.rate
        summary[f"{kind}_isi_mode"] = prof.isi_mode()
    _write_json(summary, out / "summary.json")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' config file")
    common.add_argument("--seed", type=int, help="global seed (overrides config)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    common.add_argument("-q", "--quiet", action="store_true")

    p = argparse.ArgumentParser(prog="neurove", description="Spiking time-series and event-camera velocity toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="generate a dataset")
    g.add_argument("kind", choices=["sine", "synthetic-events"])

    t = sub.add_parser("train", parents=[common], help="train a model")
    t.add_argument("task", choices=["sine", "velocity"])
    t.add_argument("--data", help="dataset directory (sine data is generated from the config when omitted)")
    t.add_argument("--baseline", choices=["aslstm", "slstm"], help="sine model kind")
    t.add_argument("--epochs", type=int)
    t.add_argument("--resume", help="continue from a last.ckpt")
    t.set_defaults(_flag_keys=None)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("--model", required=True)
    e.add_argument("--data")
    e.add_argument("--split", choices=["train", "val"], default="val")

    r = sub.add_parser("predict", parents=[common], help="run a checkpoint on new input")
    r.add_argument("--model", required=True)
    r.add_argument("--input", help="event file (velocity) or sequence CSV (sine)")
    r.add_argument("--format", choices=["text", "binary"], help="event file format (sniffed by default)")
    r.add_argument("--horizon", type=int, default=1000, help="closed-loop forecast length (sine)")

    sub.add_parser("analyze-neurons", parents=[common], help="LIF vs ALIF firing profiles")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "train":
        task = args.task
        args._flag_keys = {f"{task}.epochs": "epochs"}
        if args.baseline:
            if task != "sine":
                parser.error("--baseline applies to the sine task")
            args._flag_keys["sine.baseline"] = "baseline"
    handlers = {
        "gen-data": cmd_gen_data,
        "train": cmd_train,
        "eval": cmd_eval,
        "predict": cmd_predict,
        "analyze-neurons": cmd_analyze_neurons,
    }
    try:
        cfg = resolve_config(args)
        return handlers[args.command](args, cfg)
    except (CommandError, C.ConfigFileError, CheckpointError, EncodingError) as exc:
        print(f"neurove: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"neurove: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
