import json

import numpy as np
import pytest

from neurove import config as C
from neurove.cli import main
from neurove.encoding import load_events


def test_config_text_parsing():
    cfg = C.read_config_text("# comment\nseed = 3\nsine.lr = 0.003  # inline\nsine.baseline = slstm\nflag = true\nlst = [1, 2]\n")
    assert cfg == {"seed": 3, "sine.lr": 0.003, "sine.baseline": "slstm", "flag": True, "lst": [1, 2]}
    with pytest.raises(C.ConfigFileError, match=":2:"):
        C.read_config_text("a = 1\nbroken line\n")


def test_config_write_read_round_trip(tmp_path):
    cfg = {"a": 1, "b": 0.1, "c": "word", "d": "two words ", "e": [16, 32], "f": False, "g": "3"}
    C.write_config(cfg, tmp_path / "c.cfg")
    assert C.read_config(tmp_path / "c.cfg") == cfg


def test_resolution_precedence_and_unknown_keys():
    defaults = {"a": 1, "b": 2, "c": 3}
    assert C.resolve(defaults, {"a": 10, "b": 20}, {"b": 200}) == {"a": 10, "b": 200, "c": 3}
    with pytest.raises(C.ConfigFileError, match="unknown"):
        C.resolve(defaults, {"zz": 1})
    with pytest.raises(C.ConfigFileError):
        C.parse_overrides(["novalue"])


def test_analyze_neurons_and_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("seed = 5\nanalyze.steps = 50\nanalyze.neurons = 4\n")
    out = tmp_path / "out"
    rc = main(["analyze-neurons", "--config", str(cfg), "--seed", "7", "--set", "analyze.neurons=3", "--out", str(out)])
    assert rc == 0
    resolved = C.read_config(out / "config.resolved")
    assert resolved["seed"] == 7 and resolved["analyze.steps"] == 50 and resolved["analyze.neurons"] == 3
    summary = json.loads((out / "summary.json").read_text())
    assert summary["alif_rate"] >= summary["lif_rate"]
    lines = (out / "lif.csv").read_text().splitlines()
    assert lines[0] == "step,neuron_id,spike" and len(lines) == 1 + 50 * 3
    capsys.readouterr()


def test_unknown_key_is_rejected(tmp_path, capsys):
    rc = main(["analyze-neurons", "--set", "analyze.nuerons=3", "--out", str(tmp_path)])
    assert rc != 0
    assert "unknown config key" in capsys.readouterr().err
    assert not (tmp_path / "config.resolved").exists()


def test_gen_sine_data(tmp_path, capsys):
    out = tmp_path / "sine"
    rc = main(["gen-data", "sine", "--out", str(out), "--set", "data.sine.steps=10", "--set", "data.sine.forecast_steps=10"])
    assert rc == 0
    m = json.loads((out / "manifest.json").read_text())
    assert len(m["train"]) == 97 and len(m["val"]) == 3
    assert (out / "seq_000.csv").read_text().startswith("step,value\n")
    capsys.readouterr()


def test_gen_synthetic_events_is_reproducible(tmp_path, capsys):
    args = [
        "--set", "data.synthetic.n_train=2", "--set", "data.synthetic.n_val=1",
        "--set", "data.synthetic.sensor_h=16", "--set", "data.synthetic.sensor_w=16",
        "--set", "data.synthetic.window_duration=0.01", "--set", "data.synthetic.t_steps=2",
        "--set", "data.synthetic.n_bins=2", "--seed", "3",
    ]  # fmt: skip
    for name in ("a", "b"):
        assert main(["gen-data", "synthetic-events", "--out", str(tmp_path / name), *args]) == 0
    m = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert len(m["clips"]) == 3
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()
    first = m["clips"][0]["events"]
    assert (tmp_path / "a" / first).read_bytes() == (tmp_path / "b" / first).read_bytes()
    ev = load_events(tmp_path / "a" / first)
    assert np.all(np.diff(ev["t"].astype(np.int64)) >= 0)
    capsys.readouterr()


def test_train_eval_predict_sine(tmp_path, capsys):
    data = tmp_path / "data"
    small = ["--set", "data.sine.steps=60", "--set", "data.sine.forecast_steps=20"]
    assert main(["gen-data", "sine", "--out", str(data), *small]) == 0
    run = tmp_path / "run"
    train_args = ["--set", "sine.hidden_dim=4", "--set", "sine.chunk=30", "--set", "sine.eval_every=1"]
    assert main(["train", "sine", "--data", str(data), "--epochs", "2", "--out", str(run), "-q", *small, *train_args]) == 0
    report = json.loads((run / "report.json").read_text())
    assert report["epochs_run"] == 2
    assert len((run / "epochs.ndjson").read_text().splitlines()) == 2
    ev = tmp_path / "ev"
    assert main(["eval", "--model", str(run / "best.ckpt"), "--data", str(data), "--out", str(ev), *small]) == 0
    metrics = json.loads((ev / "metrics.json").read_text())
    assert len(metrics["fit"]["rmse"]) == 3
    assert metrics["fit"]["rmse_dagger"][0] == 1000 * metrics["fit"]["rmse"][0]
    hist = tmp_path / "hist.csv"
    hist.write_text("step,value\n" + "".join(f"{k},{np.sin(0.1 * k)}\n" for k in range(20)))
    pr = tmp_path / "pr"
    assert main(["predict", "--model", str(run / "last.ckpt"), "--input", str(hist), "--horizon", "5", "--out", str(pr)]) == 0
    assert len((pr / "forecast.csv").read_text().splitlines()) == 6
    capsys.readouterr()


def test_error_exits(tmp_path, capsys):
    assert main(["eval", "--model", str(tmp_path / "missing.ckpt"), "--out", str(tmp_path / "o")]) == 1
    assert "checkpoint not found" in capsys.readouterr().err
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint at all, just some bytes here" * 2)
    assert main(["eval", "--model", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert main(["train", "velocity", "--out", str(tmp_path / "v")]) == 1
    assert "--data" in capsys.readouterr().err
    assert main(["analyze-neurons", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)]) == 1
    with pytest.raises(SystemExit):
        main(["train", "velocity", "--baseline", "slstm"])
    capsys.readouterr()
