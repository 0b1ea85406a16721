import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurove.encoding import (
    EncodingError,
    Event,
    WindowSpec,
    batch_samples,
    bin_events,
    encode_events,
    encode_polarity,
    iter_events,
    load_events,
    make_events,
    read_events_text,
    save_events,
)


def random_events(rng, n, spec: WindowSpec, overshoot=1.2):
    t = np.sort(rng.integers(0, int(spec.span_us * overshoot), size=n)).astype(np.uint64)
    return make_events(t, rng.integers(0, spec.sensor_w, n), rng.integers(0, spec.sensor_h, n), rng.choice([-1, 1], n))


def brute_force_tensor(events, spec: WindowSpec, t0: int):
    """Loop oracle: one event at a time, exact integer bin edges."""
    out = np.zeros((spec.t_steps, 1, 2 * spec.n_bins, spec.sensor_h, spec.sensor_w), dtype=np.uint8)
    dropped = 0
    for t, x, y, p in iter_events(events):
        k = (t - t0) * spec.n_bins // spec.window_us  # floor((t - t0) / bin duration)
        if t < t0 or k >= spec.t_steps * spec.n_bins:
            dropped += 1
            continue
        out[k // spec.n_bins, 0, 2 * (k % spec.n_bins) + (p > 0), y, x] = 1
    return out, dropped


def test_empty_stream():
    b = bin_events([], WindowSpec())
    assert b.n_assigned == 0 and b.n_dropped == 0
    assert not encode_polarity(b).any()


def test_first_event_lands_in_first_slot():
    spec = WindowSpec(0.01, n_bins=4, t_steps=1, sensor_h=4, sensor_w=4)
    b = bin_events([Event(123, 1, 1, 1)], spec)
    assert b.window[0] == 0 and b.bin[0] == 0


def test_uniform_train_two_events_per_bin():
    spec = WindowSpec(0.01, n_bins=5, t_steps=1, sensor_h=2, sensor_w=2)
    t = np.arange(10) * 1000  # 1 kHz over 10 ms
    ev = make_events(t, np.zeros(10), np.zeros(10), np.ones(10))
    counts = bin_events(ev, spec, t0=0).counts()
    assert counts[0, :, 1].tolist() == [2, 2, 2, 2, 2]


def test_single_event_channel_rule():
    spec = WindowSpec(0.05, n_bins=5, t_steps=1, sensor_h=8, sensor_w=8)
    t_bin2 = int(2.5 * spec.window_us / 5)
    x = encode_events([Event(t_bin2, 3, 5, 1)], spec, t0=0)
    assert x.sum() == 1
    assert x[0, 0, 5, 5, 3] == 1
    x = encode_events([Event(t_bin2, 3, 5, -1)], spec, t0=0)
    assert x[0, 0, 4, 5, 3] == 1


def test_occupancy_is_idempotent():
    spec = WindowSpec(0.01, n_bins=2, t_steps=1, sensor_h=4, sensor_w=4)
    x = encode_events([Event(10, 1, 1, 1), Event(20, 1, 1, 1)], spec, t0=0)
    assert x.sum() == 1 and x.max() == 1


def test_unsorted_and_out_of_bounds_errors():
    spec = WindowSpec(0.01, 1, 1, 4, 4)
    with pytest.raises(EncodingError):
        bin_events([Event(20, 0, 0, 1), Event(10, 0, 0, 1)], spec)
    with pytest.raises(EncodingError):
        encode_events([Event(0, 4, 0, 1)], spec)
    with pytest.raises(EncodingError):
        encode_events([Event(0, 0, 0, 0)], spec)


def test_window_spec_validation():
    with pytest.raises(ValueError):
        WindowSpec(n_bins=0)
    with pytest.raises(ValueError):
        WindowSpec(window_duration=0)
    assert WindowSpec(n_bins=3).channels == 6


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(0, 400), n_bins=st.integers(1, 6), t_steps=st.integers(1, 4))
def test_matches_loop_oracle_and_invariants(seed, n, n_bins, t_steps):
    spec = WindowSpec(0.003, n_bins, t_steps, 6, 7)
    rng = np.random.default_rng(seed)
    ev = random_events(rng, n, spec)
    b = bin_events(ev, spec, t0=0)
    x = encode_polarity(b)
    want, dropped = brute_force_tensor(ev, spec, 0)
    np.testing.assert_array_equal(x, want)
    # partition
    assert b.n_assigned + b.n_dropped == n and b.n_dropped == dropped
    # binarity
    assert set(np.unique(x)) <= {0, 1}
    # occupancy conservation
    cells = {(int(w), 2 * int(k) + int(e["p"] > 0), int(e["y"]), int(e["x"])) for w, k, e in zip(b.window, b.bin, b.events)}
    assert x.sum() == len(cells) <= b.n_assigned


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_permuting_simultaneous_events_keeps_tensor(seed):
    spec = WindowSpec(0.002, 4, 2, 5, 5)
    rng = np.random.default_rng(seed)
    ev = random_events(rng, 200, spec)
    ev["t"] //= 250  # many ties
    ev["t"] *= 250
    ev = ev[np.argsort(ev["t"], kind="stable")]
    shuffled = ev.copy()
    for t in np.unique(ev["t"]):
        idx = np.flatnonzero(ev["t"] == t)
        shuffled[idx] = ev[rng.permutation(idx)]
    np.testing.assert_array_equal(encode_events(ev, spec, 0), encode_events(shuffled, spec, 0))


def test_batch_samples():
    spec = WindowSpec(0.01, 2, 3, 4, 4)
    rng = np.random.default_rng(0)
    x = encode_events(random_events(rng, 30, spec), spec, 0)
    assert np.array_equal(batch_samples([x]), x)
    b = batch_samples([x, x, x])
    assert b.shape == (3, 3, 4, 4, 4)
    assert all(np.array_equal(b[:, i], x[:, 0]) for i in range(3))
    other = encode_events([], WindowSpec(0.01, 2, 2, 4, 4))
    with pytest.raises(EncodingError):
        batch_samples([x, other])


@pytest.mark.parametrize("fmt", ["text", "binary"])
def test_file_round_trip_is_byte_stable(tmp_path, fmt):
    spec = WindowSpec()
    ev = random_events(np.random.default_rng(1), 500, spec)
    a, b = tmp_path / "a", tmp_path / "b"
    save_events(ev, a, fmt)
    back = load_events(a)
    np.testing.assert_array_equal(back, ev)
    save_events(back, b, fmt)
    assert a.read_bytes() == b.read_bytes()


def test_empty_files(tmp_path):
    for fmt in ("text", "binary"):
        save_events([], tmp_path / fmt, fmt)
        assert len(load_events(tmp_path / fmt, fmt)) == 0


def test_text_line_parse(tmp_path):
    p = tmp_path / "ev.txt"
    p.write_text("100 3 5 1\n")
    assert list(iter_events(read_events_text(p))) == [Event(100, 3, 5, 1)]


def test_malformed_line_reports_line_number(tmp_path):
    p = tmp_path / "ev.txt"
    p.write_text("1 0 0 1\n2 0 0 x\n")
    with pytest.raises(EncodingError, match=":2:"):
        load_events(p, "text")


def test_out_of_bounds_on_load(tmp_path):
    p = tmp_path / "ev.txt"
    p.write_text("1 70 0 1\n")
    with pytest.raises(EncodingError):
        load_events(p, height=64, width=64)


def test_bad_binary_files(tmp_path):
    p = tmp_path / "ev.bin"
    p.write_bytes(b"XXXX")
    with pytest.raises(EncodingError):
        load_events(p, "binary")
    p.write_bytes(b"EVT1" + b"\x00" * 7)
    with pytest.raises(EncodingError):
        load_events(p, "binary")
