"""Event streams to binary spike tensors ``[T, B, 2 * n, H, W]``.

Each SNN time step covers one window of ``window_duration`` seconds, split
into ``n_bins`` chronological bins. Within bin ``b`` negative events go to
channel ``2 * b`` and positive events to channel ``2 * b + 1``. A cell is 1
when at least one event of that polarity hit the pixel during the bin.

Event files come in two lossless formats:

* text: one event per line, ``t_us x y p`` with ``p`` in {-1, 1};
* binary: magic ``EVT1`` then packed little-endian records
  ``(u64 t_us, u16 x, u16 y, i8 p)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])
BINARY_MAGIC = b"EVT1"


class EncodingError(ValueError):
    pass


class Event(NamedTuple):
    t: int  # microseconds
    x: int
    y: int
    p: int  # -1 or +1


def as_event_array(events) -> np.ndarray:
    """Structured array view of ``events`` (array, list of :class:`Event` or tuples)."""
    if isinstance(events, np.ndarray) and events.dtype == EVENT_DTYPE:
        return events
    return np.array([tuple(e) for e in events], dtype=EVENT_DTYPE)


def make_events(t, x, y, p) -> np.ndarray:
    arr = np.empty(len(t), dtype=EVENT_DTYPE)
    arr["t"], arr["x"], arr["y"], arr["p"] = t, x, y, p
    return arr


def validate_events(events: np.ndarray, height: int | None = None, width: int | None = None) -> None:
    if len(events) == 0:
        return
    if np.any(np.diff(events["t"].astype(np.int64)) < 0):
        raise EncodingError("events must be sorted by timestamp")
    if not np.all(np.isin(events["p"], (-1, 1))):
        raise EncodingError("polarity must be -1 or +1")
    if width is not None and int(events["x"].max()) >= width:
        raise EncodingError(f"x coordinate {int(events['x'].max())} outside sensor width {width}")
    if height is not None and int(events["y"].max()) >= height:
        raise EncodingError(f"y coordinate {int(events['y'].max())} outside sensor height {height}")


@dataclass(frozen=True)
class WindowSpec:
    window_duration: float = 0.05  # seconds per SNN time step
    n_bins: int = 5
    t_steps: int = 5
    sensor_h: int = 64
    sensor_w: int = 64

    def __post_init__(self):
        if self.n_bins < 1 or self.t_steps < 1:
            raise ValueError("n_bins and t_steps must be at least 1")
        if self.window_duration <= 0:
            raise ValueError("window_duration must be positive")

    @property
    def window_us(self) -> int:
        return int(round(self.window_duration * 1e6))

    @property
    def channels(self) -> int:
        return 2 * self.n_bins

    @property
    def span_us(self) -> int:
        return self.t_steps * self.window_us


@dataclass
class BinnedEvents:
    """Events that fell inside the covered span, with their (window, bin) slots."""

    events: np.ndarray
    window: np.ndarray
    bin: np.ndarray
    n_dropped: int
    spec: WindowSpec

    @property
    def n_assigned(self) -> int:
        return len(self.events)

    def group(self, window: int, bin: int, polarity: int) -> np.ndarray:
        mask = (self.window == window) & (self.bin == bin) & (self.events["p"] == polarity)
        return self.events[mask]

    def counts(self) -> np.ndarray:
        """Event counts per (window, bin, polarity index)."""
        out = np.zeros((self.spec.t_steps, self.spec.n_bins, 2), dtype=np.int64)
        np.add.at(out, (self.window, self.bin, (self.events["p"] > 0).astype(int)), 1)
        return out


def bin_events(events, spec: WindowSpec, t0: int | None = None) -> BinnedEvents:
    """Assign each event to ``floor((t - t0) / bin_duration)``.

    ``t0`` defaults to the first timestamp. Events past the last window (or
    before ``t0``) are dropped and counted.
    """
    ev = as_event_array(events)
    validate_events(ev)
    if len(ev) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return BinnedEvents(ev, empty, empty.copy(), 0, spec)
    if t0 is None:
        t0 = int(ev["t"][0])
    dt = ev["t"].astype(np.int64) - int(t0)
    # integer arithmetic keeps bin edges exact
    slot = np.floor_divide(dt * spec.n_bins, spec.window_us)
    keep = (dt >= 0) & (slot < spec.t_steps * spec.n_bins)
    slot = slot[keep]
    return BinnedEvents(ev[keep], slot // spec.n_bins, slot % spec.n_bins, int((~keep).sum()), spec)


def encode_polarity(binned: BinnedEvents, spec: WindowSpec | None = None) -> np.ndarray:
    """Binary occupancy tensor of shape ``[T, 1, 2 * n, H, W]`` (uint8)."""
    spec = spec or binned.spec
    ev = binned.events
    validate_events(ev, spec.sensor_h, spec.sensor_w)
    out = np.zeros((spec.t_steps, 1, spec.channels, spec.sensor_h, spec.sensor_w), dtype=np.uint8)
    if len(ev):
        ch = 2 * binned.bin + (ev["p"] > 0)
        out[binned.window, 0, ch, ev["y"].astype(np.int64), ev["x"].astype(np.int64)] = 1
    return out


def encode_events(events, spec: WindowSpec, t0: int | None = None) -> np.ndarray:
    return encode_polarity(bin_events(events, spec, t0), spec)


def batch_samples(samples: Sequence[np.ndarray]) -> np.ndarray:
    """Stack single-sample tensors ``[T, 1, C, H, W]`` along the batch axis."""
    if not samples:
        raise EncodingError("no samples to batch")
    ref = samples[0].shape
    for s in samples:
        if s.ndim != 5:
            raise EncodingError(f"expected a 5-axis tensor, got shape {s.shape}")
        if (s.shape[0],) + s.shape[2:] != (ref[0],) + ref[2:]:
            raise EncodingError(f"sample shape {s.shape} does not match {ref}")
    return np.concatenate(samples, axis=1)


# -- event files ---------------------------------------------------------------


def write_events_text(events, path: Path) -> None:
    ev = as_event_array(events)
    with open(path, "w") as fh:
        for t, x, y, p in zip(ev["t"].tolist(), ev["x"].tolist(), ev["y"].tolist(), ev["p"].tolist()):
            fh.write(f"{t} {x} {y} {p}\n")


def read_events_text(path: Path, height: int | None = None, width: int | None = None) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                if len(parts) != 4:
                    raise ValueError("expected 4 fields")
                t, x, y, p = (int(v) for v in parts)
                if t < 0 or x < 0 or y < 0 or p not in (-1, 1):
                    raise ValueError("field out of range")
            except ValueError as exc:
                raise EncodingError(f"{path}:{lineno}: malformed event line {line!r} ({exc})") from None
            rows.append((t, x, y, p))
    ev = np.array(rows, dtype=EVENT_DTYPE)
    validate_events(ev, height, width)
    return ev


def write_events_binary(events, path: Path) -> None:
    ev = as_event_array(events)
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(ev.astype(EVENT_DTYPE, copy=False).tobytes())


def read_events_binary(path: Path, height: int | None = None, width: int | None = None) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != BINARY_MAGIC:
        raise EncodingError(f"{path}: missing {BINARY_MAGIC!r} header")
    body = raw[4:]
    if len(body) % EVENT_DTYPE.itemsize:
        n = len(body) // EVENT_DTYPE.itemsize
        raise EncodingError(f"{path}: truncated record {n + 1}")
    ev = np.frombuffer(body, dtype=EVENT_DTYPE).copy()
    bad = np.flatnonzero(~np.isin(ev["p"], (-1, 1)))
    if len(bad):
        raise EncodingError(f"{path}: record {int(bad[0]) + 1} has polarity {int(ev['p'][bad[0]])}")
    validate_events(ev, height, width)
    return ev


def load_events(path: Path, format: str | None = None, height: int | None = None, width: int | None = None) -> np.ndarray:
    """Read an event file; ``format`` is ``text`` or ``binary`` (sniffed when None)."""
    path = Path(path)
    if format is None:
        with open(path, "rb") as fh:
            format = "binary" if fh.read(4) == BINARY_MAGIC else "text"
    if format == "text":
        return read_events_text(path, height, width)
    if format == "binary":
        return read_events_binary(path, height, width)
    raise ValueError(f"unknown event format {format!r}")


def save_events(events, path: Path, format: str = "binary") -> None:
    if format == "text":
        write_events_text(events, path)
    elif format == "binary":
        write_events_binary(events, path)
    else:
        raise ValueError(f"unknown event format {format!r}")


def iter_events(events: np.ndarray) -> Iterable[Event]:
    for t, x, y, p in zip(events["t"].tolist(), events["x"].tolist(), events["y"].tolist(), events["p"].tolist()):
        yield Event(t, x, y, p)
