"""Time-series ingestion, scaling, windowing, chronological splits and synthetic data."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, InsufficientDataError, ParseError, SpecError, SplitError
from .keyedtext import parse_keyed_text


@dataclass(frozen=True)
class SeriesFrame:
    """Timestamped (T, C) signal with optional inclusive anomaly intervals."""

    timestamps: np.ndarray
    values: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[0] != ts.shape[0]:
            raise DataError(f"values shape {vals.shape} does not match {ts.shape[0]} timestamps")
        if ts.size > 1 and np.any(np.diff(ts) <= 0):
            raise DataError("timestamps must be strictly increasing")
        labels = tuple((int(s), int(e)) for s, e in self.labels)
        for s, e in labels:
            if s > e:
                raise DataError(f"label interval ({s}, {e}) has start > end")
            if ts.size and (s < ts[0] or e > ts[-1]):
                raise DataError(f"label interval ({s}, {e}) outside [{ts[0]}, {ts[-1]}]")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.timestamps.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def slice(self, start: int, stop: int) -> SeriesFrame:
        """Rows ``[start, stop)``; labels are clipped to the kept span."""
        ts = self.timestamps[start:stop]
        labels = []
        if ts.size:
            for s, e in self.labels:
                if e >= ts[0] and s <= ts[-1]:
                    labels.append((max(s, int(ts[0])), min(e, int(ts[-1]))))
        return SeriesFrame(ts, self.values[start:stop], tuple(labels))


@dataclass(frozen=True)
class WindowSet:
    windows: np.ndarray  # (N, w, C)
    origins: np.ndarray  # row index of each window's first sample
    stride: int

    @property
    def width(self) -> int:
        return self.windows.shape[1]

    def __len__(self):
        return self.windows.shape[0]


@dataclass
class MinMaxScaler:
    """Per-channel affine map of the fitted range onto [-1, 1]."""

    lo: np.ndarray
    hi: np.ndarray
    center: np.ndarray = field(init=False)
    half: np.ndarray = field(init=False)

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        self.center = 0.5 * (self.lo + self.hi)
        span = 0.5 * (self.hi - self.lo)
        # constant channel: centre it and leave the scale alone
        self.half = np.where(span > 0, span, 1.0)

    @classmethod
    def fit(cls, values) -> MinMaxScaler:
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        return cls(values.min(axis=0), values.max(axis=0))

    def transform(self, values):
        return (np.asarray(values, dtype=np.float64) - self.center) / self.half

    def inverse(self, values):
        return np.asarray(values, dtype=np.float64) * self.half + self.center


def load_csv(path, labels_path=None) -> SeriesFrame:
    """Read ``timestamp,value[,value...]`` rows plus an optional ``start,end`` label file.

    Without ``labels_path`` a sibling ``<stem>_labels.csv`` is used when present.
    """
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip().lower() != "timestamp" or len(header) < 2:
            raise ParseError("header must be 'timestamp,value[,value...]'", line=1)
        n_cols = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != n_cols:
                raise ParseError(f"expected {n_cols} fields, got {len(row)}", line=lineno)
            try:
                ts = int(row[0])
                vals = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            rows.append((ts, vals))
    if not rows:
        raise DataError(f"{path}: no data rows")
    rows.sort(key=lambda r: r[0])
    ts = np.array([r[0] for r in rows], dtype=np.int64)
    if np.any(np.diff(ts) == 0):
        dup = ts[1:][np.diff(ts) == 0][0]
        raise DataError(f"{path}: duplicate timestamp {dup}")
    values = np.array([r[1] for r in rows], dtype=np.float64)
    if labels_path is None:
        sibling = path.with_name(f"{path.stem}_labels.csv")
        labels_path = sibling if sibling.exists() else None
    labels = load_intervals(labels_path) if labels_path is not None else ()
    return SeriesFrame(ts, values, tuple(labels))


def load_intervals(path) -> list:
    """Read ``start,end`` rows.

    ``#`` comment lines are skipped, a header row is optional and extra
    columns (such as ``score_peak``) are ignored.
    """
    out = []
    header_seen = False
    with Path(path).open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row) or row[0].lstrip().startswith("#"):
                continue
            try:
                start, end = int(row[0]), int(row[1])
            except (ValueError, IndexError):
                if not out and not header_seen:
                    header_seen = True
                    continue
                raise ParseError(f"bad interval row {row!r}", line=lineno) from None
            out.append((start, end))
    return out


def save_csv(frame: SeriesFrame, path, labels_path=None):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp"] + [f"value{i}" if frame.channels > 1 else "value" for i in range(frame.channels)])
        for t, row in zip(frame.timestamps, frame.values):
            w.writerow([int(t)] + [repr(float(v)) for v in row])
    if labels_path is None:
        labels_path = path.with_name(f"{path.stem}_labels.csv")
    with Path(labels_path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["start", "end"])
        w.writerows(frame.labels)


def minmax_scale(frame: SeriesFrame, fit_range=None):
    """Scale to [-1, 1] using the row range ``fit_range`` (default: all rows)."""
    start, stop = fit_range if fit_range is not None else (0, len(frame))
    scaler = MinMaxScaler.fit(frame.values[start:stop])
    return SeriesFrame(frame.timestamps, scaler.transform(frame.values), frame.labels), scaler


def make_windows(frame_or_values, width: int = 100, stride: int = 1) -> WindowSet:
    values = frame_or_values.values if isinstance(frame_or_values, SeriesFrame) else np.asarray(frame_or_values)
    if values.ndim == 1:
        values = values[:, None]
    if width <= 0 or stride <= 0:
        raise ValueError("width and stride must be positive")
    T = values.shape[0]
    if T < width:
        raise InsufficientDataError(f"series of length {T} is shorter than the window width {width}")
    origins = np.arange(0, T - width + 1, stride)
    view = np.lib.stride_tricks.sliding_window_view(values, width, axis=0)  # (T-w+1, C, w)
    windows = np.ascontiguousarray(np.transpose(view[origins], (0, 2, 1)))
    return WindowSet(windows, origins, stride)


def chrono_split(frame: SeriesFrame, train_frac: float):
    """Contiguous prefix/suffix split; every labeled anomaly must land in the suffix."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must lie in (0, 1)")
    cut = int(round(len(frame) * train_frac))
    if cut <= 0 or cut >= len(frame):
        raise SplitError(f"split at row {cut} leaves an empty side")
    boundary = frame.timestamps[cut]
    for s, e in frame.labels:
        if s < boundary:
            raise SplitError(f"anomaly ({s}, {e}) falls in the training span; choose a smaller train_frac")
    return frame.slice(0, cut), frame.slice(cut, len(frame))


# ------------------------------------------------------------------ synthetic

ANOMALY_KINDS = ("spike", "level_shift", "amplitude_burst")


@dataclass(frozen=True)
class Injection:
    kind: str
    start: int
    end: int
    magnitude: float


@dataclass(frozen=True)
class SynthSpec:
    length: int = 5000
    period: float = 50.0
    amplitude: float = 1.0
    noise: float = 0.05
    seed: int = 0
    anomalies: tuple = ()

    @classmethod
    def from_text(cls, text: str) -> SynthSpec:
        """Parse a keyed-text document; ``anomaly = <kind> <start> <end> <magnitude>`` may repeat."""
        entries = parse_keyed_text(text, repeatable=("anomaly",))
        kw = {}
        casts = {"length": int, "period": float, "amplitude": float, "noise": float, "seed": int}
        for key, val in entries.items():
            if key == "anomaly":
                continue
            if key not in casts:
                raise SpecError(f"unknown synth key {key!r}")
            try:
                kw[key] = casts[key](val)
            except ValueError:
                raise SpecError(f"bad value for {key}: {val!r}") from None
        injections = []
        for item in entries.get("anomaly", []):
            parts = item.split()
            if len(parts) != 4:
                raise SpecError(f"anomaly needs '<kind> <start> <end> <magnitude>', got {item!r}")
            try:
                injections.append(Injection(parts[0], int(parts[1]), int(parts[2]), float(parts[3])))
            except ValueError:
                raise SpecError(f"bad anomaly entry {item!r}") from None
        return cls(anomalies=tuple(injections), **kw)

    def to_text(self) -> str:
        lines = [f"length = {self.length}", f"period = {self.period!r}", f"amplitude = {self.amplitude!r}",
                 f"noise = {self.noise!r}", f"seed = {self.seed}"]
        lines += [f"anomaly = {a.kind} {a.start} {a.end} {a.magnitude!r}" for a in self.anomalies]
        return "\n".join(lines) + "\n"


def synth_generate(spec: SynthSpec) -> SeriesFrame:
    """Noisy sine with injected anomalies; labels are exactly the injected intervals.

    ``spike`` adds ``magnitude`` at its start index, ``level_shift`` adds
    ``magnitude`` over the interval and ``amplitude_burst`` multiplies the
    clean sine by ``magnitude`` over the interval.
    """
    if spec.length <= 0 or spec.period <= 0 or spec.noise < 0:
        raise SpecError("length and period must be positive, noise non-negative")
    spans = sorted((a.start, a.end) for a in spec.anomalies)
    for a in spec.anomalies:
        if a.kind not in ANOMALY_KINDS:
            raise SpecError(f"unknown anomaly kind {a.kind!r}")
        if not 0 <= a.start <= a.end < spec.length:
            raise SpecError(f"anomaly interval ({a.start}, {a.end}) outside the series")
        if a.kind == "spike" and a.start != a.end:
            raise SpecError("a spike is a point anomaly (start == end)")
    for (s0, e0), (s1, _) in zip(spans, spans[1:]):
        if s1 <= e0:
            raise SpecError(f"injected anomalies overlap at {s1}")
    t = np.arange(spec.length)
    clean = spec.amplitude * np.sin(2.0 * np.pi * t / spec.period)
    values = clean.copy()
    for a in spec.anomalies:
        sl = slice(a.start, a.end + 1)
        if a.kind == "amplitude_burst":
            values[sl] = clean[sl] * a.magnitude
        else:
            values[sl] += a.magnitude
    rng = np.random.default_rng(spec.seed)
    values = values + rng.normal(0.0, spec.noise, size=spec.length)
    return SeriesFrame(t, values[:, None], tuple(spans))
