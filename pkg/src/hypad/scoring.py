"""Anomaly scores from model outputs: reconstruction errors, critic scores, uncertainty.

Window-level quantities are spread to timestamps by taking, for each
timestamp, the median over the windows that cover it.  The per-timestamp
reconstruction error and critic score are z-normalized and multiplied; in
``hyperbolic_uncertainty`` mode the product is further scaled by the
certainty ``1 - U``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels, hypgeo
from .errors import ConfigError, ShapeError

SCORE_MODES = ("euclidean_pointwise", "euclidean_area", "euclidean_dtw", "hyperbolic", "hyperbolic_uncertainty")


def training_mode(score_mode: str) -> str:
    if score_mode not in SCORE_MODES:
        raise ConfigError(f"unknown scoring mode {score_mode!r}; expected one of {SCORE_MODES}")
    return "hyperbolic" if score_mode.startswith("hyperbolic") else "euclidean"


def _pair(x, x_rec):
    x = np.asarray(x, dtype=np.float64)
    x_rec = np.asarray(x_rec, dtype=np.float64)
    if x.shape != x_rec.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {x_rec.shape}")
    return x, x_rec


def _as_windows(x):
    # (L,) -> (1, L, 1); (L, C) -> (1, L, C); (N, L, C) unchanged
    if x.ndim == 1:
        return x[None, :, None], True
    if x.ndim == 2:
        return x[None], True
    return x, False


def re_pointwise(x, x_rec):
    """Mean absolute difference over each window."""
    x, x_rec = _pair(x, x_rec)
    xw, single = _as_windows(np.abs(x - x_rec))
    out = xw.reshape(xw.shape[0], -1).mean(axis=1)
    return float(out[0]) if single else out


def re_area(x, x_rec, sub_len: int = 10):
    """Mean over sub-windows of ``|trapezoid integral of (x - x_rec)| / (2 sub_len)``.

    A window whose length is not a multiple of ``sub_len`` has its residual
    padded with the last value.
    """
    x, x_rec = _pair(x, x_rec)
    r, single = _as_windows(x - x_rec)
    N, L, C = r.shape
    pad = (-L) % sub_len
    if pad:
        r = np.concatenate([r, np.repeat(r[:, -1:, :], pad, axis=1)], axis=1)
    blocks = r.reshape(N, -1, sub_len, C)
    integral = 0.5 * (blocks[:, :, 1:, :] + blocks[:, :, :-1, :]).sum(axis=2)
    out = (np.abs(integral) / (2.0 * sub_len)).mean(axis=(1, 2))
    return float(out[0]) if single else out


def re_dtw(x, x_rec, radius=None):
    """DTW cost between each window and its reconstruction, summed over channels."""
    x, x_rec = _pair(x, x_rec)
    xw, single = _as_windows(x)
    rw, _ = _as_windows(x_rec)
    N, L, C = xw.shape
    r = -1 if radius is None or not np.isfinite(radius) else int(radius)
    a = np.ascontiguousarray(np.transpose(xw, (0, 2, 1)).reshape(N * C, L))
    b = np.ascontiguousarray(np.transpose(rw, (0, 2, 1)).reshape(N * C, L))
    out = _kernels.dtw_rows(a, b, r).reshape(N, C).sum(axis=1)
    return float(out[0]) if single else out


def z_normalize(scores):
    """``(s - mean) / std`` with the population std; a flat input maps to zeros."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size < 2:
        raise ValueError("z_normalize needs at least two scores")
    sd = s.std()
    if sd < 1e-12:
        return np.zeros_like(s)
    return (s - s.mean()) / sd


def combine_scores(z_re, z_critic, u=None):
    """Product of normalized scores, times the certainty ``1 - u`` when given."""
    s = np.multiply(z_re, z_critic)
    if u is None:
        return s
    return s * (1.0 - np.asarray(u, dtype=np.float64))


def aggregate_to_timestamps(window_scores, origins, T: int, width: int = 100, how: str = "median"):
    """Per-timestamp reduction (median or mean) over the windows covering each timestamp.

    Timestamps covered by no window (possible only with strides > 1) take the
    value of the nearest covered timestamp.
    """
    scores = np.asarray(window_scores, dtype=np.float64)
    origins = np.asarray(origins, dtype=np.int64)
    if scores.shape != origins.shape:
        raise ShapeError("one score per window origin expected")
    n_pos = T - width + 1
    by_origin = np.full(n_pos + 2 * (width - 1), np.nan)
    by_origin[origins + width - 1] = scores
    # row t holds the scores of windows starting in [t - width + 1, t]
    cover = np.lib.stride_tricks.sliding_window_view(by_origin, width)[:T]
    with np.errstate(all="ignore"):
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            if how == "median":
                out = np.nanmedian(cover, axis=1)
            elif how == "mean":
                out = np.nanmean(cover, axis=1)
            else:
                raise ConfigError(f"unknown aggregation {how!r}")
    missing = np.isnan(out)
    if missing.any() and not missing.all():
        idx = np.arange(T)
        good = idx[~missing]
        nearest = good[np.clip(np.searchsorted(good, idx[missing]), 0, len(good) - 1)]
        prev = good[np.clip(np.searchsorted(good, idx[missing]) - 1, 0, len(good) - 1)]
        pick = np.where(np.abs(prev - idx[missing]) <= np.abs(nearest - idx[missing]), prev, nearest)
        out[missing] = out[pick]
    return out


@dataclass(frozen=True)
class Detection:
    threshold: float
    intervals: list  # (start_index, end_index, peak) with inclusive bounds


def detect_intervals(trace, k: float = 3.0, min_gap: int = 1) -> Detection:
    """Runs of ``trace > mean + k std``; runs separated by at most ``min_gap`` points merge."""
    s = np.asarray(trace, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ValueError("detect_intervals needs a finite trace")
    theta = float(s.mean() + k * s.std())
    above = s > theta
    runs = []
    if above.any():
        edges = np.diff(np.concatenate([[0], above.astype(np.int8), [0]]))
        starts = np.flatnonzero(edges == 1)
        ends = np.flatnonzero(edges == -1) - 1
        for st, en in zip(starts, ends):
            if runs and st - runs[-1][1] - 1 <= min_gap:
                runs[-1][1] = en
            else:
                runs.append([st, en])
    intervals = [(int(a), int(b), float(s[a:b + 1].max())) for a, b in runs]
    return Detection(theta, intervals)


@dataclass
class UncertaintyProfile:
    bin_lo: np.ndarray
    bin_hi: np.ndarray
    count: np.ndarray
    mean_cosine: np.ndarray  # NaN for empty bins
    skipped: int = 0

    @property
    def occupied(self):
        return self.count > 0


def cosine_distance(h, h_rec):
    """``1 - <h, h_rec> / (|h| |h_rec|)`` per pair; NaN where a norm is zero."""
    h = np.asarray(h, dtype=np.float64)
    h_rec = np.asarray(h_rec, dtype=np.float64)
    nh = np.linalg.norm(h, axis=-1)
    nr = np.linalg.norm(h_rec, axis=-1)
    ok = (nh > 0) & (nr > 0)
    out = np.full(nh.shape, np.nan)
    out[ok] = 1.0 - np.sum(h[ok] * h_rec[ok], axis=-1) / (nh[ok] * nr[ok])
    return out


def uncertainty_profile(h, h_rec, bins: int = 10) -> UncertaintyProfile:
    """Mean cosine distance between paired embeddings per uncertainty bin over [0, 1]."""
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    h_rec = np.atleast_2d(np.asarray(h_rec, dtype=np.float64))
    if h.shape != h_rec.shape:
        raise ShapeError("paired embeddings must share a shape")
    u = hypgeo.uncertainty(h_rec)
    dist = cosine_distance(h, h_rec)
    keep = ~np.isnan(dist)
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip(np.floor(u * bins).astype(int), 0, bins - 1)
    count = np.zeros(bins, dtype=int)
    mean = np.full(bins, np.nan)
    for b in range(bins):
        sel = keep & (idx == b)
        count[b] = int(sel.sum())
        if count[b]:
            mean[b] = float(dist[sel].mean())
    return UncertaintyProfile(edges[:-1], edges[1:], count, mean, int((~keep).sum()))


@dataclass
class ScoreTrace:
    timestamps: np.ndarray
    re_raw: np.ndarray
    critic_raw: np.ndarray
    uncertainty: np.ndarray | None
    z_re: np.ndarray
    z_critic: np.ndarray
    combined: np.ndarray
    threshold: float
    detected: list  # (start_ts, end_ts, peak)
    mode: str
    extras: dict = field(default_factory=dict)

    @property
    def flagged(self) -> np.ndarray:
        out = np.zeros(len(self.timestamps), dtype=bool)
        pos = {int(t): i for i, t in enumerate(self.timestamps)}
        for s, e, _ in self.detected:
            out[pos[s]:pos[e] + 1] = True
        return out

    @property
    def intervals(self) -> list:
        return [(s, e) for s, e, _ in self.detected]


def window_errors(mode, windows, reconstructions, h=None, h_rec=None, geometry=hypgeo.DEFAULT):
    """Per-window reconstruction error for a scoring mode."""
    if mode == "euclidean_pointwise":
        return re_pointwise(windows, reconstructions)
    if mode == "euclidean_area":
        return re_area(windows, reconstructions)
    if mode == "euclidean_dtw":
        return re_dtw(windows, reconstructions)
    if h is None or h_rec is None:
        raise ConfigError(f"mode {mode} needs ball embeddings")
    return hypgeo.poincare_distance(h, h_rec, geometry)


def build_trace(mode, timestamps, origins, width, windows, reconstructions, critic, h=None, h_rec=None,
                k=3.0, min_gap=1, how="median", geometry=hypgeo.DEFAULT) -> ScoreTrace:
    """Assemble the per-timestamp trace and detected intervals for one scoring mode.

    ``critic`` is the raw D_x output per window (higher = more real); its sign
    is flipped so that larger means more anomalous.
    """
    training_mode(mode)
    timestamps = np.asarray(timestamps)
    T = len(timestamps)
    re_w = window_errors(mode, windows, reconstructions, h, h_rec, geometry)
    re_t = aggregate_to_timestamps(re_w, origins, T, width, how)
    crit_t = aggregate_to_timestamps(-np.asarray(critic, dtype=np.float64), origins, T, width, how)
    z_re = z_normalize(re_t)
    z_c = z_normalize(crit_t)
    unc = None
    if mode.startswith("hyperbolic"):
        unc = aggregate_to_timestamps(hypgeo.uncertainty(h_rec), origins, T, width, how)
    combined = combine_scores(z_re, z_c, unc if mode == "hyperbolic_uncertainty" else None)
    det = detect_intervals(combined, k=k, min_gap=min_gap)
    detected = [(int(timestamps[a]), int(timestamps[b]), p) for a, b, p in det.intervals]
    return ScoreTrace(timestamps, re_t, crit_t, unc, z_re, z_c, combined, det.threshold, detected, mode)


def write_trace_csv(trace: ScoreTrace, path, digest: str = ""):
    """Columns ``timestamp,re,critic,uncertainty,combined,flagged``; uncertainty is blank in Euclidean modes."""
    flagged = trace.flagged
    with Path(path).open("w", newline="") as fh:
        if digest:
            fh.write(f"# config_digest={digest} mode={trace.mode} threshold={trace.threshold!r}\n")
        w = csv.writer(fh)
        w.writerow(["timestamp", "re", "critic", "uncertainty", "combined", "flagged"])
        for i, t in enumerate(trace.timestamps):
            unc = "" if trace.uncertainty is None else repr(float(trace.uncertainty[i]))
            w.writerow([int(t), repr(float(trace.re_raw[i])), repr(float(trace.critic_raw[i])), unc,
                        repr(float(trace.combined[i])), int(flagged[i])])


def write_intervals_csv(detected, path, digest: str = ""):
    with Path(path).open("w", newline="") as fh:
        if digest:
            fh.write(f"# config_digest={digest}\n")
        w = csv.writer(fh)
        w.writerow(["start", "end", "score_peak"])
        for s, e, p in detected:
            w.writerow([int(s), int(e), repr(float(p))])
