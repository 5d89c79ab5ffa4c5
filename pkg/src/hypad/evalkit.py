"""Overlap-based detection metrics, score-mode ablations and report output.

A truth interval is a true positive when at least one predicted interval
overlaps it and a false negative otherwise; a predicted interval that overlaps
no truth interval is a false positive.  Intervals are inclusive ``(start, end)``
pairs on the timestamp axis.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError


def _check_disjoint(intervals, name):
    ivs = sorted((int(s), int(e)) for s, e in intervals)
    for s, e in ivs:
        if s > e:
            raise ContractError(f"{name}: interval ({s}, {e}) has start > end")
    for (s0, e0), (s1, e1) in zip(ivs, ivs[1:]):
        if s1 <= e0:
            raise ContractError(f"{name}: intervals ({s0}, {e0}) and ({s1}, {e1}) overlap")
    return ivs


def overlap_confusion(predicted, truth):
    """Return ``(tp, fp, fn)`` under the any-overlap rule.

    Parameters
    ----------
    predicted, truth : iterable of (start, end)
        Inclusive intervals; each list must be internally disjoint (order is
        irrelevant).

    Raises
    ------
    ContractError
        If two intervals of the same list overlap.
    """
    pred = _check_disjoint(predicted, "predicted")
    true = _check_disjoint(truth, "truth")
    # two-pointer sweep over the sorted lists
    hit_true = [False] * len(true)
    hit_pred = [False] * len(pred)
    i = j = 0
    while i < len(pred) and j < len(true):
        ps, pe = pred[i]
        ts, te = true[j]
        if ps <= te and ts <= pe:
            hit_pred[i] = hit_true[j] = True
        if pe < te:
            i += 1
        else:
            j += 1
    tp = sum(hit_true)
    return tp, hit_pred.count(False), len(true) - tp


def prf(tp: int, fp: int, fn: int):
    """Precision, recall, F1 and g-measure ``sqrt(P R)``; empty denominators give 0."""
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1, math.sqrt(p * r)


@dataclass
class EvalReport:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    g_measure: float
    label: str = ""
    per_mode: dict = field(default_factory=dict)

    @classmethod
    def from_intervals(cls, predicted, truth, label: str = "") -> EvalReport:
        tp, fp, fn = overlap_confusion(predicted, truth)
        return cls(tp, fp, fn, *prf(tp, fp, fn), label=label)

    def row(self) -> dict:
        return {"mode": self.label, "tp": self.tp, "fp": self.fp, "fn": self.fn, "precision": self.precision,
                "recall": self.recall, "f1": self.f1, "g_measure": self.g_measure}


_COLUMNS = ("mode", "tp", "fp", "fn", "precision", "recall", "f1", "g_measure")


def _rows(reports):
    if isinstance(reports, EvalReport):
        reports = list(reports.per_mode.values()) or [reports]
    return [r.row() for r in reports]


def format_table(reports) -> str:
    """Aligned plain-text table, one row per report."""
    rows = _rows(reports)
    cells = [list(_COLUMNS)]
    for r in rows:
        cells.append([str(r[c]) if c in ("mode", "tp", "fp", "fn") else f"{r[c]:.3f}" for c in _COLUMNS])
    widths = [max(len(row[i]) for row in cells) for i in range(len(_COLUMNS))]
    lines = []
    for k, row in enumerate(cells):
        lines.append("  ".join(v.ljust(w) if i == 0 else v.rjust(w) for i, (v, w) in enumerate(zip(row, widths))))
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_report_csv(reports, path, digest: str = ""):
    buf = io.StringIO()
    if digest:
        buf.write(f"# config_digest={digest}\n")
    w = csv.DictWriter(buf, fieldnames=_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in _rows(reports):
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    Path(path).write_text(buf.getvalue())


def ablation_run(traces: dict, truth, label_map=None) -> EvalReport:
    """Evaluate several scoring modes against the same truth intervals.

    Parameters
    ----------
    traces : dict
        ``mode -> ScoreTrace`` (or ``None`` when the checkpoint for that mode
        is missing).  All traces must have been built with the same threshold
        policy.
    truth : list of (start, end)

    Returns
    -------
    EvalReport
        Pooled counts over all modes with ``per_mode`` holding one report per
        mode, in the order given.
    """
    per_mode = {}
    for mode, trace in traces.items():
        if trace is None:
            raise ConfigError(f"no trained checkpoint available for mode {mode!r}")
        name = (label_map or {}).get(mode, mode)
        per_mode[mode] = EvalReport.from_intervals(trace.intervals, truth, label=name)
    tp = sum(r.tp for r in per_mode.values())
    fp = sum(r.fp for r in per_mode.values())
    fn = sum(r.fn for r in per_mode.values())
    return EvalReport(tp, fp, fn, *prf(tp, fp, fn), label="pooled", per_mode=per_mode)


# ------------------------------------------------------------------ plots


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save_svg(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})


def plot_trace_svg(trace, truth, path, title: str = ""):
    """Combined score over time with the threshold line and shaded truth intervals."""
    plt = _pyplot()
    plt.rcParams["svg.hashsalt"] = "hypad"
    fig, ax = plt.subplots(figsize=(10, 3))
    ts = np.asarray(trace.timestamps)
    for s, e in truth:
        ax.axvspan(s, e, color="tab:orange", alpha=0.25, lw=0)
    ax.plot(ts, trace.combined, lw=0.8, color="tab:blue", label="score")
    ax.axhline(trace.threshold, color="red", lw=1.0, label="threshold")
    for s, e in trace.intervals:
        ax.axvspan(s, e, ymin=0.0, ymax=0.04, color="black", lw=0)
    ax.set_xlabel("timestamp")
    ax.set_ylabel("score")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right", fontsize="small")
    fig.tight_layout()
    _save_svg(fig, path)
    plt.close(fig)


def plot_profile_svg(profile, path):
    """Bar plot of mean cosine distance per uncertainty bin (empty bins left blank)."""
    plt = _pyplot()
    plt.rcParams["svg.hashsalt"] = "hypad"
    fig, ax = plt.subplots(figsize=(6, 3))
    centers = 0.5 * (profile.bin_lo + profile.bin_hi)
    width = profile.bin_hi - profile.bin_lo
    occ = profile.count > 0
    ax.bar(centers[occ], profile.mean_cosine[occ], width=0.9 * width[occ], color="tab:blue")
    ax.set_xlim(0.0, 1.0)
    ax.set_xlabel("uncertainty")
    ax.set_ylabel("mean cosine distance")
    fig.tight_layout()
    _save_svg(fig, path)
    plt.close(fig)
