"""Training and scoring pipeline shared by the command line and the test-suite."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint, nets, scoring, series
from .config import RunConfig, from_text
from .errors import CheckpointError, ConfigError, TrainingDivergenceError

LOG_COLUMNS = ("epoch", "steps", "critic_x_loss", "critic_z_loss", "generator_loss", "cycle_loss", "gradient_penalty")


def prepare(cfg: RunConfig, frame: series.SeriesFrame):
    """Chronological split, then a [-1, 1] scaler fitted on the training prefix only."""
    train, test = series.chrono_split(frame, cfg.train_frac)
    scaler = series.MinMaxScaler.fit(train.values)
    scale = lambda f: series.SeriesFrame(f.timestamps, scaler.transform(f.values), f.labels)  # noqa: E731
    return scale(train), scale(test), scaler


@dataclass
class TrainResult:
    trainer: nets.Trainer
    log: list = field(default_factory=list)  # one dict per epoch
    diverged: TrainingDivergenceError | None = None
    last_good: dict | None = None  # parameter/optimizer arrays at the last completed epoch


def _mean_report(reports):
    keys = LOG_COLUMNS[2:]
    return {k: float(np.mean([getattr(r, k) for r in reports])) for k in keys}


def train_model(cfg: RunConfig, train: series.SeriesFrame, on_epoch=None) -> TrainResult:
    """Run ``cfg.epochs`` epochs of shuffled mini-batches over the training windows.

    A divergence stops training; the result then carries the error and the
    arrays of the last completed epoch instead of raising.
    """
    if train.channels != cfg.channels:
        raise ConfigError(f"data has {train.channels} channels, config says {cfg.channels}")
    windows = series.make_windows(train, cfg.window, cfg.train_stride).windows
    bundle = nets.ModelBundle(cfg.model_config(), seed=cfg.seed)
    trainer = nets.Trainer(bundle, cfg.training_mode, seed=cfg.seed)
    rng = np.random.default_rng([cfg.seed, 2])
    result = TrainResult(trainer)
    result.last_good = snapshot(trainer)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(windows))
        reports = []
        try:
            for start in range(0, len(order), cfg.batch):
                reports.append(trainer.train_step(windows[order[start:start + cfg.batch]]))
        except TrainingDivergenceError as exc:
            result.diverged = exc
            return result
        trainer.epoch = epoch + 1
        row = {"epoch": epoch + 1, "steps": trainer.steps, **_mean_report(reports)}
        result.log.append(row)
        result.last_good = snapshot(trainer)
        if on_epoch is not None:
            on_epoch(row)
    return result


def snapshot(trainer: nets.Trainer) -> dict:
    arrays = {f"model/{k}": v.copy() for k, v in trainer.bundle.state_arrays().items()}
    arrays.update({k: v.copy() for k, v in trainer.optimizer_arrays().items()})
    arrays["trainer/epoch"] = np.array([trainer.epoch], dtype=np.float64)
    arrays["trainer/steps"] = np.array([trainer.steps], dtype=np.float64)
    return arrays


def log_text(rows, digest: str = "") -> str:
    buf = io.StringIO()
    if digest:
        buf.write(f"# config_digest={digest}\n")
    w = csv.DictWriter(buf, fieldnames=LOG_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def save_checkpoint(path, cfg: RunConfig, arrays: dict, scaler: series.MinMaxScaler) -> str:
    out = dict(arrays)
    out["scaler/lo"] = scaler.lo
    out["scaler/hi"] = scaler.hi
    return checkpoint.save(path, cfg.to_text(paths=False), out)


@dataclass
class LoadedRun:
    cfg: RunConfig
    bundle: nets.ModelBundle
    scaler: series.MinMaxScaler
    digest: str
    arrays: dict


def load_checkpoint(path) -> LoadedRun:
    text, arrays, digest = checkpoint.load(path)
    cfg = from_text(text)
    bundle = nets.ModelBundle(cfg.model_config(), seed=cfg.seed, zero=True)
    try:
        bundle.load_state_arrays({k[len("model/"):]: v for k, v in arrays.items() if k.startswith("model/")})
        scaler = series.MinMaxScaler(arrays["scaler/lo"], arrays["scaler/hi"])
    except KeyError as exc:
        raise CheckpointError(f"checkpoint lacks array {exc}") from None
    return LoadedRun(cfg, bundle, scaler, digest, arrays)


def score_frame(bundle: nets.ModelBundle, cfg: RunConfig, frame: series.SeriesFrame, modes=None):
    """Score an already-scaled frame; returns ``(traces by mode, WindowOutputs, WindowSet)``.

    ``modes`` defaults to ``[cfg.mode]``; every requested mode must be
    compatible with how the model was trained.
    """
    modes = list(modes or [cfg.mode])
    hyperbolic = cfg.training_mode == "hyperbolic"
    for m in modes:
        if scoring.training_mode(m) != cfg.training_mode:
            raise ConfigError(f"mode {m} needs a {scoring.training_mode(m)} checkpoint, this one is {cfg.training_mode}")
    ws = series.make_windows(frame, cfg.window, cfg.stride)
    out = nets.infer_windows(bundle, ws.windows, hyperbolic)
    traces = {}
    for m in modes:
        traces[m] = scoring.build_trace(m, frame.timestamps, ws.origins, cfg.window, ws.windows, out.reconstruction,
                                        out.critic.reshape(-1), out.h, out.h_rec, k=cfg.k, min_gap=cfg.min_gap,
                                        how=cfg.aggregate, geometry=bundle.cfg.geometry)
    return traces, out, ws


def run_experiment(cfg: RunConfig, frame: series.SeriesFrame, modes=None):
    """Train on the prefix, score the suffix; convenience wrapper for evaluations."""
    train, test, scaler = prepare(cfg, frame)
    result = train_model(cfg, train)
    if result.diverged is not None:
        raise result.diverged
    traces, out, ws = score_frame(result.trainer.bundle, cfg, test, modes)
    return result, test, traces, out

