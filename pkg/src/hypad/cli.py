"""``hypad`` command line: synth, train, detect, eval and analyze.

Exit codes: 0 success, 1 other package error, 2 bad configuration or
arguments, 3 training diverged (the last good checkpoint is kept).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import config as cfgmod
from . import evalkit, pipeline, scoring, series
from .errors import ConfigError, HypadError

log = logging.getLogger("hypad")

# flag name -> config key
_FLAGS = {
    "mode": str, "epochs": int, "seed": int, "window": int, "stride": int, "train_stride": int, "batch": int,
    "lr": float, "train_frac": float, "k": float, "min_gap": int, "aggregate": str,
}


def _add_config_flags(p, keys):
    p.add_argument("--config", help="keyed-text config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    for key in keys:
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=_FLAGS[key], default=None)


def _overrides(args, keys) -> dict:
    flags = {k: getattr(args, k) for k in keys}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        flags[k] = v
    if getattr(args, "data", None):
        flags["data"] = args.data
    if getattr(args, "out", None):
        flags["out"] = args.out
    return flags


def _file_text(args):
    return Path(args.config).read_text() if getattr(args, "config", None) else None


def _load_data(cfg: cfgmod.RunConfig):
    if not cfg.data:
        raise ConfigError("no data file given (--data or 'data = ...' in the config)")
    return series.load_csv(cfg.data, cfg.labels or None)


def cmd_synth(args) -> int:
    spec = series.SynthSpec.from_text(Path(args.spec).read_text()) if args.spec else series.SynthSpec()
    if args.seed is not None:
        spec = series.SynthSpec(spec.length, spec.period, spec.amplitude, spec.noise, args.seed, spec.anomalies)
    frame = series.synth_generate(spec)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    series.save_csv(frame, out)
    print(f"wrote {len(frame)} rows and {len(frame.labels)} labels to {out}")
    return 0


def cmd_train(args) -> int:
    keys = list(_FLAGS)
    cfg = cfgmod.resolve(_file_text(args), _overrides(args, keys))
    frame = _load_data(cfg)
    if frame.channels != cfg.channels:
        cfg = cfg.replace(channels=frame.channels)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    train, _test, scaler = pipeline.prepare(cfg, frame)
    digest = cfg.digest()
    result = pipeline.train_model(cfg, train, on_epoch=lambda row: log.info("epoch %d  %s", row["epoch"], row))
    (out / "train_log.csv").write_text(pipeline.log_text(result.log, digest))
    ck = out / "checkpoint.hyp"
    pipeline.save_checkpoint(ck, cfg, result.last_good, scaler)
    if result.diverged is not None:
        print(f"training diverged: {result.diverged}; kept checkpoint of epoch {len(result.log)} at {ck}",
              file=sys.stderr)
        return 3
    print(f"trained {len(result.log)} epochs; checkpoint {ck} (config {digest[:12]})")
    return 0


def _loaded(args, keys):
    run = pipeline.load_checkpoint(args.checkpoint)
    flags = _overrides(args, keys)
    file_vals = cfgmod.parse_config_text(_file_text(args)) if getattr(args, "config", None) else {}
    merged = {**file_vals, **{k: v for k, v in flags.items() if v is not None}}
    merged = {k: cfgmod._cast(k, v) for k, v in merged.items()}
    cfg = run.cfg.replace(**merged)
    cfgmod.check_compatible(run.cfg, cfg)
    return run, cfg


def _target_frame(run, cfg, part: str):
    frame = _load_data(cfg)
    if part == "all":
        return series.SeriesFrame(frame.timestamps, run.scaler.transform(frame.values), frame.labels)
    # the stored scaler, not this file's training prefix, defines the scaling
    test = series.chrono_split(frame, cfg.train_frac)[1]
    return series.SeriesFrame(test.timestamps, run.scaler.transform(test.values), test.labels)


def cmd_detect(args) -> int:
    keys = ["mode", "window", "stride", "k", "min_gap", "aggregate", "train_frac"]
    run, cfg = _loaded(args, keys)
    frame = _target_frame(run, cfg, args.part)
    traces, _, _ = pipeline.score_frame(run.bundle, cfg, frame)
    trace = traces[cfg.mode]
    out = Path(args.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    scoring.write_trace_csv(trace, out / "scores.csv", run.digest)
    scoring.write_intervals_csv(trace.detected, out / "intervals.csv", run.digest)
    if args.plot:
        evalkit.plot_trace_svg(trace, frame.labels, out / "scores.svg", title=cfg.mode)
    print(f"{len(trace.detected)} interval(s) above threshold {trace.threshold:.4g}; wrote {out / 'scores.csv'}")
    for s, e, p in trace.detected:
        print(f"  {s}-{e}  peak {p:.4g}")
    return 0


def cmd_eval(args) -> int:
    pred = series.load_intervals(args.pred)
    truth = series.load_intervals(args.truth)
    report = evalkit.EvalReport.from_intervals(pred, truth, label=Path(args.pred).stem)
    sys.stdout.write(evalkit.format_table([report]))
    if args.csv:
        evalkit.write_report_csv([report], args.csv)
    return 0


def cmd_analyze(args) -> int:
    keys = ["train_frac"]
    run, cfg = _loaded(args, keys)
    if cfg.training_mode != "hyperbolic":
        raise ConfigError("analyze needs a hyperbolic checkpoint; this one was trained in euclidean mode")
    frame = _target_frame(run, cfg, args.part)
    from . import nets

    ws = series.make_windows(frame, cfg.window, cfg.stride)
    outputs = nets.infer_windows(run.bundle, ws.windows, hyperbolic=True)
    profile = scoring.uncertainty_profile(outputs.h, outputs.h_rec, bins=args.bins)
    out = Path(args.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "uncertainty_bins.csv").open("w") as fh:
        fh.write(f"# config_digest={run.digest} skipped={profile.skipped}\n")
        fh.write("bin_lo,bin_hi,count,mean_cosine\n")
        for lo, hi, c, m in zip(profile.bin_lo, profile.bin_hi, profile.count, profile.mean_cosine):
            fh.write(f"{lo!r},{hi!r},{int(c)},{'' if c == 0 else repr(float(m))}\n")
    evalkit.plot_profile_svg(profile, out / "uncertainty_bins.svg")
    for lo, hi, c, m in zip(profile.bin_lo, profile.bin_hi, profile.count, profile.mean_cosine):
        print(f"[{lo:.1f}, {hi:.1f})  n={int(c):6d}  {'-' if c == 0 else f'{m:.4f}'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hypad", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic sine series with injected anomalies")
    p.add_argument("--spec", help="keyed-text synthetic spec (defaults when omitted)")
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write a checkpoint plus a loss log")
    p.add_argument("--data")
    p.add_argument("--out")
    _add_config_flags(p, list(_FLAGS))
    p.set_defaults(func=cmd_train)

    for name, func, keys in (("detect", cmd_detect, ["mode", "window", "stride", "k", "min_gap", "aggregate",
                                                       "train_frac"]),
                             ("analyze", cmd_analyze, ["train_frac"])):
        p = sub.add_parser(name, help="score a series" if name == "detect" else "uncertainty/cosine-distance bins")
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data")
        p.add_argument("--out")
        p.add_argument("--part", choices=("test", "all"), default="test",
                       help="score the chronological test split (default) or the whole file")
        _add_config_flags(p, keys)
        if name == "detect":
            p.add_argument("--plot", action="store_true", help="also write an SVG score trace")
        else:
            p.add_argument("--bins", type=int, default=10)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="overlap precision/recall/F1 of predicted vs true intervals")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (HypadError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
