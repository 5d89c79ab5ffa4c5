"""Time the compiled kernels against the numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat N]

Prints best-of-N wall time per kernel and backend, and the speed-up.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from hypad._kernels import _reference

try:
    from hypad._kernels import _core
except ImportError:  # extension not built
    _core = None


def _cases(rng):
    T, B, H = 100, 64, 16
    xproj = rng.normal(size=(T, B, 4 * H))
    U = rng.normal(scale=0.3, size=(H, 4 * H))
    hs, cs, gates = _reference.lstm_forward(xproj, U)
    dhs = rng.normal(size=hs.shape)
    X = rng.normal(size=(64, 100))
    Y = rng.normal(size=(64, 100))
    return {
        "lstm_forward  T=100 B=64 H=16": lambda m: m.lstm_forward(xproj, U),
        "lstm_backward T=100 B=64 H=16": lambda m: m.lstm_backward(dhs, U, hs, cs, gates),
        "dtw_rows      64 x (100 vs 100)": lambda m: m.dtw_rows(X, Y, -1),
        "dtw_rows      64 x 100, radius 10": lambda m: m.dtw_rows(X, Y, 10),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    backends = [("python", _reference)] + ([("compiled", _core)] if _core is not None else [])
    print(f"{'kernel':36s} " + " ".join(f"{name:>12s}" for name, _ in backends) + "   speed-up")
    for label, fn in _cases(rng).items():
        times = []
        for _, mod in backends:
            number = 3
            best = min(timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeat)) / number
            times.append(best)
        cols = " ".join(f"{t * 1e3:10.3f}ms" for t in times)
        speed = f"{times[0] / times[1]:8.1f}x" if len(times) == 2 else "       n/a"
        print(f"{label:36s} {cols}  {speed}")


if __name__ == "__main__":
    main()
