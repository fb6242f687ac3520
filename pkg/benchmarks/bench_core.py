"""Time the compiled and pure-Python simulation kernels on identical inputs.

Usage: python benchmarks/bench_core.py [--repeat R] [--depth N]

Both backends consume the same random stream, so their outputs are also
compared for equality.
"""

import argparse
import time

import numpy as np

from endotree import _backend
from endotree.model import builtin
from endotree.montecarlo import RngStream, refresh_rates


def _cases(model, depth):
    mc, nc = np.cumsum(model.mu), np.cumsum(model.nu)
    rates, cdf = refresh_rates(model)
    f = np.array([-1.0, 1.0])
    lags = np.array([0.2, 1.0])
    return {
        "sample_roots": lambda core, g: core.sample_roots(model.phi, depth, mc, nc, 2_000, g),
        "coupling_trials": lambda core, g: core.coupling_trials(model.phi, depth, mc, nc,
                                                                2_000, g),
        "autocov_trials": lambda core, g: core.autocov_trials(model.phi, depth, rates, cdf,
                                                              mc, nc, f, lags, 500, g),
    }


def _best(fn, core, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        g = RngStream(0).generator()
        t0 = time.perf_counter()
        out = fn(core, g)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--depth", type=int, default=6)
    args = ap.parse_args(argv)

    py = _backend.get("python")
    try:
        cy = _backend.get("cython")
    except ImportError:
        cy = None
        print("compiled core not built; timing the Python kernels only")

    model = builtin("ANDOR-NOISE")
    print(f"{'kernel':<16} {'python [s]':>11} {'cython [s]':>11} {'speedup':>8}  same")
    for name, fn in _cases(model, args.depth).items():
        t_py, out_py = _best(fn, py, args.repeat)
        if cy is None:
            print(f"{name:<16} {t_py:>11.4f}")
            continue
        t_cy, out_cy = _best(fn, cy, args.repeat)
        same = out_py == out_cy
        print(f"{name:<16} {t_py:>11.4f} {t_cy:>11.4f} {t_py / t_cy:>7.1f}x  {same}")


if __name__ == "__main__":
    main()
