"""Time one IP sweep with the compiled kernel against the numpy fallback.

    python benchmarks/bench_ip_sweep.py --bins 2049 --frames 64 --sources 2 3 --threads 1 4
"""
import argparse
import os
import sys
import timeit

import numpy as np

if os.environ.get("EBIDLMA_BACKEND"):
    sys.exit("unset EBIDLMA_BACKEND so both backends can be compared")

from ebidlma import _backend  # noqa: E402
from ebidlma.separator import identity_demixing  # noqa: E402


def make_inputs(n_bins, n_frames, n_src, seed=0):
    rng = np.random.default_rng(seed)
    Xf = rng.standard_normal((n_bins, n_frames, n_src)) + 1j * rng.standard_normal((n_bins, n_frames, n_src))
    weights = rng.uniform(0.2, 3.0, (n_src, n_bins, n_frames))
    W0 = identity_demixing(n_bins, n_src)
    return np.ascontiguousarray(Xf), weights, W0


def bench(name, threads, Xf, weights, W0, repeat):
    sweep = _backend.get_ip_sweep(name)

    def run():
        W = W0.copy()
        sweep(W, Xf, weights, threads)

    run()
    return min(timeit.repeat(run, number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--bins", type=int, default=2049)
    parser.add_argument("--frames", type=int, default=64)
    parser.add_argument("--sources", type=int, nargs="+", default=[2, 3])
    parser.add_argument("--threads", type=int, nargs="+", default=[1, 4])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    print(f"backends available: {sorted(_backend.BACKENDS)}")
    print(f"{'N':>2} {'backend':>8} {'threads':>7} {'seconds':>9} {'speedup':>8}")
    for n_src in args.sources:
        Xf, weights, W0 = make_inputs(args.bins, args.frames, n_src)
        base = bench("python", 1, Xf, weights, W0, args.repeat)
        print(f"{n_src:>2} {'python':>8} {'-':>7} {base:9.4f} {1.0:8.2f}")
        if "cython" not in _backend.BACKENDS:
            continue
        ref = W0.copy()
        _backend.get_ip_sweep("python")(ref, Xf, weights, 1)
        for threads in args.threads:
            t = bench("cython", threads, Xf, weights, W0, args.repeat)
            W = W0.copy()
            _backend.get_ip_sweep("cython")(W, Xf, weights, threads)
            err = np.max(np.abs(W - ref))
            print(f"{n_src:>2} {'cython':>8} {threads:>7} {t:9.4f} {base / t:8.2f}   max |dW| {err:.1e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
