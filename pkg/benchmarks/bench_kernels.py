"""Time the numba and numpy versions of every hot kernel on the same inputs.

    python3 benchmarks/bench_kernels.py [--scale 1.0] [--repeat 5]

Each kernel is called once untimed (JIT compile), then the best of ``--repeat``
runs is reported.  Outputs of the two versions are checked for agreement.
"""
import argparse
import time

import numpy as np

from sauc import _kernels
from sauc._backend import HAS_NUMBA


def _inputs(scale: float, rng):
    n_dist = int(100_000 * scale)
    n_qr = int(300_000 * scale)
    n_pava = int(20_000 * scale)
    mu = rng.uniform(0.05, 20.0, n_dist)
    alpha = rng.uniform(0.1, 10.0, n_dist)
    y = rng.integers(0, 30, n_dist).astype(float)
    p = rng.uniform(0.01, 0.99, n_dist)
    x = rng.gamma(0.5, 1.0, n_qr)
    yq = rng.poisson(x).astype(float)
    k = int(0.95 * n_qr)
    yp = np.cumsum(rng.normal(0.0, 1.0, n_pava)) * 0.1 + rng.normal(0.0, 1.0, n_pava)
    wp = rng.uniform(0.5, 2.0, n_pava)
    return {
        "cdf": (_kernels.NB, mu, alpha, y),
        "quantile": (_kernels.NB, mu, alpha, p),
        "qr_eval": (x, yq, 0.8, 0.95, k - 1, k - 1),
        "pava": (yp, wp),
    }


def _best(fn, args, repeat):
    fn(*args)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=float, default=1.0)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not HAS_NUMBA:
        print("numba is not installed; only the numpy timings are meaningful")
    cases = _inputs(args.scale, np.random.default_rng(args.seed))
    print(f"{'kernel':10s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}  max |diff|")
    for name, call_args in cases.items():
        t_nb, out_nb = _best(_kernels.numba_impl[name], call_args, args.repeat)
        t_np, out_np = _best(_kernels.numpy_impl[name], call_args, args.repeat)
        diff = np.max(np.abs(np.asarray(out_nb, dtype=float) - np.asarray(out_np, dtype=float)))
        print(f"{name:10s} {t_nb * 1e3:10.2f} {t_np * 1e3:10.2f} {t_np / t_nb:8.1f}x  {diff:.2e}")


if __name__ == "__main__":
    main()
