"""Time the numba and pure-numpy hot kernels on identical inputs.

    python3 benchmarks/bench_kernels.py            # desk-scale sizes
    python3 benchmarks/bench_kernels.py --quick    # smoke run

The first numba call includes compilation and is reported separately.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from qsvmlab import _kernels_numba, _kernels_numpy
from qsvmlab.kernel import exact_gram
from qsvmlab.statevector import FeatureMapConfig


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(quick: bool):
    rng = np.random.default_rng(0)
    q = 4 if quick else 8
    m = 32 if quick else 256
    X = rng.random((m, q))
    thetas = rng.uniform(-np.pi, np.pi, (17 if quick else 33, 2 * q))
    fm = FeatureMapConfig(q)
    states = _kernels_numpy.feature_states(X, fm.repetitions, fm.angle_scale)
    y = np.where(rng.random(m) < 0.5, -1, 1).astype(np.int64)
    y[:2] = (-1, 1)
    K = exact_gram(X, fm)
    steps = 300 if quick else 3000
    idx = rng.integers(0, m, steps)
    return {
        f"feature_states M={m} q={q}": lambda b: b.feature_states(X, fm.repetitions, fm.angle_scale),
        f"variational_expectations P={len(thetas)} M={m}": lambda b: b.variational_expectations(
            states, thetas, q, 1
        ),
        f"pegasos_exact M={m} T={steps}": lambda b: b.pegasos_exact(K, y, 0.1, idx, 0.0),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    repeat = 1 if args.quick else args.repeat
    print(f"{'kernel':44s} {'numpy [s]':>10s} {'numba [s]':>10s} {'compile [s]':>12s} {'speedup':>8s}")
    rows = []
    for name, fn in cases(args.quick).items():
        t0 = time.perf_counter()
        fn(_kernels_numba)
        first = time.perf_counter() - t0
        t_np, out_np = _best(lambda: fn(_kernels_numpy), repeat)
        t_nb, out_nb = _best(lambda: fn(_kernels_numba), repeat)
        a = out_np if isinstance(out_np, tuple) else (out_np,)
        b = out_nb if isinstance(out_nb, tuple) else (out_nb,)
        for u, v in zip(a, b):
            if not np.allclose(u, v, rtol=1e-12, atol=1e-12):
                raise SystemExit(f"{name}: backends disagree")
        print(f"{name:44s} {t_np:10.4f} {t_nb:10.4f} {max(first - t_nb, 0.0):12.2f} {t_np / t_nb:8.1f}x")
        rows.append((name, t_np, t_nb))
    return rows


if __name__ == "__main__":
    main()
