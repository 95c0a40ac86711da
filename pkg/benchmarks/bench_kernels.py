"""Time the numba and numpy car-following simulators on the same padded batch.

Usage::

    python3 benchmarks/bench_kernels.py --events 200 --steps 300 --repeat 5
"""

import argparse
import time

import numpy as np

from trafficlab import _jit, kernels, models

P = np.array([25.0, 1.4, 1.2, 1.8, 4.0, 2.5])
KINDS = {
    "idm-baseline": models.KERNEL_IDM_BASELINE,
    "idm-improved-final": models.KERNEL_IDM_IMPROVED_FINAL,
}


def make_batch(m, n, seed=0):
    rng = np.random.default_rng(seed)
    lv = np.cumsum(rng.normal(0, 0.2, (m, n)), axis=1) + rng.uniform(5, 20, (m, 1))
    lv = np.maximum(lv, 0.0)
    lengths = rng.integers(n // 2, n + 1, m)
    return rng.uniform(10, 40, m), rng.uniform(5, 20, m), lv, lengths


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--events", type=int, default=200)
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    s0, v0, lv, lengths = make_batch(args.events, args.steps)
    print(f"batch: {args.events} events x {args.steps} steps, best of {args.repeat}")
    for name, kind in KINDS.items():
        numpy_s = best_of(lambda: kernels.simulate_batch_numpy(kind, P, s0, v0, lv, lengths, 0.1), args.repeat)
        line = f"{name:20s} numpy {numpy_s * 1e3:9.2f} ms"
        if _jit.HAVE_NUMBA:
            kernels.simulate_batch_numba(kind, P, s0, v0, lv, lengths, 0.1)  # compile / load cache
            numba_s = best_of(lambda: kernels.simulate_batch_numba(kind, P, s0, v0, lv, lengths, 0.1), args.repeat)
            line += f"   numba {numba_s * 1e3:9.2f} ms   speedup {numpy_s / numba_s:6.1f}x"
        else:
            line += "   numba unavailable"
        print(line)


if __name__ == "__main__":
    main()
