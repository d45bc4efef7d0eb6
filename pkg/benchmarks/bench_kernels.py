"""Time the per-point kernels under the numba and the numpy backends.

Usage::

    python3 benchmarks/bench_kernels.py [--points 65536] [--repeat 5]

Both backends run on the same batches; the script also reports the largest
disagreement between them so a speedup never hides a wrong answer.
"""

import argparse
import time

import numpy as np

from qma import kernels
from qma.pfaffian import SkewMatrix


def _skew_batch(rng, count, m):
    A = rng.standard_normal((count, m, m)) + 1j * rng.standard_normal((count, m, m))
    return A - np.swapaxes(A, -1, -2) + SkewMatrix.standard(m // 2).dense()


def _hyperhermitian_batch(rng, count, n):
    # (count, n, n, 4) quaternion arrays with H_ij = conj(H_ji), near 2n * identity
    Q = rng.standard_normal((count, n, n, 4))
    Qc = Q * np.array([1.0, -1.0, -1.0, -1.0])
    H = 0.1 * (Q + np.swapaxes(Qc, 1, 2))
    H[:, np.arange(n), np.arange(n), 0] += 2 * n
    return H


def _time(fn, arg, repeat):
    fn(arg[:16])  # compile / warm caches outside the timed loop
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(arg)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--points", type=int, default=1 << 16)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    rng = np.random.default_rng(args.seed)

    cases = [
        ("pfaffian 4x4", kernels.pfaffian_batch, _skew_batch(rng, args.points, 4)),
        ("pfaffian 8x8", kernels.pfaffian_batch, _skew_batch(rng, args.points, 8)),
        ("inverse 4x4", kernels.inverse_batch, _skew_batch(rng, args.points, 4)),
        ("moore 2x2", kernels.moore_det_batch, _hyperhermitian_batch(rng, args.points, 2)),
        ("moore 3x3", kernels.moore_det_batch, _hyperhermitian_batch(rng, args.points, 3)),
    ]
    try:
        start = kernels.set_backend("numba")
    except RuntimeError:
        print("numba is not available; nothing to compare")
        return 1
    print(f"{'kernel':28s} {'numpy [s]':>11s} {'numba [s]':>11s} {'speedup':>8s} {'max diff':>10s}")
    for name, fn, arg in cases:
        kernels.set_backend("numpy")
        t_np, ref = _time(fn, arg, args.repeat)
        kernels.set_backend("numba")
        t_nb, got = _time(fn, arg, args.repeat)
        diff = float(np.max(np.abs(np.asarray(got) - np.asarray(ref))))
        print(f"{name:28s} {t_np:11.4f} {t_nb:11.4f} {t_np / t_nb:8.1f} {diff:10.2e}")
    kernels.set_backend(start)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
