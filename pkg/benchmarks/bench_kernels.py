"""Compare the compiled LSTM kernels against the NumPy reference.

Times a forward+backward pass over a few representative shapes and prints
the per-call cost of each backend plus the speedup.  Run from a checkout::

    python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from cfgdec.kernels import numpy_ref

try:
    from cfgdec.kernels import _core
except ImportError:
    _core = None

# (steps, input_dim, hidden): short encoder, long encoder, big decoder
SHAPES = [(12, 316, 200), (48, 316, 200), (16, 500, 200), (12, 28, 16)]


def bench_one(impl, wmat, xs, repeats):
    d_hs = np.ones((xs.shape[0], wmat.shape[1] // 4))
    # warm-up outside the timed region
    hs, cs, gates = impl.lstm_forward(wmat, xs)
    impl.lstm_backward(wmat, xs, hs, cs, gates, d_hs)
    t0 = time.perf_counter()
    for _ in range(repeats):
        hs, cs, gates = impl.lstm_forward(wmat, xs)
        impl.lstm_backward(wmat, xs, hs, cs, gates, d_hs)
    return (time.perf_counter() - t0) / repeats


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    print(f"{'steps':>5} {'in':>4} {'hid':>4} {'numpy ms':>9} "
          f"{'compiled ms':>12} {'speedup':>8}")
    for steps, d, h in SHAPES:
        wmat = rng.uniform(-0.08, 0.08, size=(1 + d + h, 4 * h))
        xs = rng.standard_normal((steps, d))
        t_np = bench_one(numpy_ref, wmat, xs, args.repeats)
        if _core is None:
            print(f"{steps:>5} {d:>4} {h:>4} {t_np * 1e3:>9.3f} "
                  f"{'not built':>12} {'-':>8}")
            continue
        t_c = bench_one(_core, wmat, xs, args.repeats)
        print(f"{steps:>5} {d:>4} {h:>4} {t_np * 1e3:>9.3f} "
              f"{t_c * 1e3:>12.3f} {t_np / t_c:>8.2f}x")
    if _core is None:
        print("\ncompiled backend missing; reinstall to build it")


if __name__ == "__main__":
    main()
