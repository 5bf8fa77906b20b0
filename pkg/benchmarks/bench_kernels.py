"""Micro-benchmarks for the convolution/pooling kernels.

Times the pure-numpy fallback against the compiled backend on shapes
matching both model presets.  Run as a script:

    python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from rpsm import _kernels_py

BACKENDS = {"python": _kernels_py}
try:
    from rpsm import _kernels
    BACKENDS["cython"] = _kernels
except ImportError:
    pass


def timeit(fn, *args, budget=0.4, warmup=2):
    for _ in range(warmup):
        fn(*args)
    reps = 0
    t0 = time.perf_counter()
    while True:
        fn(*args)
        reps += 1
        elapsed = time.perf_counter() - t0
        if elapsed >= budget and reps >= 3:
            return elapsed / reps


def cases():
    rng = np.random.default_rng(0)
    out = []
    for tag, (n, c, hw) in (("desk 5x16x16", (5, 16, 16)),
                            ("full 1x128x46", (1, 128, 46))):
        x = rng.standard_normal((n, c, hw, hw))
        col_shape = _kernels_py.im2col(x, 3, 3, 1, 1).shape
        col = rng.standard_normal(col_shape)
        pooled, idx = _kernels_py.maxpool_forward(x, 2, 2)
        dout = rng.standard_normal(pooled.shape)
        out.append(("im2col %s" % tag, "im2col", (x, 3, 3, 1, 1)))
        out.append(("col2im %s" % tag, "col2im", (col, x.shape, 3, 3, 1, 1)))
        out.append(("maxpool_fwd %s" % tag, "maxpool_forward", (x, 2, 2)))
        out.append(("maxpool_bwd %s" % tag, "maxpool_backward", (dout, idx, hw, hw)))
    return out


def main():
    names = list(BACKENDS)
    print("backends: %s" % ", ".join(names))
    if len(names) == 1:
        print("compiled backend unavailable; timing the fallback only")
    header = "%-28s" + "  %12s" * len(names) + ("  %8s" % "speedup" if len(names) == 2 else "")
    print(header % tuple(["kernel"] + names))
    for label, fname, args in cases():
        times = [timeit(getattr(BACKENDS[b], fname), *args) for b in names]
        row = "%-28s" % label + "".join("  %10.3fms" % (t * 1e3) for t in times)
        if len(times) == 2:
            row += "  %7.2fx" % (times[0] / times[1])
        print(row)


if __name__ == "__main__":
    main()
