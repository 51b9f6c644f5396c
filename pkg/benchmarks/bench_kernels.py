"""Time the compiled and pure-Python kernels on identical inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]

Reports the best-of-N wall time per call and the speed-up. The Cython row is
skipped when the extension is not built.
"""

import argparse
import timeit

import numpy as np

from icapm_breaks import _pykernels
from icapm_breaks.icapm import QmlObjective
from icapm_breaks.simulate import DgpSpec, reference_params, simulate_icapm

try:
    from icapm_breaks import _kernels
except ImportError:
    _kernels = None


def filter_case(T):
    R, info, _ = simulate_icapm(DgpSpec(T=T, seed=0))
    obj = QmlObjective(R, info)
    theta = np.ascontiguousarray(reference_params().to_vector())
    args = (theta, obj.R, obj.Z, obj.Zi, obj.Zs, obj._h1(theta), obj.clamp, None)
    return lambda k: k.garch_m_filter(*args)


def dp_case(T, m):
    y = np.random.default_rng(0).standard_normal(T)
    y = np.ascontiguousarray(y - y.mean())
    h = max(2, T // 10)
    return lambda k: k.segment_dp(y, m, h, 0.0)


def best(fn, kernels, repeat):
    n = 1
    while timeit.timeit(lambda: fn(kernels), number=n) < 0.2 and n < 10_000:
        n *= 2
    return min(timeit.repeat(lambda: fn(kernels), number=n, repeat=repeat)) / n


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    cases = [
        ("filter T=242", filter_case(242)),
        ("filter T=1000", filter_case(1000)),
        ("dp T=242 M=5", dp_case(242, 5)),
        ("dp T=1000 M=5", dp_case(1000, 5)),
    ]
    print(f"{'case':<16}{'python':>12}{'cython':>12}{'speed-up':>10}")
    for name, fn in cases:
        tp = best(fn, _pykernels, args.repeat)
        if _kernels is None:
            print(f"{name:<16}{tp * 1e3:>10.3f}ms{'n/a':>12}{'':>10}")
            continue
        tc = best(fn, _kernels, args.repeat)
        print(f"{name:<16}{tp * 1e3:>10.3f}ms{tc * 1e3:>10.3f}ms{tp / tc:>9.1f}x")


if __name__ == "__main__":
    main()
