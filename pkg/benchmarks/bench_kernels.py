"""Compiled vs numpy kernel timings.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints the best-of-N wall time for each backend and the speed-up.
"""

import argparse
import math
import timeit

import numpy as np

from skylens import _kernels, mirror
from skylens._kernels import python as pyk


def cases():
    r = np.random.default_rng(0)
    x, y = r.uniform(-50, 50, (2, 256 * 256))
    prof = mirror.solve_profile(mirror.OpticalConfig())
    ta = np.linspace(0, mirror.OpticalConfig().tan_camera, 20000)
    L, F = 128, 300
    red, blue = r.random((2, 2 * L + 1, F))
    valid = np.ones_like(red, bool)
    tans = np.tan(np.radians(np.arange(60.0, 86.0)))
    return {
        "fbm 65k points, 4 octaves": lambda k: k.fbm(x, y, 7, 4, 2.0, 0.5),
        "trace_rays 20k rays": lambda k: k.trace_rays(prof.rho, prof.z, prof.slope, ta),
        "shear_stats 26 angles": lambda k: k.shear_stats(red, blue, valid, 250, tans, 200, 40,
                                                         L, 5),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels.compiled is None:
        print("compiled extension not built; only numpy timings are shown")
    print(f"{'kernel':<28}{'numpy ms':>10}{'cython ms':>11}{'speed-up':>10}")
    for name, fn in cases().items():
        t_py = min(timeit.repeat(lambda: fn(pyk), number=1, repeat=args.repeat)) * 1e3
        if _kernels.compiled is None:
            print(f"{name:<28}{t_py:>10.1f}{'-':>11}{'-':>10}")
            continue
        t_c = min(timeit.repeat(lambda: fn(_kernels.compiled), number=1,
                                repeat=args.repeat)) * 1e3
        speed = t_py / t_c if t_c > 0 else math.inf
        print(f"{name:<28}{t_py:>10.1f}{t_c:>11.1f}{speed:>9.1f}x")


if __name__ == "__main__":
    main()
