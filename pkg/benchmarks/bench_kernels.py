"""Path-kernel throughput: compiled kernel vs numpy twin vs generic stepping.

    python benchmarks/bench_kernels.py [--paths N] [--steps N] [--repeat R]

Prints path-steps per second for each process kind and checks that the
backends agree on the same increments.
"""
import argparse
import time

import numpy as np

from fibril import _kernels_py, sde
from fibril.models import get_model
from fibril.reduction import so2_charge

try:
    from fibril import _kernels
except ImportError:
    _kernels = None


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--generic-paths", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    m = get_model("planar-rotor")
    sc = sde.PhysicalScales()
    dt = 1e-3
    pot = np.zeros(4)
    print(f"compiled kernel available: {_kernels is not None}; default backend: {sde.BACKEND}")
    print(f"{'kind':<14}{'backend':<10}{'paths':>8}{'steps/s':>14}{'speedup':>10}")
    for mode, kind in enumerate(sde.KINDS):
        s0 = np.array([1.0, 0.0, 0.5, 0.0] + ([0.0] if kind == "adapted" else []))
        dW = np.random.default_rng(mode).normal(0.0, np.sqrt(dt), (args.paths, args.steps, 4))
        k = 1.0 if kind.startswith("reduced") else 0.0
        run = lambda mod: mod.rotor_chunk(mode, s0, dW, dt, 1.0, k, pot, m.chart_radius, False)
        t_np, r_np = best_of(lambda: run(_kernels_py), args.repeat)
        base = args.paths * args.steps / t_np
        rows = [("numpy", args.paths, base)]
        if _kernels is not None:
            t_cy, r_cy = best_of(lambda: run(_kernels), args.repeat)
            assert np.allclose(r_cy[0], r_np[0], atol=1e-12), "compiled and numpy kernels disagree"
            rows.append(("cython", args.paths, args.paths * args.steps / t_cy))
        ng = min(args.generic_paths, args.paths)
        irrep = so2_charge(1) if kind.startswith("reduced") else None
        t_g, _ = best_of(lambda: sde.simulate(m, sc, kind, s0, args.steps * dt, dt, ng, 0, irrep=irrep,
                                              backend="generic", dW=dW[:ng], max_failure_fraction=1.0), 1)
        rows.append(("generic", ng, ng * args.steps / t_g))
        for name, n, rate in rows:
            print(f"{kind:<14}{name:<10}{n:>8}{rate:>14.3e}{rate / base:>10.3g}")


if __name__ == "__main__":
    main()
