"""Compare the compiled and NumPy kernel backends.

    python benchmarks/bench_kernels.py [--samples 500] [--level 3]

Reports per-sample Monte Carlo solve time, KDE time per evaluation point,
and the cost of evaluating a truncated series for reference.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from sgpdf import _backend
from sgpdf.fem import build_mesh
from sgpdf.kl import CovarianceSpec, build_kl_field
from sgpdf.mc import sample_parameters, solve_batch
from sgpdf.series import CumulantVector, ed_series


def best_of(fn, repeat=3):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--samples", type=int, default=500)
    ap.add_argument("--level", type=int, default=3)
    ap.add_argument("--kde-samples", type=int, default=1_000_000)
    ap.add_argument("--kde-points", type=int, default=20)
    args = ap.parse_args(argv)

    mesh = build_mesh(args.level)
    kl = build_kl_field(mesh, CovarianceSpec(0.8))
    eps = sample_parameters(args.samples, kl.N, 0)
    rng = np.random.default_rng(0)
    data = rng.standard_normal(args.kde_samples)
    x = np.linspace(-3, 3, args.kde_points)

    print(f"backends available: {sorted(_backend.BACKENDS)} (default {_backend.DEFAULT})")
    print(f"level {args.level}: {mesh.interior_nodes.size} interior unknowns")
    results = {}
    for name, mod in _backend.BACKENDS.items():
        t_mc = best_of(lambda: solve_batch(kl, "average", eps, backend=name)) / args.samples
        out = np.empty(x.size)
        t_kde = best_of(lambda: mod.kde_eval(data, x, 0.1, out)) / x.size
        results[name] = (t_mc, t_kde)
        print(f"{name:>9}: MC solve {t_mc * 1e3:8.3f} ms/sample   KDE {t_kde * 1e3:8.3f} ms/point "
              f"(M={args.kde_samples})")
    if "compiled" in results:
        py, c = results["python"], results["compiled"]
        print(f"speedup compiled/python: MC {py[0] / c[0]:.2f}x   KDE {py[1] / c[1]:.2f}x")

    series = ed_series(CumulantVector([0.0, 1.0, -0.79, 1.17, -2.55, 7.45]), 2)
    grid = np.linspace(-6, 6, 10_000)
    t_series = best_of(lambda: series(grid)) / grid.size
    print(f"series evaluation: {t_series * 1e9:.1f} ns/point")


if __name__ == "__main__":
    main()
