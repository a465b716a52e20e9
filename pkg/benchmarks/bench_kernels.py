"""Compiled vs numpy kernels on the three hot loops.

    python benchmarks/bench_kernels.py [--repeat 3] [--json out.json]

Each case runs both backends on identical inputs, checks the outputs agree,
and reports the best wall time of ``--repeat`` runs.
"""
from __future__ import annotations

import argparse
import json
import time

import numpy as np

from neurorrm import _pykernels
from neurorrm.configspace import feasible_space
from neurorrm.linkbudget import build_capacity_table

try:
    from neurorrm import _kernels
except ImportError:                     # extension not built
    _kernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return bool(np.array_equal(np.asarray(a), np.asarray(b)))


def cases(rng):
    space = feasible_space(8, build_capacity_table(), 115.0)
    demands = rng.uniform(0, 1.2e9, (20, 8))
    w = (1e-6, 1e-2, 1e-10)
    yield ("oracle: 20 demands x %d configs" % len(space),
           lambda k: k.best_configs(space.capacity, space.total_power, space.total_bandwidth,
                                    demands, *w))
    x = rng.random((500, 220))
    au, av = np.array([0.25]), np.array([0.25])
    yield ("TEM: 500 x 220 inputs, T=32", lambda k: k.tem_encode_batch(x, 32, au, av, 1.0))
    wt = rng.normal(0, 0.1, (220, 512))
    s = (rng.random((220, 32)) < 0.3).astype(np.uint8)
    yield ("LIF: 220 -> 512, T=32", lambda k: k.lif_layer(wt, s, 0.5, 0.75, 1.0))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not available; only the numpy backend can run")
    rows = []
    for name, fn in cases(np.random.default_rng(args.seed)):
        t_py, out_py = best_of(lambda: fn(_pykernels), args.repeat)
        row = {"case": name, "python_s": t_py}
        if _kernels is not None:
            t_c, out_c = best_of(lambda: fn(_kernels), args.repeat)
            row.update(cython_s=t_c, speedup=t_py / t_c, agree=same(out_py, out_c))
        rows.append(row)
        cy = (f"  cython {row['cython_s']:.4f}s  x{row['speedup']:.1f}  agree={row['agree']}"
              if "cython_s" in row else "")
        print(f"{name:42s} python {t_py:.4f}s{cy}", flush=True)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
