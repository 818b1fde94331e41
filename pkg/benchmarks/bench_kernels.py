"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each case checks that both backends agree bit for bit before timing them.
"""
from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from gridweave import _pykernels
from gridweave.core import BatteryParams
from gridweave.oracle import build_lattice, command_set

try:
    from gridweave import _ckernels
except ImportError:
    sys.exit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")


def market_case(batch: int, n_mg: int, per_mg: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    h = n_mg * per_mg
    mg = np.repeat(np.arange(n_mg), per_mg)
    pos = np.tile(np.arange(per_mg, dtype=float), n_mg)
    net = rng.normal(0.0, 0.5, size=(batch, h))
    return net, mg, pos, n_mg


def dp_case(levels: int, horizon: int = 24, seed: int = 0):
    b = BatteryParams()
    lat = build_lattice(b, levels, command_set(b))
    rng = np.random.default_rng(seed)
    cost = rng.normal(size=(horizon, lat.e_values.size))
    return cost, lat.eidx, lat.knext


def bench(name, fn_py, fn_c, args, repeat):
    a, b = fn_py(*args), fn_c(*args)
    for x, y in zip(a, b):
        if not np.array_equal(x, y):
            raise AssertionError(f"{name}: backends disagree")
    t_py = min(timeit.repeat(lambda: fn_py(*args), number=1, repeat=repeat))
    t_c = min(timeit.repeat(lambda: fn_c(*args), number=1, repeat=repeat))
    print(f"{name:<34}{t_py * 1e3:>12.3f}{t_c * 1e3:>12.3f}{t_py / t_c:>10.1f}x")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    print(f"{'case':<34}{'python ms':>12}{'cython ms':>12}{'speedup':>11}")
    for batch, n_mg, per in ((1, 1, 6), (32, 1, 6), (32, 2, 5), (256, 4, 8)):
        bench(f"clear_markets B={batch} {n_mg}x{per}", _pykernels.clear_markets,
              _ckernels.clear_markets, market_case(batch, n_mg, per), args.repeat)
    for levels in (51, 201, 801):
        bench(f"dp_backward K={levels} T=24", _pykernels.dp_backward, _ckernels.dp_backward,
              dp_case(levels), args.repeat)
    return 0


if __name__ == "__main__":
    sys.exit(main())
