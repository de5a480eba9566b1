"""Numba vs numpy kernels, one at a time and inside a full solve.

    python benchmarks/bench_kernels.py [--n 102] [--w 32] [--repeat 50]

Kernel timings call both flavours directly.  The end-to-end solve runs in a
subprocess per backend, since the flag is read at import time.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from sketchdecomp import kernels as K

SOLVE_SNIPPET = """
import json, time
from sketchdecomp import backend_name
from sketchdecomp.config import parse_config
from sketchdecomp.pipeline import detect, simulate
from sketchdecomp.scenario import severity_scenario
from sketchdecomp.solver import SolverParams
import dataclasses
cfg = parse_config(severity_scenario(n={n}))
cfg = dataclasses.replace(cfg, solver=SolverParams(tol=1e-12, max_iter={iters}))
trace, _ = simulate(cfg)
detect(trace, dataclasses.replace(cfg, solver=SolverParams(max_iter=2)))  # warm-up / JIT
t = time.perf_counter()
det = detect(trace, cfg)
print(json.dumps({{"backend": backend_name(), "seconds": time.perf_counter() - t, "sweeps": det.result.iterations}}))
"""


def kernel_cases(n, m, d, w, flows, rng):
    M = rng.random((n, m, d, w))
    Y = rng.random((n - m + 1, d, w))
    V = rng.random((n, d, w))
    y = rng.random((n, m, d - 1))
    rows = rng.integers(-1, n, size=200_000)
    cols = rng.integers(0, flows, size=200_000)
    counts = rng.integers(0, 100, size=(n, flows)).astype(np.float64)
    hcols = rng.integers(0, w, size=(d, flows))
    return {
        "bin_counts": (rows, cols, n, flows),
        "scatter_sketches": (counts, hcols, w),
        "b1_apply": (M,),
        "b1_adjoint": (Y, n, m),
        "b2_apply": (M,),
        "b2_adjoint": (V, m),
        "b3_rowsum": (M,),
        "b3_adjoint": (y, w),
        "solve_aat": (y,),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=102)
    ap.add_argument("--m", type=int, default=3)
    ap.add_argument("--d", type=int, default=4)
    ap.add_argument("--w", type=int, default=32)
    ap.add_argument("--flows", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--solve-iters", type=int, default=300)
    ap.add_argument("--skip-solve", action="store_true")
    args = ap.parse_args(argv)

    if not hasattr(K, "b1_apply_nb"):
        sys.exit("kernels module lacks the numba variants")
    rng = np.random.default_rng(0)
    cases = kernel_cases(args.n, args.m, args.d, args.w, args.flows, rng)
    print(f"stack ({args.n}, {args.m}, {args.d}, {args.w}), {args.flows} flows, best of {args.repeat}")
    print(f"{'kernel':<18}{'numba us':>12}{'numpy us':>12}{'speedup':>10}")
    for name, call_args in cases.items():
        nb, npf = getattr(K, name + "_nb"), getattr(K, name + "_np")
        np.testing.assert_allclose(nb(*call_args), npf(*call_args), rtol=1e-12, atol=1e-12)
        t_nb = min(timeit.repeat(lambda: nb(*call_args), number=1, repeat=args.repeat))
        t_np = min(timeit.repeat(lambda: npf(*call_args), number=1, repeat=args.repeat))
        print(f"{name:<18}{t_nb * 1e6:>12.1f}{t_np * 1e6:>12.1f}{t_np / t_nb:>10.2f}")

    if args.skip_solve:
        return
    print(f"\nfull detect on the severity scenario (n={args.n - args.m + 1}), {args.solve_iters} sweeps")
    code = SOLVE_SNIPPET.format(n=args.n - args.m + 1, iters=args.solve_iters)
    for flag in ("0", "1"):
        env = dict(os.environ, SKETCHDECOMP_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        r = json.loads(out.stdout.strip().splitlines()[-1])
        print(f"{r['backend']:<8}{r['seconds']:>8.2f}s  ({r['sweeps']} sweeps, {1e3 * r['seconds'] / r['sweeps']:.2f} ms/sweep)")


if __name__ == "__main__":
    main()
