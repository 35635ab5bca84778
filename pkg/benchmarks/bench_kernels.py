"""Timing comparison of the numba kernels against their NumPy twins.

Each hot kernel (Gram matrix, likelihood gradient, ADMM iteration loop,
plant integrator) ships in a loop-oriented flavor compiled with
numba.njit and a vectorized NumPy flavor. This script times both on
representative problem sizes and prints one table row per case.

The first three pairs can run side by side in one process. The plant
integrator has a single source that is either compiled or interpreted,
so its fallback timing comes from re-running this file in a subprocess
with FCMPC_NO_NUMBA=1 (skipped with --no-subprocess).

Usage: python benchmarks/bench_kernels.py [--repeats N] [--no-subprocess]
"""

import argparse
import os
import statistics
import subprocess
import sys
import time

import numpy as np

import fcmpc.gp as gp_mod
import fcmpc.qp as qp_mod
from fcmpc._accel import NUMBA_ENABLED
from fcmpc.mpc import CtrlState, MPCParams, build_qp, model_from_partials
from fcmpc.plant import DEFAULT_GAS, DEFAULT_STACK, Plant, PlantInput
from fcmpc.qp import solve_qp

MODE = "njit" if NUMBA_ENABLED else "python"


def median_time(fn, repeats):
    fn()                                    # warm-up / JIT compile
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def bench_gram(n, repeats):
    rng = np.random.default_rng(1)
    X = rng.uniform(0.0, 5.0, size=(n, 4))
    args = (X, X, 2.0, 1.2, 3.0, np.array([1.0, 2.0, 0.7, 1.5]))
    return [
        (f"gram {n}x{n}", MODE, median_time(lambda: gp_mod._gram_loops(*args), repeats)),
        (f"gram {n}x{n}", "numpy", median_time(lambda: gp_mod._gram_numpy(*args), repeats)),
    ]


def bench_lml_grad(n, repeats):
    rng = np.random.default_rng(2)
    X = rng.uniform(0.0, 5.0, size=(n, 4))
    M = rng.normal(size=(n, n))
    W = 0.5 * (M + M.T)
    args = (X, W, 2.0, 1.2, 3.0, np.array([1.0, 2.0, 0.7, 1.5]))
    return [
        (f"lml-grad n={n}", MODE, median_time(lambda: gp_mod._lml_grad_loops(*args), repeats)),
        (f"lml-grad n={n}", "numpy", median_time(lambda: gp_mod._lml_grad_numpy(*args), repeats)),
    ]


def _mpc_qp():
    model = model_from_partials(0.033, 0.0045, -0.24, 0.0066, -2.0e-5,
                                -0.0046, sigma_p=0.01)
    state = CtrlState(V_FC=47.6, P_H2=2.3, dI=10.0, Q_H2=250.0, Q_air=500.0)
    d = build_qp(model, state, MPCParams())
    return d.H, d.g, d.A, d.lb, d.ub


def _random_qp(n, m):
    rng = np.random.default_rng(3)
    M = rng.normal(size=(n, n))
    H = M @ M.T + n * np.eye(n)
    g = rng.normal(size=n) * 5.0
    A = rng.normal(size=(m, n))
    centers = rng.normal(size=m)
    half = rng.uniform(0.1, 2.0, size=m)
    return H, g, A, centers - half, centers + half


def bench_admm(repeats):
    rows = []
    for label, qp in (("admm mpc-sized", _mpc_qp()),
                      ("admm 60x120", _random_qp(60, 120))):
        for impl, mode in ((qp_mod._admm_loops, MODE),
                           (qp_mod._admm_numpy, "numpy")):
            saved = qp_mod._admm_impl
            qp_mod._admm_impl = impl
            try:
                rows.append((label, mode,
                             median_time(lambda: solve_qp(*qp), repeats)))
            finally:
                qp_mod._admm_impl = saved
    return rows


def bench_rollout(repeats):
    plant = Plant(DEFAULT_STACK, DEFAULT_GAS)

    def run():
        s = plant.steady_state(PlantInput(250.0, 500.0, 110.0))
        for k in range(240):
            inp = PlantInput(250.0 + 0.2 * (k % 50), 500.0, 110.0)
            s = plant.step(s, inp, 0.5)
        return s

    return [("plant 120 s rollout", MODE, median_time(run, repeats))]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=7)
    ap.add_argument("--no-subprocess", action="store_true",
                    help="skip the interpreted plant-rollout timing")
    ap.add_argument("--rollout-only", action="store_true",
                    help=argparse.SUPPRESS)   # used by the subprocess hop
    args = ap.parse_args(argv)

    if args.rollout_only:
        for name, mode, sec in bench_rollout(args.repeats):
            print(f"{name}\t{mode}\t{sec!r}")
        return 0

    rows = []
    rows += bench_gram(300, args.repeats)
    rows += bench_gram(1000, max(3, args.repeats // 2))
    rows += bench_lml_grad(400, max(3, args.repeats // 2))
    rows += bench_admm(args.repeats)
    rows += bench_rollout(args.repeats)

    if not args.no_subprocess and NUMBA_ENABLED:
        env = dict(os.environ, FCMPC_NO_NUMBA="1")
        out = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--rollout-only",
             "--repeats", str(args.repeats)],
            env=env, capture_output=True, text=True)
        if out.returncode == 0:
            for line in out.stdout.splitlines():
                name, mode, sec = line.split("\t")
                rows.append((name, "python", float(sec)))
        else:
            print("interpreted rollout timing failed:", file=sys.stderr)
            sys.stderr.write(out.stderr)

    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'path':<7}  {'median':>10}")
    for name, mode, sec in rows:
        print(f"{name:<{width}}  {mode:<7}  {sec * 1e3:>8.3f} ms")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
