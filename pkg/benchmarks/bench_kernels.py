"""Compiled vs pure-numpy kernels: CSR matvec, Jacobi-PCG, gating sweep, one IMEX step.

    python benchmarks/bench_kernels.py [--h-denom 48] [--repeat 5]

The per-step benchmark runs the ex3 scenario for a fixed number of steps
with each backend swapped into the kernel dispatcher.
"""
from __future__ import annotations

import argparse
import math
import timeit

import numpy as np

from calcwave import kernels
from calcwave.gating import GatingField
from calcwave.scenarios import build_discretization, build_problem, builtin_scenario, initial_state
from calcwave.stepper import build_plan, run


def best(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--h-denom", type=int, default=48, help="mesh size pi/N")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--steps", type=int, default=50)
    args = ap.parse_args(argv)

    cfg = builtin_scenario("ex3").with_overrides(h=math.pi / args.h_denom)
    disc = build_discretization(cfg)
    a = disc.ops_c.mass.lincomb(1.0, disc.ops_c.stiffness, cfg.numerics.dt)
    dinv = 1.0 / a.diagonal()
    rng = np.random.default_rng(0)
    x = rng.standard_normal(a.n)
    b = a @ x
    n_if = len(disc.interface)
    q0 = GatingField.uniform(n_if, 0.798, 0.0, 0.202).q
    u = rng.uniform(0, 2, n_if)

    names = list(kernels.available_backends())
    print(f"mesh pi/{args.h_denom}: {a.n} cytosol dofs, nnz {a.nnz}, {n_if} interface nodes")
    print(f"{'kernel':<12}" + "".join(f"{n:>14}" for n in names))
    rows = {}
    for name in names:
        with kernels.use_backend(name) as mod:
            out = np.empty(a.n)
            rows.setdefault("matvec", []).append(
                best(lambda: mod.csr_matvec(a.indptr, a.indices, a.data, x, out), args.repeat, 200))

            def solve():
                y = np.zeros(a.n)
                mod.pcg(a.indptr, a.indices, a.data, dinv, b, y, 1e-10, 5000)
            rows.setdefault("pcg", []).append(best(solve, args.repeat, 5))

            def gate():
                q = q0.copy()
                mod.gating_step(q, u, 0.00375, 1500.0, 28.8, 1500.0, 385.9, 1.75, 0.1)
            rows.setdefault("gating", []).append(best(gate, args.repeat, 200))

            plan = build_plan(disc, build_problem(cfg), cfg.numerics.dt)
            s0 = initial_state(cfg, disc)
            rows.setdefault("imex step", []).append(
                best(lambda: run(s0, plan, args.steps), 1, 1) / args.steps)
    for k, vals in rows.items():
        print(f"{k:<12}" + "".join(f"{v * 1e6:>11.1f} us" for v in vals))
    if "compiled" in names:
        i, j = names.index("python"), names.index("compiled")
        print("speedup     " + "  ".join(f"{k} {v[i] / v[j]:.1f}x" for k, v in rows.items()))


if __name__ == "__main__":
    main()
