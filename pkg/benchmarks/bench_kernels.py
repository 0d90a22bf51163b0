#!/usr/bin/env python3
"""Benchmark: compiled flow kernels against the pure-numpy fallback.

Times the two hot loops (batched RK4 state propagation and variational
Jacobian integration) on the builtin R^3 system.  Run after an editable
install:

    python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from epmap import kernels
from epmap.kernels import pure
from epmap.polyalg import Polynomial, PolyVectorField
from epmap.signals import parse_control


def example_fields(p=3, n=3):
    x1 = Polynomial.var(n, 0)
    one, zero = Polynomial.const(n, 1.0), Polynomial.zero(n)
    f1 = PolyVectorField([one, zero, zero])
    f2 = PolyVectorField([zero, one - x1, x1**p])
    return [f1, f2]


def time_call(fn, repeat=3):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    fields = example_fields()
    u = parse_control(["sin(2*pi*t)", "1"])
    rng = np.random.default_rng(0)

    rows = []

    # batched state propagation
    nsteps, batch = 5000, 125
    pack = kernels.FieldPack(fields, with_jacobian=True)
    nodes = kernels.sample_control_nodes(u, 0.0, 1.0, nsteps)
    q0 = rng.uniform(-0.3, 0.3, size=(batch, 3))

    def run_selected_flow():
        kernels.flow_rk4(pack, nodes, q0, 0.0, 1.0, nsteps)

    def run_pure_flow():
        pure.flow_rk4(
            pack.coefs, pack.exps, pack.ptr, pack.k, pack.n, nodes, q0, 0.0, 1.0, nsteps
        )

    rows.append(
        (
            f"rk4 flow, batch {batch} x {nsteps} steps",
            time_call(run_pure_flow),
            time_call(run_selected_flow),
        )
    )

    # variational Jacobian
    njac = 2000
    nodes_j = kernels.sample_control_nodes(u, 0.0, 1.0, njac)
    qj = np.array([0.1, -0.2, 0.05])

    def run_selected_jac():
        kernels.flow_rk4_jacobian(pack, nodes_j, qj, 0.0, 1.0, njac)

    def run_pure_jac():
        pure.flow_rk4_jacobian(
            pack.coefs, pack.exps, pack.ptr,
            pack.jcoefs, pack.jexps, pack.jptr,
            pack.k, pack.n, nodes_j, qj, 0.0, 1.0, njac,
        )

    rows.append(
        (f"variational jacobian, {njac} steps", time_call(run_pure_jac), time_call(run_selected_jac))
    )

    backend = kernels.backend_name()
    print(f"selected backend: {backend}")
    print(f"{'workload':<42} {'pure (s)':>10} {backend + ' (s)':>14} {'speedup':>9}")
    for name, t_pure, t_sel in rows:
        speed = t_pure / t_sel if t_sel > 0 else float("inf")
        print(f"{name:<42} {t_pure:>10.4f} {t_sel:>14.4f} {speed:>8.1f}x")
    if backend == "pure":
        print("note: compiled extension not available; both columns are the fallback")


if __name__ == "__main__":
    main()
