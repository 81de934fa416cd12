"""Throughput of the compiled event loop against the pure-Python fallback.

    python benchmarks/bench_kernel.py [--N 64] [--horizon 0.05] [--replicas 2]

Both backends run the same replicas (identical random streams) and the
script checks that they produce the same currents before reporting rates.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from bondsep import backend
from bondsep.dynamics import Observables, run_replicas
from bondsep.environment import LatticeWindow, Law, generate
from bondsep.functions import Profile


def bench(name: str, env, rho0, args, engine: str):
    t0 = time.perf_counter()
    batch = run_replicas(env, rho0, args.replicas, args.horizon, [args.horizon / 2, args.horizon],
                         Observables(currents="all", tagged=True), master_seed=1, star=True,
                         engine=engine, backend=name)
    dt = time.perf_counter() - t0
    return batch, dt


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, default=64)
    ap.add_argument("--horizon", type=float, default=0.05)
    ap.add_argument("--replicas", type=int, default=2)
    args = ap.parse_args()

    w = LatticeWindow.symmetric(args.N, 2.0, "frozen-buffer")
    env = generate(7, Law.uniform(0.25, 0.5), w)
    rho0 = Profile.tanh()
    print(f"window {w.size} sites, N = {args.N}, horizon {args.horizon}, {args.replicas} replicas")
    have = "compiled" in backend.BACKENDS
    print(f"compiled kernel available: {have}")
    print(f"{'engine':<8} {'backend':<9} {'rings':>12} {'seconds':>9} {'rings/s':>12}")
    for engine in ("thinned", "tree"):
        results = {}
        for name in ("compiled", "python"):
            if name == "compiled" and not have:
                continue
            batch, dt = bench(name, env, rho0, args, engine)
            results[name] = batch
            print(f"{engine:<8} {name:<9} {batch.events:>12d} {dt:>9.3f} {batch.events / dt:>12.3e}")
        if len(results) == 2:
            same = np.array_equal(results["compiled"].currents, results["python"].currents)
            print(f"{'':<8} identical trajectories: {same}")


if __name__ == "__main__":
    main()
