"""Wall-clock comparison of the compiled and pure-numpy simulation kernels.

Runs one trailer vertex with the reference gains on both paths, checks the
trajectories agree and prints steps per second. Usage::

    python3 benchmarks/bench_sim.py [--horizon 2.0] [--dt 1e-4] [--repeat 3]
"""

import argparse
import time

import numpy as np

from mgsta import trailer
from mgsta.sim import SimConfig, default_backend, simulate


def run(backend, horizon, dt):
    params = trailer.TrailerParams()
    v = trailer.vertex_parameters(params)[0]
    plant = trailer.error_matrices(params, v)
    dist = trailer.assemble_disturbance(params, v)
    zeta0, sigma0, eta0 = trailer.initial_error_state(params)
    H, J = trailer.cost_matrices()
    cfg = SimConfig(dt=dt, horizon=horizon, record_stride=100)
    t0 = time.perf_counter()
    rec = simulate(plant, trailer.default_gains(), dist, cfg, zeta0=zeta0, sigma0=sigma0, eta0=eta0, H=H, J=J, backend=backend)
    return time.perf_counter() - t0, rec


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--horizon", type=float, default=2.0)
    ap.add_argument("--dt", type=float, default=1e-4)
    ap.add_argument("--repeat", type=int, default=3)
    a = ap.parse_args()
    steps = int(round(a.horizon / a.dt))
    backends = ["numpy"]
    if default_backend() == "numba":
        t_compile, _ = run("numba", a.dt * 10, a.dt)
        print(f"numba first call (compile): {t_compile:.2f} s")
        backends.insert(0, "numba")
    results = {}
    for b in backends:
        times = []
        for _ in range(a.repeat):
            dt_wall, rec = run(b, a.horizon, a.dt)
            times.append(dt_wall)
        results[b] = rec
        best = min(times)
        print(f"{b:6s} best of {a.repeat}: {best:.3f} s  ({steps / best:,.0f} steps/s)")
    if len(results) == 2:
        diff = np.max(np.abs(results["numba"].sigma - results["numpy"].sigma))
        print(f"max |sigma_numba - sigma_numpy| = {diff:.2e}")


if __name__ == "__main__":
    main()
