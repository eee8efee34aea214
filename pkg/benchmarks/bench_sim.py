"""Timing comparison of the RK4 simulation kernel backends.

Runs the benchmark plant's scan scenario with the gain-scheduled
controller set once per available backend (compiled and pure numpy) and
prints wall times and the speedup.  The compiled backend is warmed up
first so JIT compilation is not billed to the measurement.

Usage: python3 benchmarks/bench_sim.py [--duration S] [--repeats N]
"""

import argparse
import logging
import time

import numpy as np

from lpvslc import _kernels
from lpvslc.design import DesignSpec, design_lpv_slc
from lpvslc.plant import benchmark_plant
from lpvslc.sim import SimConfig, benchmark_motion, simulate


def run(backend: str, model, controllers, motion, duration: float):
    config = SimConfig(duration_s=duration, backend=backend)
    t0 = time.perf_counter()
    result = simulate(model, controllers, motion, config)
    return time.perf_counter() - t0, result


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--duration", type=float, default=2.0,
                        help="simulated seconds per run (default 2.0)")
    parser.add_argument("--repeats", type=int, default=3,
                        help="timed repeats per backend; best is reported")
    args = parser.parse_args()
    # Edge-of-workspace clamp diagnostics are not the point here.
    logging.basicConfig(level=logging.ERROR)

    backends = list(_kernels.available_backends())
    print(f"backends: {', '.join(backends)} "
          f"(default: {_kernels.default_backend_name()})")

    model = benchmark_plant()
    print("designing the gain-scheduled controller set...")
    t0 = time.perf_counter()
    controllers = design_lpv_slc(model, DesignSpec())
    print(f"  done in {time.perf_counter() - t0:.1f} s "
          f"(bandwidth {controllers.achieved_bandwidth_hz:.1f} Hz)")
    motion = benchmark_motion()

    if "numba" in backends:
        print("warming up the compiled kernel...")
        run("numba", model, controllers, motion, 0.05)

    results = {}
    times = {}
    for backend in backends:
        best = np.inf
        for _ in range(args.repeats):
            wall, result = run(backend, model, controllers, motion,
                               args.duration)
            best = min(best, wall)
        times[backend] = best
        results[backend] = result

    n_steps = results[backends[0]].config.n_steps
    print(f"\n{args.duration:g} simulated seconds, {n_steps} RK4 steps, "
          f"best of {args.repeats}:")
    print(f"{'backend':<8} {'wall [s]':>10} {'steps/s':>12}")
    for backend in backends:
        print(f"{backend:<8} {times[backend]:>10.3f} "
              f"{n_steps / times[backend]:>12.0f}")
    if len(backends) == 2:
        print(f"speedup: {times['numpy'] / times['numba']:.1f}x")
        diff = float(np.max(np.abs(results["numpy"].e - results["numba"].e)))
        print(f"max |error trace difference| between backends: {diff:.3e}")


if __name__ == "__main__":
    main()
