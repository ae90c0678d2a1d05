"""Compare the compiled stepper kernel with the numpy fallback.

Times both backends on a 2 ms shaken-lattice propagation (default lattice,
dt = 0.1 us) and checks that they agree.  Run with ``python benchmarks/bench_stepper.py``.
"""
import argparse
import time

import numpy as np

from shakenlattice import stepper
from shakenlattice.lattice import (
    _C1,
    _C2,
    LatticeConfig,
    _drive_sequence,
    _half_step_operators,
    ground_bloch_state,
)


def _inputs(duration, lattice):
    n_steps = int(round(duration / lattice.dt))
    U, M = _half_step_operators(lattice.depth, lattice.n_max, 0.5 * lattice.dt * lattice.omega_recoil)
    rng = np.random.default_rng(0)
    freqs = rng.uniform(18e3, 30e3, 5)

    # a smooth multi-tone drive sampled at the stepper nodes
    def drive(t):
        return 0.5 * np.sin(2 * np.pi * np.multiply.outer(t, freqs)).sum(axis=1)

    t = np.arange(n_steps) * lattice.dt
    z = _drive_sequence(drive(t + _C1 * lattice.dt), drive(t + _C2 * lattice.dt))
    return ground_bloch_state(lattice).amplitudes, U, M, z


def _best_of(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - start)
    return best, out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--duration", type=float, default=2e-3, help="propagation time (s)")
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args(argv)

    lattice = LatticeConfig()
    psi, U, M, z = _inputs(args.duration, lattice)
    print(f"{z.size} exponential factors, basis size {U.shape[0]}")
    t_py, out_py = _best_of(lambda: stepper.evolve_python(psi, U, M, z), args.repeats)
    print(f"python    {t_py * 1e3:9.1f} ms")
    if stepper.evolve_compiled is None:
        print("compiled  not built")
        return 0
    t_c, out_c = _best_of(lambda: stepper.evolve_compiled(psi, U, M, z), args.repeats)
    print(f"compiled  {t_c * 1e3:9.1f} ms")
    print(f"speedup   {t_py / t_c:9.1f}x")
    print(f"max |difference| {np.max(np.abs(out_py - out_c)):.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
