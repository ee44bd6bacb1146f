"""Compare the HJB value at the start point with a Monte Carlo estimate of the same cost.

    python scripts/duality_check.py [J] [particles] [seed]
"""

import sys
import time

from queue_mfg.forward import evaluate_cost_mc, simulate_particles
from queue_mfg.measures import GridSpec
from queue_mfg.mfg import solve_mfg
from queue_mfg.model import make_builtin_model


def main(argv):
    J = int(argv[0]) if argv else 200
    N = int(argv[1]) if len(argv) > 1 else 100_000
    seed = int(argv[2]) if len(argv) > 2 else 11
    model = make_builtin_model("linear-mf")
    grid = GridSpec.for_model(model, J)
    start = time.perf_counter()
    sol = solve_mfg(model, grid, tol=1e-3 * model.L, log=print)
    print(f"fixed point on {grid.J + 1}x{grid.M + 1} in {time.perf_counter() - start:.1f} s")
    start = time.perf_counter()
    batch = simulate_particles(model, grid, sol.policy, sol.nu_bar, model.x0, N, seed)
    est, se = evaluate_cost_mc(model, batch, sol.nu_bar)
    print(f"{N} particles in {time.perf_counter() - start:.1f} s")
    print(f"V(0, x0) = {sol.value_at_start:.6f}")
    print(f"MC cost  = {est:.6f} +- {se:.6f}  ({abs(est - sol.value_at_start) / se:.2f} standard errors)")


if __name__ == "__main__":
    main(sys.argv[1:])
