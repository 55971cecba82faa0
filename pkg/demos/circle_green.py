"""Green function of the unit circle, solved on a grid and checked against
the closed form ``log+|z| + log(2)/2 - log(1+|z|^2)/2``.

    python3 demos/circle_green.py [n_cells]
"""
import sys

import numpy as np

from cp1green import SphereGrid, solve_envelope
from cp1green.envelope_relax import ma_residual
from cp1green.weights import circle_set, zero_weight


def closed_form(z):
    r = np.abs(z)
    return np.log(np.maximum(1, r)) + 0.5 * np.log(2) - 0.5 * np.log1p(r**2)


def main():
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 200
    grid = SphereGrid(1.25, n)
    res = solve_envelope(circle_set(), zero_weight(), grid=grid)
    print(f"n_cells={n} h={grid.h:.4f} converged={res.converged} time={res.wall_time:.2f}s")
    print(f"{'z':>8} {'V':>10} {'exact':>10}")
    for x in (0.0, 0.25, 0.5, 0.9, 1.0):
        v = res.V.interpolate(0, np.array([x]))[0]
        print(f"{x:8.2f} {v:10.5f} {closed_form(x):10.5f}")
    ma = ma_residual(res)
    print(f"Monge-Ampere mass {ma['total_mass']:.5f} (2 pi = {2 * np.pi:.5f}), "
          f"share near K {ma['mass_on_K_fraction']:.4f}")


if __name__ == "__main__":
    main()
