"""Weighted Leja sections approach the relaxation envelope from below.

    python3 demos/sections_vs_relax.py
"""
import numpy as np

from cp1green import SphereGrid, solve_envelope
from cp1green.envelope_sections import build_section_envelope
from cp1green.weights import circle_set, zero_weight

grid = SphereGrid(1.25, 100)
K, Q = circle_set(), zero_weight()
V = solve_envelope(K, Q, grid=grid).V

for n in (5, 10, 20, 40):
    env = build_section_envelope(K, Q, n)
    vals = env.on_grid(grid, stride=4).values
    ok = np.isfinite(vals)
    gap = np.max(np.abs(vals[ok] - V.values[ok]))
    print(f"degree {n:3d}: sup |value_n - V| = {gap:.4f}, max on K sample = "
          f"{env.value(np.ones_like(env.K_sample), env.K_sample).max():.1e}")
