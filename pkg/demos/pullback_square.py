"""The map z -> z^2 and the circle: sandwich and image inequalities.

    python3 demos/pullback_square.py
"""
import math

import numpy as np

from cp1green import SphereGrid
from cp1green.pullback import (RationalMap, SandwichParams, estimate_alpha, estimate_beta,
                               verify_image_inequality, verify_sandwich)
from cp1green.weights import circle_set, zero_weight


def fs_shifted(Z0, Z1):
    a0, a1 = np.abs(Z0), np.abs(Z1)
    return np.log(np.maximum(a0, a1)) - 0.5 * np.log(a0**2 + a1**2)


grid = SphereGrid(1.25, 100)
f = RationalMap.power(2)
beta = estimate_beta(f)
alpha = estimate_alpha(f, [fs_shifted], grid=grid)
print(f"beta estimate {beta:.4f}; alpha estimate {alpha['alpha']:.3f} (degenerate: {alpha['degenerate']})")

sw = verify_sandwich(f, circle_set(), zero_weight(), SandwichParams(beta, beta), grid)
print(f"upper defect of V o f <= beta V'': {sw['upper_defect']:.4f}")

for g, K in ((f, circle_set()), (RationalMap.mobius_rotation(math.pi / 2), circle_set(0.3, 0.5))):
    im = verify_image_inequality(g, K, zero_weight(), grid)
    print(f"{g.label}: image defect {im['defect']:.2e}, interpolation error {im['interpolation_error']:.2e}")
