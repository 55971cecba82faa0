"""Acceptance criteria, one test per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary lists
one PASS/FAIL line per criterion.
"""
import json
import math
import time

import numpy as np
import pytest

from cp1green.cli import main
from cp1green.core import ProjPoint, SphereGrid
from cp1green.envelope_relax import (SolverOptions, gauge_invariance_check, ma_residual,
                                     monotone_weight_sweep, shift_schedule, solve_envelope)
from cp1green.envelope_sections import (FiberPoint, build_section_envelope, lift_to_bundle,
                                        oracle_phi_n)
from cp1green.hprinciple import (MetricData, chi_to_metric, dehomogenize, homogenized,
                                 metric_to_chi)
from cp1green.pullback import (RationalMap, SandwichParams, estimate_beta,
                               verify_image_inequality, verify_sandwich)
from cp1green.weights import (bump_gauge, circle_set, constant_gauge, disk_set, log_dist_weight,
                              segment_set, whole_sphere, zero_weight)

from .conftest import HALF_LOG2, chart_oracle, circle_oracle

pytestmark = pytest.mark.slow

TOL = 1e-9
OPTS = SolverOptions(tol=TOL)


@pytest.fixture(scope="module")
def fine():
    return SphereGrid(1.25, 400)


@pytest.fixture(scope="module")
def medium():
    return SphereGrid(1.25, 200)


@pytest.fixture(scope="module")
def circle_fine(fine):
    t0 = time.perf_counter()
    res = solve_envelope(circle_set(), zero_weight(), grid=fine, opts=OPTS)
    return res, time.perf_counter() - t0


@pytest.fixture(scope="module")
def circle_medium(medium):
    return solve_envelope(circle_set(), zero_weight(), grid=medium, opts=OPTS)


def test_c1_circle_oracle(circle_fine, acceptance):
    res, secs = circle_fine
    g = res.grid
    err = np.abs(res.V.values - chart_oracle(g, circle_oracle))
    far = np.stack([g.cell_distance(res.K_mask[c]) > 3 for c in (0, 1)])
    sup = float(np.max(err[far]))
    acceptance("C1 circle oracle", res.converged and sup <= 0.01 and secs <= 60,
               f"sup error {sup:.2e} <= 0.01, {secs:.1f} s <= 60 s, seam {res.seam_discrepancy:.1e}")


def test_c2_whole_sphere(fine, acceptance):
    t0 = time.perf_counter()
    res = solve_envelope(whole_sphere(), zero_weight(), grid=fine, opts=OPTS)
    secs = time.perf_counter() - t0
    sup = float(np.max(np.abs(res.V.values)))
    acceptance("C2 whole sphere", sup <= 1e-9 and secs <= 5, f"max|V| {sup:.1e} <= 1e-9, {secs:.2f} s <= 5 s")


def test_c3_cross_method(circle_fine, acceptance):
    res, _ = circle_fine
    g = res.grid
    stride = 8
    diffs = []
    for n in (10, 20, 40):
        env = build_section_envelope(circle_set(), zero_weight(), n)
        vals = env.on_grid(g, stride).values
        ok = np.isfinite(vals)
        diffs.append(float(np.max(np.abs(vals[ok] - res.V.values[ok]))))
    orc = oracle_phi_n(circle_set().sample(400), zero_weight(), 1, ProjPoint(1, 0))["value"]
    ok = all(b <= a for a, b in zip(diffs, diffs[1:])) and diffs[-1] <= 0.15 and abs(orc - HALF_LOG2) <= 0.005
    acceptance("C3 cross-method", ok,
               "sup|value_n - V| at n=10,20,40: " + ", ".join(f"{d:.3f}" for d in diffs)
               + f"; oracle n=1 at 0: {orc:.5f} vs {HALF_LOG2:.5f}")


def test_c4_mass_and_support(circle_fine, medium, acceptance):
    res, _ = circle_fine
    h = res.grid.h
    ma = ma_residual(res)
    masses = {"circle": ma["total_mass"]}
    for name, K in (("whole", whole_sphere()), ("disk", disk_set(0, 0.5)), ("segment", segment_set())):
        r = solve_envelope(K, zero_weight(), grid=medium, opts=OPTS)
        assert r.converged
        masses[name] = ma_residual(r)["total_mass"]
    rel = {k: abs(m / (2 * math.pi) - 1) for k, m in masses.items()}
    ok = (max(rel.values()) <= 0.02 and ma["mass_on_K_fraction"] >= 0.95
          and ma["off_K_max_residual"] <= 10 * h)
    acceptance("C4 mass and support", ok,
               "mass/2pi - 1: " + ", ".join(f"{k} {v:.1e}" for k, v in rel.items())
               + f"; on-K share {ma['mass_on_K_fraction']:.4f}; off-K {ma['off_K_max_residual']:.1e} <= {10 * h:.3f}")


def test_c5_gauge_invariance(medium, acceptance):
    g = medium
    bound = 5 * g.h**2 + 2 * TOL
    defects = {}
    for name, xi in (("constant", constant_gauge(g, 0.3)), ("bump", bump_gauge(g, 0.1))):
        defects[name] = gauge_invariance_check(circle_set(), zero_weight(), None, xi, g, OPTS,
                                               stated_form=False)["max_defect"]
    acceptance("C5 gauge invariance", max(defects.values()) <= bound,
               ", ".join(f"{k} {v:.1e}" for k, v in defects.items()) + f" <= {bound:.1e}")


def test_c6_monotone_sweeps(medium, acceptance):
    ok = True
    parts = []
    for direction in ("up", "down"):
        sched = shift_schedule(zero_weight(), [1, 2, 4, 8, 16], direction)
        rows = monotone_weight_sweep(circle_set(), zero_weight(), None, medium, sched, direction, OPTS)
        for r in rows:
            ok &= r["sup_diff_to_limit"] <= 1 / r["n"] + 2 * TOL
            ok &= r["monotonicity_violation"] <= 2 * TOL
        worst = max(r["sup_diff_to_limit"] - 1 / r["n"] for r in rows)
        viol = max(r["monotonicity_violation"] for r in rows)
        parts.append(f"{direction}: max(sup_diff - 1/n) {worst:.1e}, violation {viol:.1e}")
    acceptance("C6 monotone sweeps", bool(ok), "; ".join(parts))


def test_c7_pullback_sandwich(medium, acceptance):
    z2 = RationalMap.power(2)
    beta = estimate_beta(z2)
    sq = verify_sandwich(z2, circle_set(), zero_weight(), SandwichParams(beta, beta, "estimate_beta"),
                         medium, opts=OPTS)
    ident = verify_sandwich(RationalMap.identity(), circle_set(), zero_weight(), SandwichParams(1, 1),
                            medium, opts=OPTS)
    betas = {"identity": (RationalMap.identity(), 1), "z^2": (z2, 4), "z^3": (RationalMap.power(3), 9),
             "mobius": (RationalMap.mobius_rotation(math.pi / 2), 1)}
    rel = {k: abs(estimate_beta(f) / b - 1) for k, (f, b) in betas.items()}
    ok = (sq["upper_defect"] <= 0.02 and ident["upper_defect"] <= 2 * TOL
          and ident["lower_defect"] <= 2 * TOL and max(rel.values()) <= 0.01)
    acceptance("C7 pullback sandwich", ok,
               f"z^2 beta {beta:.4f} upper {sq['upper_defect']:.4f} <= 0.02; identity "
               f"{ident['upper_defect']:.1e}/{ident['lower_defect']:.1e}; beta rel err {max(rel.values()):.1e}")


def test_c8_image_inequality(medium, acceptance):
    sq = verify_image_inequality(RationalMap.power(2), circle_set(), zero_weight(), medium, opts=OPTS)
    mob = verify_image_inequality(RationalMap.mobius_rotation(math.pi / 2), circle_set(0.3, 0.5),
                                  log_dist_weight(2), medium, opts=OPTS)
    bound = 2 * TOL + mob["interpolation_error"]
    ok = sq["defect"] <= 0.03 and mob["defect"] <= bound
    acceptance("C8 image inequality", ok,
               f"z^2 {sq['defect']:.4f} <= 0.03; mobius {mob['defect']:.1e} <= {bound:.1e}")


def test_c9_hprinciple(circle_fine, acceptance):
    res, _ = circle_fine
    rng = np.random.default_rng(0)
    m = 1000
    z = 1.2 * np.sqrt(rng.uniform(size=m)) * np.exp(2j * np.pi * rng.uniform(size=m))
    lam = rng.normal(size=m) + 1j * rng.normal(size=m) + 0.1

    def v(u):
        u = np.asarray(u, dtype=complex)
        return res.V.evaluate(np.ones_like(u), u)
    H = homogenized(v, "V")
    hom = float(np.max(np.abs(dehomogenize(H)(z) - v(z))))
    hom = max(hom, H.homogeneity_defect(lam, lam * z))

    metric = MetricData.from_field(res)
    chi = metric_to_chi(metric, 1.0)
    pts = [FiberPoint(ProjPoint.from_chart(int(c), zz), complex(t), int(c))
           for c, zz, t in zip(rng.integers(0, 2, m), z, lam)]
    back = chi_to_metric(chi, 1.0, pts[:64])
    met = max(float(np.max(np.abs(back.h(c, z) - metric.h(c, z)))) for c in (0, 1))
    fiber = chi.homogeneity_defect(pts)

    lift = lift_to_bundle(res)
    gap = 0.0
    for zz, t in zip(z, lam):
        if 0.85 < abs(zz) < 1 / 0.85:
            p = FiberPoint(ProjPoint.from_chart(0, zz), complex(t), 0)
            gap = max(gap, abs(lift(p) - lift(p.in_chart(1))))
    h = res.grid.h
    ok = hom <= 1e-10 and met <= 1e-10 and fiber <= 1e-12 and gap <= 10 * h
    acceptance("C9 h-principle", ok,
               f"homogenize {hom:.1e}, metric/chi {met:.1e}, fiber {fiber:.1e}, lift {gap:.1e} <= {10 * h:.3f}")


def test_c10_refinement_and_reproducibility(circle_fine, circle_medium, tmp_path, acceptance):
    res, _ = circle_fine
    v400 = float(res.V.values[0][200, 200])
    v200 = float(circle_medium.V.values[0][100, 100])
    h = res.grid.h
    change = abs(v400 - v200)

    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"command": "envelope", "grid": {"n_cells": 100}}))
    texts = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["--verbosity", "0", "run", str(cfg), "--out", str(out)]) == 0
        lines = (out / "summary.json").read_text().splitlines()
        texts.append("\n".join(l for l in lines if '"wall_time"' not in l))
    same = texts[0] == texts[1]
    acceptance("C10 refinement and reproducibility", change <= 5 * h and same,
               f"|V(0) 400 - 200| {change:.1e} <= {5 * h:.3f}; summaries identical: {same}")
