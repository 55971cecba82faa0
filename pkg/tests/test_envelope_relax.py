import math

import numpy as np
import pytest

from cp1green.core import GridField, SphereGrid
from cp1green.envelope_relax import (SolverOptions, domination_check, gauge_invariance_check,
                                     ma_residual, monotone_weight_sweep, psh_certificate,
                                     shift_schedule, solve_envelope)
from cp1green.exceptions import ConfigurationError, PreconditionError
from cp1green.weights import (Weight, bump_gauge, circle_set, constant_gauge, constant_weight,
                              disk_set, harmonic_gauge, log_dist_weight, node_set,
                              whole_sphere, zero_weight)

from .conftest import chart_oracle, circle_oracle, disk_oracle


def far_from(result, cells=3.0):
    g = result.grid
    return np.stack([g.cell_distance(result.K_mask[c]) > cells for c in (0, 1)])


def test_circle_matches_closed_form(circle100):
    g = circle100.grid
    exact = chart_oracle(g, circle_oracle)
    far = far_from(circle100)
    assert np.max(np.abs(circle100.V.values - exact)[far]) <= 0.01
    assert circle100.converged


def test_circle_values_at_poles(circle100):
    m = circle100.grid.n_cells // 2
    assert circle100.V.values[0, m, m] == pytest.approx(0.5 * math.log(2), abs=0.01)
    assert circle100.V.values[1, m, m] == pytest.approx(0.5 * math.log(2), abs=0.01)


def test_disk_matches_closed_form(grid100):
    r = 0.5
    res = solve_envelope(disk_set(0, r), zero_weight(), grid=grid100)
    exact = chart_oracle(grid100, disk_oracle(r))
    far = far_from(res)
    assert np.max(np.abs(res.V.values - exact)[far]) <= 0.01


def test_whole_sphere_is_trivial(grid60):
    res = solve_envelope(whole_sphere(), zero_weight(), grid=grid60)
    assert np.max(np.abs(res.V.values)) <= 1e-9
    assert res.ma_mass_total == pytest.approx(2 * math.pi, rel=0.02)


def test_constant_weight_shifts_envelope(circle60, grid60):
    res = solve_envelope(circle_set(), constant_weight(0.7), grid=grid60)
    assert np.max(np.abs(res.V.values - circle60.V.values - 0.7)) <= 1e-9


def test_gauss_seidel_matches_howard():
    g = SphereGrid(1.25, 30)
    a = solve_envelope(circle_set(), zero_weight(), grid=g)
    b = solve_envelope(circle_set(), zero_weight(), grid=g, method="gauss_seidel")
    assert b.converged
    assert np.max(np.abs(a.V.values - b.V.values)) <= 1e-7


def test_result_invariants(circle60):
    r = circle60
    tol = 1e-9
    assert r.obstacle_excess <= tol
    assert r.certificate_min >= -10 * tol
    assert r.final_update <= tol
    assert r.seam_discrepancy < 10 * r.grid.h
    assert psh_certificate(r.V) >= -4 * 10 * tol / r.grid.h**2


def test_set_monotonicity(grid60):
    small = solve_envelope(disk_set(0, 0.5), log_dist_weight(2), grid=grid60)
    big = solve_envelope(disk_set(0, 0.8), log_dist_weight(2), grid=grid60)
    assert np.all(big.V.values <= small.V.values + 2e-9)


def test_weight_monotonicity_and_lipschitz(grid60):
    K = circle_set()
    q1 = log_dist_weight(2)
    bump = Weight(lambda Z0, Z1: 0.2 * np.exp(-np.abs(Z1 / Z0 - 1) ** 2), "bump")
    q2 = q1 + bump
    v1 = solve_envelope(K, q1, grid=grid60).V.values
    v2 = solve_envelope(K, q2, grid=grid60).V.values
    assert np.all(v1 <= v2 + 2e-9)
    assert np.max(np.abs(v1 - v2)) <= 0.2 + 2e-9


def test_ma_residual_circle(circle100):
    rep = ma_residual(circle100)
    assert rep["off_K_max_residual"] <= 10 * circle100.grid.h
    assert rep["mass_on_K_fraction"] >= 0.95
    assert rep["total_mass"] == pytest.approx(2 * math.pi, rel=0.02)


def test_ma_residual_whole_sphere(grid60):
    res = solve_envelope(whole_sphere(), zero_weight(), grid=grid60)
    rep = ma_residual(res)
    assert rep["off_K_max_residual"] == 0.0
    assert rep["total_mass"] == pytest.approx(2 * math.pi, rel=0.02)


def test_domination_examples(circle60):
    u = circle60.V
    assert domination_check(u, u)["consistent"]
    lower = domination_check(u, u - GridField.constant(u.grid, 0.1))
    assert lower["consistent"] and lower["hypothesis_mass"] == 0.0
    zero = domination_check(u, GridField.constant(u.grid, 0.0))
    assert zero["consistent"]
    assert zero["min_gap"] >= -1e-9


def test_domination_rejects_non_psh(circle60):
    g = circle60.grid
    bad = GridField(-5 * np.abs(np.stack([g.z, g.z])) ** 2, g)
    with pytest.raises(PreconditionError, match="not discretely omega-psh"):
        domination_check(bad, circle60.V)


def test_sweep_up_is_within_one_over_n(grid60):
    K, Q = circle_set(), zero_weight()
    ns = [1, 2, 4, 8]
    rows = monotone_weight_sweep(K, Q, None, grid60, shift_schedule(Q, ns, "up"), "up")
    for row in rows:
        assert row["sup_diff_to_limit"] <= 1.0 / row["n"] + 2e-9
        assert row["monotonicity_violation"] <= 2e-9


def test_sweep_down_is_monotone(grid60):
    K, Q = circle_set(), log_dist_weight(2)
    rows = monotone_weight_sweep(K, Q, None, grid60, shift_schedule(Q, [1, 3, 9], "down"), "down")
    assert all(r["monotonicity_violation"] <= 2e-9 for r in rows)


def test_sweep_bump_off_K_changes_nothing(grid60):
    K, Q = disk_set(0, 0.5), zero_weight()
    off = Weight(lambda Z0, Z1: np.exp(-np.abs(Z1 / Z0 - 1.1) ** 2 / 0.01), "bump")
    sched = [(n, Q + off.scale(1.0 / n)) for n in (1, 2, 4)]
    assert np.max(off.on_grid(grid60).values[disk_set(0, 0.5).grid_mask(grid60)]) < 1e-9
    rows = monotone_weight_sweep(K, Q, None, grid60, sched, "down")
    assert all(r["sup_diff_to_limit"] <= 1e-8 for r in rows)


def test_sweep_rejects_non_monotone_schedule(grid60):
    Q = zero_weight()
    sched = [(1, Q - 1.0), (2, Q - 2.0)]
    with pytest.raises(ConfigurationError, match="not monotone"):
        monotone_weight_sweep(circle_set(), Q, None, grid60, sched, "up")


def test_gauge_zero_and_constant(grid60):
    K, Q = circle_set(), zero_weight()
    for c in (0.0, 0.2):
        rep = gauge_invariance_check(K, Q, None, constant_gauge(grid60, c), grid60)
        assert rep["max_defect"] <= 2e-9
        assert rep["stated_form_defect"] <= 2e-9


@pytest.mark.parametrize("make", [bump_gauge, harmonic_gauge], ids=["bump", "harmonic"])
def test_gauge_smooth(make, grid60):
    xi = make(grid60, 0.1)
    rep = gauge_invariance_check(circle_set(), zero_weight(), None, xi, grid60)
    assert rep["max_defect"] <= 5 * grid60.h**2 + 2e-9


def test_warm_start_reproduces_cold_solve(circle60, grid60):
    res = solve_envelope(circle_set(), zero_weight(), grid=grid60, warm_start=circle60)
    assert np.max(np.abs(res.V.values - circle60.V.values)) <= 1e-12


def test_empty_mask_is_rejected(grid60):
    with pytest.raises(ConfigurationError, match="empty grid mask"):
        solve_envelope(circle_set(grid60.h * (0.5 + 0.5j), 1e-4), zero_weight(), grid=grid60)


def test_infinite_weight_on_K_is_rejected(grid60):
    with pytest.raises(PreconditionError, match="unbounded"):
        solve_envelope(circle_set(), constant_weight(math.inf), grid=grid60)


def test_single_extra_node_effect_shrinks():
    # one more K node matters less on finer grids, away from the node itself
    effects = []
    for n in (40, 80):
        g = SphereGrid(1.25, n)
        base = solve_envelope(circle_set(), zero_weight(), grid=g)
        extra = np.zeros((2,) + g.shape, dtype=bool)
        extra[0] = node_set(0, [0.0]).grid_mask(g)[0]
        both = solve_envelope(base.K_mask | extra, zero_weight(), grid=g)
        far = np.abs(g.z) >= 0.5
        effects.append(float(np.max(np.abs(both.V.values[0] - base.V.values[0])[far])))
    assert effects[1] < effects[0]


def test_options_validation():
    with pytest.raises(ConfigurationError):
        SolverOptions(method="sor")
    with pytest.raises(ConfigurationError):
        SolverOptions(tol=0)
