import math

import numpy as np
import pytest

from cp1green.core import GridField, ProjPoint
from cp1green.envelope_relax import SolverOptions
from cp1green.exceptions import ConfigurationError
from cp1green.pullback import (RationalMap, SandwichParams, check_alpha, critical_values,
                               estimate_alpha, estimate_beta, eval_map, image_set,
                               preimage_multiplicities, preimages, pullback_omega, pullback_u,
                               pushforward_u, verify_image_inequality, verify_sandwich)
from cp1green.weights import circle_set, log_dist_weight, zero_weight

from .conftest import chart_oracle

Z2 = RationalMap.power(2)
ROT = RationalMap.mobius_rotation(math.pi / 2)
OPTS = SolverOptions(tol=1e-9)


def fs_shifted(Z0, Z1):
    """log max(|Z0|, |Z1|) - log||Z||: omega-subharmonic, maximal off the circle."""
    a0, a1 = np.abs(Z0), np.abs(Z1)
    return np.log(np.maximum(a0, a1)) - 0.5 * np.log(a0**2 + a1**2)


def test_eval_map_examples():
    assert eval_map(Z2, ProjPoint(1, 3)) == ProjPoint(1, 9)
    assert eval_map(Z2, ProjPoint(0, 1)) == ProjPoint(0, 1)
    assert eval_map(ROT, ProjPoint(1, 0)) == ProjPoint(0, 1)
    assert eval_map(ROT, ProjPoint(1, 2)) == ProjPoint(1, -0.5)


def test_preimages_of_square_map():
    pts = preimages(Z2, ProjPoint(1, 1))
    assert sorted(round(complex(p.z1 / p.z0).real, 9) for p in pts) == [-1.0, 1.0]
    assert [m for _, m in preimage_multiplicities(Z2, ProjPoint(1, 0))] == [2]
    assert [m for _, m in preimage_multiplicities(Z2, ProjPoint(0, 1))] == [2]


def test_preimages_of_cubic():
    f = RationalMap.from_polys([0.1, -1, 0, 1], [1])
    zs = sorted(complex(p.z1 / p.z0).real for p in preimages(f, ProjPoint(1, 0.1)))
    np.testing.assert_allclose(zs, [-1, 0, 1], atol=1e-10)


def test_preimage_count_is_degree():
    f = RationalMap.from_polys([0.3, -1, 0.2j, 1], [1, 0.5])
    rng = np.random.default_rng(11)
    for _ in range(100):
        y = ProjPoint(1, complex(*rng.normal(size=2)))
        pts = preimages(f, y)
        assert len(pts) == 3
        for p in pts:
            assert eval_map(f, p).distance(y) < 1e-8


def test_critical_values_of_square():
    V0, V1 = critical_values(Z2)
    got = {complex(b / a) if abs(a) > 0 else "inf" for a, b in zip(V0, V1)}
    assert got == {0, "inf"}


def test_pullback_and_pushforward_examples(grid60):
    g = grid60
    u = GridField(chart_oracle(g, fs_shifted), g)
    idn = pullback_u(RationalMap.identity(), u)
    assert np.array_equal(idn.values, u.values)
    # z -> -1/z maps the shifted potential onto itself
    rot = pullback_u(ROT, u)
    assert np.max(np.abs(rot.values - u.values)) <= 1e-12
    push = pushforward_u(Z2, fs_shifted, g)
    Z0, Z1 = g.homogeneous(0)
    r = np.abs(Z1 / Z0)
    closed = 0.5 * np.log(np.maximum(1, r)) - 0.5 * np.log1p(r)
    np.testing.assert_allclose(push.values[0], closed, atol=1e-9)


def test_functoriality(grid60):
    g = grid60
    push = pushforward_u(Z2, fs_shifted, g)
    back = pullback_u(Z2, push)
    u = chart_oracle(g, fs_shifted)
    assert np.max(u - back.values) <= 0.01


@pytest.mark.parametrize("f,beta", [(RationalMap.identity(), 1), (Z2, 4), (RationalMap.power(3), 9),
                                    (ROT, 1)], ids=["id", "z2", "z3", "rot"])
def test_estimate_beta_values(f, beta):
    assert estimate_beta(f) == pytest.approx(beta, rel=0.01)


def test_estimate_beta_ignores_rotations():
    g = RationalMap.mobius_rotation(0.7)
    assert estimate_beta(Z2.compose(g)) == pytest.approx(estimate_beta(Z2), abs=1e-3)
    assert estimate_beta(g.compose(Z2)) == pytest.approx(estimate_beta(Z2), abs=1e-3)


def test_pullback_omega_mass_is_degree_times(grid100):
    from cp1green.core import sphere_mass
    om = pullback_omega(Z2)
    rho = np.stack([om.density(c, grid100.z) for c in (0, 1)])
    assert sphere_mass(grid100, rho) == pytest.approx(4 * math.pi, rel=0.02)


def test_check_alpha(grid60):
    h2 = grid60.h**2
    ident = check_alpha(RationalMap.identity(), 1.0, [fs_shifted], tol=5 * h2, grid=grid60)
    assert not ident["violation"]
    assert not check_alpha(Z2, 0.05, [fs_shifted], grid=grid60)["violation"]
    bad = check_alpha(Z2, 4.0, [fs_shifted], grid=grid60)
    assert bad["violation"]
    assert bad["witness"]["test_function"] == 0
    assert bad["excluded_nodes"] > 0


def test_estimate_alpha_flags_degenerate(grid60):
    est = estimate_alpha(Z2, [fs_shifted], grid=grid60)
    assert est["degenerate"]
    assert 0 < est["alpha"] < 1


def test_sandwich_identity(grid60):
    res = verify_sandwich(RationalMap.identity(), circle_set(), zero_weight(),
                          SandwichParams(1, 1), grid60, opts=OPTS)
    assert res["upper_defect"] <= 2 * OPTS.tol
    assert res["lower_defect"] <= 2 * OPTS.tol


def test_sandwich_params_validation():
    with pytest.raises(ConfigurationError):
        SandwichParams(4, 2)
    assert not SandwichParams(0.5, 4).hypotheses_hold
    assert SandwichParams(2, 4).hypotheses_hold


def test_image_inequality_square(grid100):
    res = verify_image_inequality(Z2, circle_set(), zero_weight(), grid100, opts=OPTS)
    assert res["defect"] <= 0.03


def test_image_inequality_rotation(grid100):
    res = verify_image_inequality(ROT, circle_set(0.3, 0.5), log_dist_weight(2), grid100, opts=OPTS)
    assert res["defect"] <= 2 * OPTS.tol + res["interpolation_error"]


def test_image_of_circle_under_square(grid60):
    K = image_set(Z2, circle_set(0, 0.8), grid60)
    z = np.array([0.64, 0.64j, 0.5])
    d = K.chart_distance(0, z)
    np.testing.assert_allclose(d[:2], 0, atol=1e-12)
    assert d[2] == pytest.approx(0.14, abs=0.02)


def test_common_factor_is_rejected():
    with pytest.raises(ConfigurationError, match="resultant"):
        RationalMap.from_polys([-1, 0, 1], [1, 1])


def test_from_config():
    f = RationalMap.from_config({"P": [0, 0, 1], "Q": [1]})
    assert f.degree == 2
    g = RationalMap.from_config({"P": [[0, 0], [1, 0]], "Q": [[1, 0]]})
    assert g.degree == 1
    with pytest.raises(ConfigurationError, match="unknown map keys"):
        RationalMap.from_config({"P": [1], "Q": [1], "R": [2]})
    with pytest.raises(ConfigurationError):
        RationalMap.from_config({"P": [0, 1]})
