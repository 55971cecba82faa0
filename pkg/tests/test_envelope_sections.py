import itertools
import json
import math

import numpy as np
import pytest

from cp1green.core import ProjPoint, SphereGrid
from cp1green.envelope_sections import (FiberPoint, Polynomial, build_section_envelope,
                                        combined_values, leja_nodes, lift_to_bundle,
                                        oracle_phi_n, transition_g10)
from cp1green.exceptions import ConfigurationError, DomainError
from cp1green.weights import circle_set, zero_weight

from .conftest import HALF_LOG2, circle_oracle

ROOTS16 = np.exp(2j * np.pi * np.arange(16) / 16)


def test_leja_on_segment():
    x = np.linspace(-1, 1, 201)
    idx = leja_nodes(x, 0.0, 3)
    assert set(np.round(x[idx], 12)) == {-1.0, 0.0, 1.0}


def test_leja_first_node_is_largest_modulus():
    z = np.array([0.1, 0.5j, -0.9, 0.3])
    assert leja_nodes(z, 0.0, 1)[0] == 2


def _log_vandermonde(pts):
    return sum(math.log(abs(a - b)) for a, b in itertools.combinations(pts, 2))


def test_leja_four_on_circle_is_fekete():
    idx = leja_nodes(ROOTS16, 0.0, 4)
    best = max(_log_vandermonde(c) for c in itertools.combinations(ROOTS16, 4))
    assert _log_vandermonde(ROOTS16[idx]) == pytest.approx(best, abs=1e-12)


def test_leja_five_on_circle_sequence():
    idx = leja_nodes(ROOTS16, 0.0, 5)
    expected = [1, -1, 1j, -1j, np.exp(1j * np.pi / 4)]
    got = ROOTS16[idx]
    assert np.allclose(np.sort_complex(got[:4]), np.sort_complex(np.array(expected[:4])), atol=1e-12)
    # the fifth node sits at an odd multiple of pi/4
    assert abs(got[4] ** 4 + 1) < 1e-12


def test_leja_rejects_too_few_samples():
    with pytest.raises(ConfigurationError):
        leja_nodes(np.array([1.0, 1.0, 2.0]), 0.0, 3)


@pytest.fixture(scope="module")
def circle_envs():
    K = circle_set()
    return {n: build_section_envelope(K, zero_weight(), n) for n in (1, 4, 8, 16)}


def test_degree_one_value_at_origin(circle_envs):
    v = circle_envs[1].value_at(ProjPoint(1, 0))
    assert v == pytest.approx(HALF_LOG2, abs=0.02)


def test_lp_oracle_degree_one_at_origin():
    K = circle_set().sample(400)
    res = oracle_phi_n(K, zero_weight(), 1, ProjPoint(1, 0))
    assert res["value"] == pytest.approx(0.34657, abs=0.005)


def test_sections_bounded_by_zero_on_K(circle_envs):
    for env in circle_envs.values():
        s = env.K_sample
        vals = env.value(np.ones_like(s), s)
        assert np.max(vals) <= 1e-9
        assert env.max_constraint() <= 1 + 1e-9


@pytest.mark.parametrize("n", [4, 8])
def test_sections_below_lp_oracle(circle_envs, n):
    env = circle_envs[n]
    rng = np.random.default_rng(n)
    for _ in range(4):
        z = complex(*rng.uniform(-0.6, 0.6, 2))
        x = ProjPoint(1, z)
        orc = oracle_phi_n(env.K_sample, zero_weight(), n, x)
        assert env.value_at(x) <= orc["value"] + math.log(orc["sec_factor"]) / n + 1e-6


def test_sections_below_relaxation(circle_envs, circle100):
    g = circle100.V.grid
    for env in circle_envs.values():
        vals = env.on_grid(g, stride=5).values
        ok = np.isfinite(vals) & np.isfinite(circle100.V.values)
        assert np.max(vals[ok] - circle100.V.values[ok]) <= 0.05


def test_sections_approach_oracle_with_degree(circle_envs):
    g = SphereGrid(1.25, 20)
    Z0, Z1 = g.homogeneous(0)
    Z0, Z1 = Z0.ravel(), Z1.ravel()
    envs = [circle_envs[n] for n in (1, 4, 8, 16)]
    rows = combined_values(envs, Z0, Z1)
    assert np.all(np.diff(rows, axis=0) >= 0)
    err = np.max(np.abs(rows - circle_oracle(Z0, Z1)[None, :]), axis=1)
    assert err[-1] < err[0]


def test_polynomial_chart_cocycle():
    p = Polynomial([1 - 2j, 0.5, 3j, -1])
    rng = np.random.default_rng(3)
    z = rng.normal(size=20) + 1j * rng.normal(size=20)
    lhs = p.chart(1, 1 / z)
    rhs = p.chart(0, z) / z**p.degree
    np.testing.assert_allclose(lhs, rhs, rtol=1e-10)
    ln = p.log_norm(np.ones_like(z), z)
    ln2 = p.log_norm(2j * np.ones_like(z), 2j * z)
    np.testing.assert_allclose(ln, ln2, atol=1e-10)


def test_fiber_transition():
    b = ProjPoint(1, 2 + 1j)
    assert transition_g10(b) == pytest.approx(2 + 1j)
    p = FiberPoint(b, 0.7, 0)
    assert p.in_chart(1).in_chart(0).t == pytest.approx(0.7)
    with pytest.raises(DomainError):
        transition_g10(ProjPoint(0, 1))


def test_lift_values(circle100):
    H = lift_to_bundle(circle100)
    assert H(FiberPoint(ProjPoint(1, 0), 1.0, 0)) == pytest.approx(0.34657, abs=0.01)
    base = H(FiberPoint(ProjPoint(1, 0), 1.0, 0))
    assert H(FiberPoint(ProjPoint(1, 0), math.e, 0)) - base == pytest.approx(1.0, abs=1e-12)
    assert H(FiberPoint(ProjPoint(1, 0), 0.0, 0)) == -math.inf


def test_lift_is_chart_consistent(circle100):
    H = lift_to_bundle(circle100)
    h = circle100.V.grid.h
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(50):
        z = complex(*rng.uniform(-1.2, 1.2, 2))
        if not 0.85 < abs(z) < 1.15:
            continue
        p = FiberPoint(ProjPoint(1, z), 1.3 + 0.4j, 0)
        worst = max(worst, abs(H(p) - H(p.in_chart(1))))
    assert worst <= 10 * h


def test_serialization(circle_envs):
    d = json.loads(circle_envs[4].to_json())
    assert d["n"] == 4
    assert len(d["nodes"]) == 5
    assert all(c in (0, 1) for _, _, c in d["nodes"])
    assert len(d["K_sample_digest"]) == 64
    again = build_section_envelope(circle_set(), zero_weight(), 4).to_json()
    assert again == circle_envs[4].to_json()


def test_degree_validation():
    with pytest.raises(ConfigurationError):
        build_section_envelope(circle_set(), zero_weight(), 0)
    with pytest.raises(ConfigurationError):
        oracle_phi_n(circle_set().sample(100), zero_weight(), 21, ProjPoint(1, 0))
