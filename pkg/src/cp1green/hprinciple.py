"""Homogenization dictionary.

L-class functions on C correspond to log-homogeneous functions on C^2
(``V(Z) = v(Z1/Z0) + log|Z0|``), and metrics ``{h_0, h_1}`` on the
degree-one bundle correspond to fiber-homogeneous functions
``log chi(x, t) = d h_i(x) + d log|t|`` on the dual bundle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import OmegaSpec, ProjPoint
from .envelope_relax import EnvelopeResult
from .envelope_sections import FiberPoint
from .exceptions import ConfigurationError, DomainError, PreconditionError

LAMBDAS = (2.0, 1j, 0.5 * np.exp(1j * np.pi / 3))


@dataclass
class HomogeneousFunction:
    """``F(Z0, Z1)`` with ``F(lambda Z) = F(Z) + d log|lambda|``."""

    evaluator: Callable
    order: float = 1.0
    label: str = "F"

    def __call__(self, Z0, Z1):
        return self.evaluator(Z0, Z1)

    def homogeneity_defect(self, Z0, Z1) -> float:
        Z0 = np.asarray(Z0, dtype=complex)
        Z1 = np.asarray(Z1, dtype=complex)
        base = np.asarray(self(Z0, Z1), dtype=float)
        worst = 0.0
        for lam in LAMBDAS:
            d = np.asarray(self(lam * Z0, lam * Z1), dtype=float) - base - self.order * math.log(abs(lam))
            fin = np.isfinite(base)
            worst = max(worst, float(np.max(np.abs(d[fin]), initial=0.0)))
        return worst


@dataclass
class Tail:
    value: float
    last_two: tuple[float, float]


def _ring_limsup(v: Callable, Z1: complex, k_max: int = 40, n_ring: int = 16) -> Tail:
    th = np.exp(2j * np.pi * (np.arange(n_ring) + 0.5) / n_ring)
    seq = []
    for k in range(1, k_max + 1):
        y0 = 2.0**-k * th
        seq.append(float(np.max(np.asarray(v(Z1 / y0), dtype=float) + np.log(np.abs(y0)))))
    return Tail(seq[-1], (seq[-2], seq[-1]))


def homogenize(v: Callable, Z0, Z1, tails: list | None = None):
    """``v(Z1/Z0) + log|Z0|``; at ``Z0 = 0`` a ring limsup with ``|Y0| = 2^-k``.

    When ``tails`` is a list, the ring tails used at ``Z0 = 0`` are appended.
    """
    scalar = np.ndim(Z0) == 0 and np.ndim(Z1) == 0
    Z0 = np.atleast_1d(np.asarray(Z0, dtype=complex))
    Z1 = np.atleast_1d(np.asarray(Z1, dtype=complex))
    Z0, Z1 = np.broadcast_arrays(Z0, Z1)
    if np.any((Z0 == 0) & (Z1 == 0)):
        raise DomainError("(0, 0) has no homogenization value")
    out = np.empty(Z0.shape)
    ok = Z0 != 0
    if ok.any():
        out[ok] = np.asarray(v(Z1[ok] / Z0[ok]), dtype=float) + np.log(np.abs(Z0[ok]))
    for idx in zip(*np.nonzero(~ok)):
        tail = _ring_limsup(v, complex(Z1[idx]))
        out[idx] = tail.value
        if tails is not None:
            tails.append(tail)
    return float(out[0]) if scalar else out


def homogenized(v: Callable, label: str = "v") -> HomogeneousFunction:
    return HomogeneousFunction(lambda Z0, Z1: homogenize(v, Z0, Z1), 1.0, f"H[{label}]")


def dehomogenize(V: HomogeneousFunction) -> Callable:
    """``v(z) = V(1, z)``; only for order one."""
    if abs(V.order - 1.0) > 1e-12:
        raise ConfigurationError(f"dehomogenize needs order 1, got {V.order}; rescale by 1/d first")

    def v(z):
        z = np.asarray(z, dtype=complex)
        return V(np.ones_like(z), z)
    return v


# ---------------------------------------------------------------------------
# metrics and fiber functions
# ---------------------------------------------------------------------------

@dataclass
class MetricData:
    """Chart potentials of a metric on the degree-one bundle.

    Cocycle: ``h_1(1/z) = h_0(z) - log|z|``.
    """

    h_0: Callable
    h_1: Callable
    label: str = "metric"

    def h(self, chart: int, u):
        return (self.h_0 if chart == 0 else self.h_1)(np.asarray(u, dtype=complex))

    def cocycle_defect(self, samples) -> float:
        z = np.asarray(samples, dtype=complex)
        d = self.h_1(1.0 / z) - self.h_0(z) + np.log(np.abs(z))
        return float(np.max(np.abs(d)))

    @classmethod
    def from_omega(cls, omega: OmegaSpec | None = None) -> "MetricData":
        omega = omega or OmegaSpec.fubini_study()
        return cls(lambda z: omega.potential(0, z), lambda z: omega.potential(1, z), omega.label)

    @classmethod
    def from_field(cls, V, omega: OmegaSpec | None = None) -> "MetricData":
        """``h_i = V + phi_i`` read from each chart's own grid."""
        omega = omega or OmegaSpec.fubini_study()
        f = V.V if isinstance(V, EnvelopeResult) else V
        return cls(lambda z: f.interpolate(0, z) + omega.potential(0, z),
                   lambda z: f.interpolate(1, z) + omega.potential(1, z), f"{f.label}+phi")


@dataclass
class FiberFunction:
    """``log chi`` on the dual bundle, homogeneous of order ``d`` in the fiber."""

    evaluator: Callable
    order: float

    def __call__(self, p: FiberPoint) -> float:
        return self.evaluator(p)

    def homogeneity_defect(self, points) -> float:
        worst = 0.0
        for p in points:
            base = self(p)
            if not math.isfinite(base):
                continue
            for lam in LAMBDAS:
                q = FiberPoint(p.base, lam * p.t, p.chart)
                worst = max(worst, abs(self(q) - base - self.order * math.log(abs(lam))))
        return worst


def metric_to_chi(m: MetricData, d: float) -> FiberFunction:
    """``log chi(x, t) = d h_i(x) + d log|t|`` in the chart of the fiber point."""
    if not d > 0:
        raise ConfigurationError("order d must be positive")

    def log_chi(p: FiberPoint) -> float:
        if p.t == 0:
            return -math.inf
        u = p.coordinate()
        return d * float(np.asarray(m.h(p.chart, np.array([u])))[0]) + d * math.log(abs(p.t))
    return FiberFunction(log_chi, d)


def chi_to_metric(chi: FiberFunction, d: float, check_points=None, tol: float = 1e-8) -> MetricData:
    """``h_i(x) = (1/d) log chi(x, 1)`` in chart ``i``.

    Homogeneity of ``chi`` is checked on ``check_points`` (a default set of
    fiber points when omitted) and must hold to ``tol``.
    """
    if not d > 0:
        raise ConfigurationError("order d must be positive")
    if check_points is None:
        rng = np.random.default_rng(0)
        zs = 0.9 * np.sqrt(rng.uniform(size=8)) * np.exp(2j * np.pi * rng.uniform(size=8))
        check_points = [FiberPoint(ProjPoint.from_chart(c, z), 1.3 - 0.2j, c) for c in (0, 1) for z in zs]
    probe = FiberFunction(chi.evaluator, d)
    defect = probe.homogeneity_defect(check_points)
    if defect > tol:
        raise PreconditionError(f"chi is not fiber-homogeneous of order {d}: defect {defect:.3g}")

    def make(chart):
        def h(u):
            u = np.atleast_1d(np.asarray(u, dtype=complex))
            vals = np.array([chi(FiberPoint(ProjPoint.from_chart(chart, x), 1.0, chart)) for x in u.ravel()])
            return (vals / d).reshape(u.shape)
        return h
    return MetricData(make(0), make(1), "from_chi")


__all__ = [
    "HomogeneousFunction", "MetricData", "FiberFunction", "homogenize",
    "homogenized", "dehomogenize", "metric_to_chi", "chi_to_metric",
]
