"""Weights, compact sets, gauges, and weight translation between C and CP^1."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (VALUE_CAP, aligned_chart, GridField, OmegaSpec, ProjPoint, SphereGrid,
                   bilinear, from_chart, homogeneous_log_norm)
from .exceptions import (ConfigurationError, DomainError, InvalidGaugeError,
                         InvalidWeightError)


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------

@dataclass
class Weight:
    """A function Q: CP^1 -> R u {+inf}.

    ``fn`` takes normalized homogeneous coordinate arrays ``(Z0, Z1)`` and
    returns real values; ``+inf`` and ``-inf`` are legal outputs, NaN is not.
    """

    fn: Callable
    description: str = "weight"

    def evaluate(self, Z0, Z1) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = np.asarray(self.fn(np.asarray(Z0, dtype=complex), np.asarray(Z1, dtype=complex)), dtype=float)
        out = np.broadcast_to(out, np.shape(Z0)).copy()
        if np.isnan(out).any():
            raise InvalidWeightError(f"weight {self.description!r} evaluated to NaN")
        return out

    def __call__(self, point: ProjPoint) -> float:
        return float(self.evaluate(np.array([point.z0]), np.array([point.z1]))[0])

    def at_chart(self, chart: int, z) -> np.ndarray:
        return self.evaluate(*from_chart(chart, z))

    def on_grid(self, grid: SphereGrid) -> GridField:
        return GridField(np.stack([self.evaluate(*grid.homogeneous(c)) for c in (0, 1)]),
                         grid, self.description)

    def finite_mask(self, grid: SphereGrid) -> np.ndarray:
        """Nodes where ``Q < +inf``."""
        return self.on_grid(grid).values < np.inf

    # arithmetic returns new weights; inputs stay immutable
    def __add__(self, other):
        if isinstance(other, Weight):
            return Weight(lambda Z0, Z1: self.fn(Z0, Z1) + other.fn(Z0, Z1),
                          f"({self.description} + {other.description})")
        c = float(other)
        return Weight(lambda Z0, Z1: self.fn(Z0, Z1) + c, f"({self.description} + {c:g})")

    def __sub__(self, other):
        if isinstance(other, Weight):
            return Weight(lambda Z0, Z1: self.fn(Z0, Z1) - other.fn(Z0, Z1),
                          f"({self.description} - {other.description})")
        return self + (-float(other))

    def scale(self, c: float) -> "Weight":
        c = float(c)
        return Weight(lambda Z0, Z1: c * np.asarray(self.fn(Z0, Z1), dtype=float), f"{c:g}*{self.description}")

    def compose(self, map_fn: Callable, label: str = "f") -> "Weight":
        """``Q o f`` for ``map_fn(Z0, Z1) -> (W0, W1)``."""
        return Weight(lambda Z0, Z1: self.fn(*map_fn(Z0, Z1)), f"{self.description}o{label}")


def capped_values(values: np.ndarray, cap: float = VALUE_CAP) -> tuple[np.ndarray, int]:
    """Clip to ``[-cap, cap]``; also return how many entries saturated."""
    saturated = int(np.count_nonzero(np.abs(values) >= cap))
    return np.clip(values, -cap, cap), saturated


def zero_weight() -> Weight:
    return Weight(lambda Z0, Z1: np.zeros(np.shape(Z0)), "zero")


def constant_weight(c: float) -> Weight:
    return Weight(lambda Z0, Z1: np.full(np.shape(Z0), float(c)), f"constant({c:g})")


def fs_potential_weight() -> Weight:
    """``Q([1:z]) = 0.5*log(1+|z|^2)``; ``+inf`` at infinity."""
    def fn(Z0, Z1):
        with np.errstate(divide="ignore"):
            return homogeneous_log_norm(Z0, Z1) - np.log(np.abs(Z0))
    return Weight(fn, "fs_potential")


def log_dist_weight(a: complex) -> Weight:
    """``-log|z - a|`` on chart 0 (``-inf`` at infinity)."""
    a = complex(a)

    def fn(Z0, Z1):
        with np.errstate(divide="ignore"):
            return np.log(np.abs(Z0)) - np.log(np.abs(Z1 - a * Z0))
    return Weight(fn, f"log_dist({a:g})")


def radial_power_weight(p: float) -> Weight:
    """``|z|^p / p`` on chart 0."""
    p = float(p)
    if p <= 0:
        raise ConfigurationError(f"radial_power exponent must be positive, got {p}")

    def fn(Z0, Z1):
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.abs(Z1) / np.abs(Z0)
        return np.where(np.abs(Z0) == 0, np.inf, r**p / p)
    return Weight(fn, f"radial_power({p:g})")


def table_weight(path) -> Weight:
    """Bilinear lookup in a grid-field CSV; stored nodes are reproduced exactly."""
    table = GridField.from_csv(path)

    def fn(Z0, Z1):
        return table.evaluate(Z0, Z1, prefer_chart=aligned_chart(table.grid, Z0, Z1))
    return Weight(fn, f"table:{path}")


_CALL = re.compile(r"^\s*([A-Za-z_]\w*)\s*(?:\((.*)\))?\s*$")


def parse_args(text: str | None) -> list[complex | float]:
    if not text or not text.strip():
        return []
    out = []
    for tok in text.split(","):
        v = complex(tok.strip().replace(" ", "").replace("i", "j"))
        out.append(v.real if v.imag == 0 else v)
    return out


def parse_weight(spec: str) -> Weight:
    """Build a catalog weight from ``"zero"``, ``"log_dist(1)"``, ``"table:path"`` ..."""
    if spec.startswith("table:"):
        return table_weight(spec[len("table:"):])
    m = _CALL.match(spec)
    if not m:
        raise ConfigurationError(f"cannot parse weight {spec!r}")
    name, args = m.group(1), parse_args(m.group(2))
    try:
        if name == "zero":
            return zero_weight()
        if name == "constant":
            return constant_weight(*args)
        if name == "fs_potential":
            return fs_potential_weight()
        if name == "log_dist":
            return log_dist_weight(*(args or [0]))
        if name == "radial_power":
            return radial_power_weight(*(args or [2]))
    except TypeError as exc:
        raise ConfigurationError(f"bad arguments for weight {spec!r}: {exc}") from None
    raise ConfigurationError(f"unknown weight {name!r} (known: zero, constant, fs_potential, "
                             "log_dist, radial_power, table:<path>)")


# ---------------------------------------------------------------------------
# compact sets
# ---------------------------------------------------------------------------

@dataclass
class CompactSet:
    """A compact set given by its distance to each chart's coordinate.

    ``distance(chart, z)`` returns the Euclidean distance, in chart ``chart``
    coordinates, from ``z`` to the set (0 inside).  Grid masks keep interior
    nodes within ``h/2`` of the set, so thin loci rasterize to a band one
    cell wide.
    """

    distance: Callable
    label: str = "K"
    sampler: Callable | None = None

    def chart_distance(self, chart: int, z) -> np.ndarray:
        return np.asarray(self.distance(chart, np.asarray(z, dtype=complex)), dtype=float)

    def membership(self, point: ProjPoint, tol: float = 1e-9) -> bool:
        from .core import chart_transition
        chart, z = chart_transition(point)
        return bool(self.chart_distance(chart, np.array([z]))[0] <= tol)

    def grid_mask(self, grid: SphereGrid) -> np.ndarray:
        tol = 0.5 * grid.h * (1 + 1e-9)
        return np.stack([(self.chart_distance(c, grid.z) <= tol) & grid.interior for c in (0, 1)])

    def sample(self, m: int) -> np.ndarray:
        """``m`` points of the set in chart-0 coordinates."""
        if self.sampler is None:
            raise ConfigurationError(f"set {self.label!r} has no sampler")
        return np.asarray(self.sampler(m), dtype=complex)


def _first_order_chart1(d0: Callable) -> Callable:
    """Chart-1 distance from a chart-0 one: ``d0(1/w) * |w|^2``."""
    def d1(w):
        with np.errstate(divide="ignore", invalid="ignore"):
            out = d0(1.0 / w) * np.abs(w) ** 2
        return np.where(w == 0, np.inf, out)
    return d1


def circle_set(center: complex = 0.0, radius: float = 1.0) -> CompactSet:
    c, r = complex(center), float(radius)
    if r <= 0:
        raise ConfigurationError("circle radius must be positive")
    d0 = lambda z: np.abs(np.abs(z - c) - r)
    s = abs(c) ** 2 - r**2
    if abs(s) > 1e-12:
        c1, r1 = np.conj(c) / s, r / abs(s)
        d1 = lambda w: np.abs(np.abs(w - c1) - r1)
    else:
        d1 = _first_order_chart1(d0)
    sampler = lambda m: c + r * np.exp(2j * np.pi * np.arange(m) / m)
    return CompactSet(lambda ch, z: d0(z) if ch == 0 else d1(z), f"circle({c:g},{r:g})", sampler)


def disk_set(center: complex = 0.0, radius: float = 1.0) -> CompactSet:
    c, r = complex(center), float(radius)
    d0 = lambda z: np.maximum(np.abs(z - c) - r, 0.0)
    s = abs(c) ** 2 - r**2
    if s > 1e-12:
        c1, r1 = np.conj(c) / s, r / s
        d1 = lambda w: np.maximum(np.abs(w - c1) - r1, 0.0)
    elif s < -1e-12:
        # disk contains 0, so its image in chart 1 is the exterior of a circle
        c1, r1 = np.conj(c) / s, r / abs(s)
        d1 = lambda w: np.maximum(r1 - np.abs(w - c1), 0.0)
    else:
        d1 = _first_order_chart1(d0)

    def sampler(m):
        k = int(math.ceil(math.sqrt(m)))
        rr = r * np.sqrt((np.arange(k) + 0.5) / k)
        th = 2 * np.pi * np.arange(k) / k
        return (c + rr[:, None] * np.exp(1j * th[None, :])).ravel()[:m]
    return CompactSet(lambda ch, z: d0(z) if ch == 0 else d1(z), f"disk({c:g},{r:g})", sampler)


def segment_set(a: complex = -1.0, b: complex = 1.0) -> CompactSet:
    a, b = complex(a), complex(b)

    def d0(z):
        t = np.clip(np.real((z - a) * np.conj(b - a)) / abs(b - a) ** 2, 0.0, 1.0)
        return np.abs(z - (a + t * (b - a)))
    d1 = _first_order_chart1(d0)
    sampler = lambda m: a + (b - a) * np.linspace(0.0, 1.0, m)
    return CompactSet(lambda ch, z: d0(z) if ch == 0 else d1(z), f"segment({a:g},{b:g})", sampler)


def annulus_set(r_in: float, r_out: float) -> CompactSet:
    r_in, r_out = float(r_in), float(r_out)
    if not 0 < r_in <= r_out:
        raise ConfigurationError("annulus needs 0 < r_in <= r_out")
    d0 = lambda z: np.maximum(np.maximum(r_in - np.abs(z), np.abs(z) - r_out), 0.0)
    d1 = lambda w: np.maximum(np.maximum(1 / r_out - np.abs(w), np.abs(w) - 1 / r_in), 0.0)

    def sampler(m):
        k = int(math.ceil(math.sqrt(m)))
        rr = np.linspace(r_in, r_out, k)
        th = 2 * np.pi * np.arange(k) / k
        return (rr[:, None] * np.exp(1j * th[None, :])).ravel()[:m]
    return CompactSet(lambda ch, z: d0(z) if ch == 0 else d1(z), f"annulus({r_in:g},{r_out:g})", sampler)


def whole_sphere() -> CompactSet:
    return CompactSet(lambda ch, z: np.zeros(np.shape(z)), "whole", None)


def union_set(a: CompactSet, b: CompactSet) -> CompactSet:
    return CompactSet(lambda ch, z: np.minimum(a.chart_distance(ch, z), b.chart_distance(ch, z)),
                      f"{a.label}|{b.label}", a.sampler)


def node_set(chart: int, zs) -> CompactSet:
    """Finitely many points of one chart (used for small perturbation studies)."""
    zs = np.atleast_1d(np.asarray(zs, dtype=complex))
    other = np.where(zs == 0, np.inf, 1.0 / np.where(zs == 0, 1, zs))

    def dist(ch, z):
        pts = zs if ch == chart else other
        return np.min(np.abs(np.asarray(z)[..., None] - pts), axis=-1)
    return CompactSet(dist, f"points{zs.tolist()}")


def parse_set(spec: str) -> CompactSet:
    m = _CALL.match(spec)
    if not m:
        raise ConfigurationError(f"cannot parse set {spec!r}")
    name, args = m.group(1), parse_args(m.group(2))
    makers = {"circle": circle_set, "disk": disk_set, "segment": segment_set,
              "annulus": annulus_set, "whole": whole_sphere}
    if name not in makers:
        raise ConfigurationError(f"unknown set {name!r} (known: {', '.join(makers)})")
    try:
        return makers[name](*args)
    except TypeError as exc:
        raise ConfigurationError(f"bad arguments for set {spec!r}: {exc}") from None


# ---------------------------------------------------------------------------
# mildness diagnostic
# ---------------------------------------------------------------------------

@dataclass
class MildReport:
    continuity_score: float
    finite_area_fraction: float
    verdict: bool
    raw_score: float
    saturated_nodes: int


def mild_check(Q: Weight, omega: OmegaSpec, grid: SphereGrid,
               bound: float = 1.0, floor: float = 0.01) -> MildReport:
    """Heuristic check that ``exp(-Q + phi_j)`` is continuous and ``{Q < inf}`` is fat.

    ``e = exp(-Q + phi)`` is divided by its median (so adding a constant to Q
    changes nothing), mapped to ``e/(1+e)`` in ``[0, 1]`` so that continuous
    blow-up to ``+inf`` is allowed, and the largest jump between adjacent
    nodes divided by ``sqrt(h)`` is compared with ``bound``.  ``raw_score`` is
    the same statistic on ``e / max(e)`` over finite values, without the
    compactification.
    """
    qv = Q.on_grid(grid).values
    e = np.empty_like(qv)
    with np.errstate(over="ignore", invalid="ignore"):
        for c in (0, 1):
            e[c] = np.exp(-qv[c] + omega.potential(c, grid.z))
    pos = e[np.isfinite(e) & (e > 0)]
    sq = math.sqrt(grid.h)
    if pos.size:
        scale = float(np.median(pos))
        t = e / scale
        with np.errstate(invalid="ignore"):
            t = np.where(np.isinf(t), 1.0, t / (1.0 + t))
        top = float(np.max(pos))
        raw = e / top
    else:
        t = np.zeros_like(e)
        raw = np.zeros_like(e)
    score = 0.0
    raw_score = 0.0
    for c in (0, 1):
        for a, b in ((t[c][1:, :], t[c][:-1, :]), (t[c][:, 1:], t[c][:, :-1])):
            score = max(score, float(np.max(np.abs(a - b))) / sq)
        for a, b in ((raw[c][1:, :], raw[c][:-1, :]), (raw[c][:, 1:], raw[c][:, :-1])):
            d = np.abs(a - b)
            d = d[np.isfinite(d)]
            if d.size:
                raw_score = max(raw_score, float(np.max(d)) / sq)
    own = np.stack([grid.own_region(c) for c in (0, 1)])
    finite_fraction = float(np.count_nonzero((qv < np.inf) & own) / np.count_nonzero(own))
    _, sat = capped_values(qv)
    verdict = score <= bound and finite_fraction >= floor
    return MildReport(score, finite_fraction, bool(verdict), raw_score, sat)


# ---------------------------------------------------------------------------
# C <-> CP^1 translation
# ---------------------------------------------------------------------------

def translate_weight_to_affine(Q: Weight) -> Callable:
    """``q(z) = Q([1:z]) - 0.5*log(1+|z|^2)``."""
    def q(z):
        z = np.asarray(z, dtype=complex)
        if not np.all(np.isfinite(z)):
            raise DomainError("affine weight is undefined at Z0 = 0")
        return Q.evaluate(np.ones_like(z), z) - 0.5 * np.log1p(np.abs(z) ** 2)
    return q


@dataclass
class LiminfReport:
    value: float
    tail: tuple[float, float]
    capped: bool


def liminf_at_infinity(q: Callable, k_max: int = 40, n_ring: int = 16) -> LiminfReport:
    """Approximate ``liminf_{z -> inf} q(z) + 0.5*log(1+|z|^2)`` on shrinking rings.

    The rings are ``|w| = 2^-k`` in chart 1.  When the last five values move
    by more than 1 in one direction the limit is reported as ``+-inf``.
    """
    th = np.exp(2j * np.pi * (np.arange(n_ring) + 0.5) / n_ring)
    seq = []
    for k in range(1, k_max + 1):
        z = (2.0**k) * th
        with np.errstate(over="ignore", invalid="ignore"):
            vals = np.asarray(q(z), dtype=float) + 0.5 * np.log1p(np.abs(z) ** 2)
        seq.append(float(np.min(vals)))
    tail = (seq[-2], seq[-1])
    drift = seq[-1] - seq[-6]
    if drift > 1.0:
        return LiminfReport(math.inf, tail, True)
    if drift < -1.0:
        return LiminfReport(-math.inf, tail, True)
    return LiminfReport(seq[-1], tail, False)


def translate_weight_to_projective(q: Callable, label: str = "q") -> Weight:
    """``Q([1:z]) = q(z) + 0.5*log(1+|z|^2)``, lsc-regularized at infinity.

    The report of the limit at infinity is attached as ``.at_infinity``.
    """
    report = liminf_at_infinity(q)

    def fn(Z0, Z1):
        out = np.full(np.shape(Z0), report.value)
        ok = np.abs(Z0) > 0
        if ok.any():
            z = Z1[ok] / Z0[ok]
            out[ok] = np.asarray(q(z), dtype=float) + 0.5 * np.log1p(np.abs(z) ** 2)
        return out
    W = Weight(fn, f"projective({label})")
    W.at_infinity = report
    return W


# ---------------------------------------------------------------------------
# gauges
# ---------------------------------------------------------------------------

@dataclass
class GaugeFunction:
    """A continuous gauge xi with its five-point Laplacian on the grid.

    ``laplacian_xi`` holds the finite-difference Laplacian at interior nodes
    (so the discrete identity behind gauge invariance is exact there); on
    frame nodes it holds the analytic Laplacian when one is known.
    """

    xi: GridField
    laplacian_xi: GridField
    fn: Callable | None = None
    label: str = "xi"

    @classmethod
    def from_function(cls, grid: SphereGrid, fn: Callable, laplacian: Callable | None = None,
                      label: str = "xi") -> "GaugeFunction":
        xi = GridField.from_function(grid, fn, label)
        lap = xi.laplacian()
        if laplacian is not None:
            exact = np.stack([np.asarray(laplacian(c, grid.z), dtype=float) * np.ones(grid.shape)
                              for c in (0, 1)])
            lap[:, grid.frame] = exact[:, grid.frame]
        else:
            for c in (0, 1):
                lap[c][grid.frame] = _extend_to_frame(lap[c])[grid.frame]
        if not np.all(np.isfinite(xi.values)):
            raise InvalidGaugeError(f"gauge {label!r} is not finite on the grid")
        return cls(xi, GridField(lap, grid, f"lap({label})"), fn, label)

    def value(self, Z0, Z1) -> np.ndarray:
        if self.fn is not None:
            return np.asarray(self.fn(Z0, Z1), dtype=float)
        return self.xi.evaluate(Z0, Z1)

    def laplacian_at(self, chart: int, z) -> np.ndarray:
        return bilinear(self.laplacian_xi.values[chart], self.xi.grid, z)

    def laplacian_error(self, laplacian: Callable) -> float:
        """Max interior deviation from an analytic Laplacian (expected O(h^2))."""
        g = self.xi.grid
        err = 0.0
        for c in (0, 1):
            exact = np.asarray(laplacian(c, g.z), dtype=float) * np.ones(g.shape)
            err = max(err, float(np.max(np.abs(self.laplacian_xi.values[c] - exact)[g.interior])))
        return err


def _extend_to_frame(a: np.ndarray) -> np.ndarray:
    out = a.copy()
    out[0, :], out[-1, :] = out[1, :], out[-2, :]
    out[:, 0], out[:, -1] = out[:, 1], out[:, -2]
    return out


def constant_gauge(grid: SphereGrid, c: float) -> GaugeFunction:
    c = float(c)
    return GaugeFunction.from_function(grid, lambda Z0, Z1: np.full(np.shape(Z0), c),
                                       lambda ch, z: np.zeros(np.shape(z)), f"const({c:g})")


def harmonic_gauge(grid: SphereGrid, amplitude: float = 0.1, axis: int = 0) -> GaugeFunction:
    """``xi = a * x_axis``, a first spherical harmonic on the sphere.

    Its chart Laplacian is ``-4 * rho * xi`` (FS density rho), so
    ``rho + Lap(xi) = rho * (1 - 4 xi) > 0`` whenever ``|a| < 1/4``.
    """
    a = float(amplitude)

    def coord(Z0, Z1):
        n2 = np.abs(Z0) ** 2 + np.abs(Z1) ** 2
        p = Z1 * np.conj(Z0)
        return [2 * p.real / n2, 2 * p.imag / n2, (np.abs(Z1) ** 2 - np.abs(Z0) ** 2) / n2][axis]

    def fn(Z0, Z1):
        return a * coord(Z0, Z1)

    def lap(ch, z):
        Z0, Z1 = from_chart(ch, z)
        return -4.0 * (2.0 / (1.0 + np.abs(z) ** 2) ** 2) * fn(Z0, Z1)
    return GaugeFunction.from_function(grid, fn, lap, f"harmonic({a:g},{axis})")


def bump_gauge(grid: SphereGrid, amplitude: float = 0.1, center: complex = 0.3,
               width: float = 0.5) -> GaugeFunction:
    """Gaussian bump ``a*exp(-|z-c|^2/width)`` in chart 0 (smooth through infinity)."""
    a, c, s = float(amplitude), complex(center), float(width)

    def fn(Z0, Z1):
        out = np.zeros(np.shape(Z0))
        ok = np.abs(Z0) > 0
        z = Z1[ok] / Z0[ok]
        out[ok] = a * np.exp(-np.abs(z - c) ** 2 / s)
        return out
    return GaugeFunction.from_function(grid, fn, None, f"bump({a:g},{c:g},{s:g})")


def gauge_shift(Q: Weight, xi: GaugeFunction, direction: int,
                omega: OmegaSpec | None = None) -> tuple[Weight, OmegaSpec]:
    """``Q + direction*xi`` and the cohomologous form ``omega + dd^c xi``.

    Raises :class:`InvalidGaugeError` when ``rho + Lap(xi) < 0`` at a node.
    """
    if direction not in (-1, 1):
        raise ConfigurationError("direction must be +1 or -1")
    omega = omega or OmegaSpec.fubini_study()
    g = xi.xi.grid
    for c in (0, 1):
        dens = omega.density(c, g.z) + xi.laplacian_xi.values[c]
        bad = dens < -1e-12
        if bad.any():
            ix, iy = np.argwhere(bad)[0]
            raise InvalidGaugeError(
                f"rho + Lap(xi) = {dens[ix, iy]:.3g} < 0 at chart {c} node ({ix}, {iy}); "
                "omega + dd^c xi is not a positive form")
    shifted = Weight(lambda Z0, Z1: Q.fn(Z0, Z1) + direction * xi.value(Z0, Z1),
                     f"{Q.description}{'+' if direction > 0 else '-'}{xi.label}")
    omega_p = OmegaSpec(
        lambda z: omega.potential(0, z) + xi.xi.interpolate(0, z),
        lambda z: omega.potential(1, z) + xi.xi.interpolate(1, z),
        lambda z: omega.density(0, z) + xi.laplacian_at(0, z),
        lambda z: omega.density(1, z) + xi.laplacian_at(1, z),
        omega.degree, f"{omega.label}+ddc({xi.label})")
    return shifted, omega_p


__all__ = [
    "Weight", "CompactSet", "GaugeFunction", "MildReport", "LiminfReport",
    "mild_check", "translate_weight_to_affine", "translate_weight_to_projective",
    "liminf_at_infinity", "gauge_shift", "parse_weight", "parse_set",
    "zero_weight", "constant_weight", "fs_potential_weight", "log_dist_weight",
    "radial_power_weight", "table_weight", "circle_set", "disk_set",
    "segment_set", "annulus_set", "whole_sphere", "union_set", "node_set",
    "constant_gauge", "harmonic_gauge", "bump_gauge", "capped_values",
]
