"""Riemann-sphere geometry: homogeneous points, the two-chart atlas, the
Fubini-Study form, chart grids and grid fields.

Conventions
-----------
Chart 0 is ``{Z0 != 0}`` with coordinate ``z = Z1/Z0``; chart 1 is
``{Z1 != 0}`` with coordinate ``w = Z0/Z1``.  The Fubini-Study potential is
``phi(z) = 0.5*log(1 + |z|^2)`` in both charts, its Laplace density is
``rho = 2/(1 + |z|^2)^2`` and the total mass of the form is ``2*pi``.  With
this normalization ``phi_0(z) - phi_1(1/z) = log|z|`` holds exactly.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import ndimage

from .exceptions import ConfigurationError, DomainError

VALUE_CAP = 1e6
TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# points and charts
# ---------------------------------------------------------------------------

def normalize_homogeneous(Z0, Z1):
    """Divide ``(Z0, Z1)`` by its larger-modulus component (ties go to Z0).

    The result has ``max(|Z0|, |Z1|) == 1`` and the dominant entry is
    exactly ``1``, which makes projective equality a plain comparison.
    """
    Z0 = np.asarray(Z0, dtype=complex)
    Z1 = np.asarray(Z1, dtype=complex)
    if np.any((Z0 == 0) & (Z1 == 0)):
        raise DomainError("(0, 0) is not a point of CP^1")
    use0 = np.abs(Z1) <= np.abs(Z0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        N0 = np.where(use0, 1.0 + 0j, Z0 / Z1)
        N1 = np.where(use0, Z1 / Z0, 1.0 + 0j)
    return N0, N1


@dataclass(frozen=True, eq=False)
class ProjPoint:
    """A point ``[z0 : z1]`` of CP^1, stored normalized."""

    z0: complex
    z1: complex

    def __post_init__(self):
        n0, n1 = normalize_homogeneous(self.z0, self.z1)
        object.__setattr__(self, "z0", complex(n0))
        object.__setattr__(self, "z1", complex(n1))

    @classmethod
    def affine(cls, z: complex) -> "ProjPoint":
        return cls(1.0, z)

    @classmethod
    def infinity(cls) -> "ProjPoint":
        return cls(0.0, 1.0)

    @classmethod
    def from_chart(cls, chart: int, z: complex) -> "ProjPoint":
        return cls(1.0, z) if chart == 0 else cls(z, 1.0)

    def distance(self, other: "ProjPoint") -> float:
        """Chordal distance ``|det(Z, W)| / (|Z| |W|)``."""
        det = self.z0 * other.z1 - self.z1 * other.z0
        return abs(det) / (math.hypot(abs(self.z0), abs(self.z1))
                           * math.hypot(abs(other.z0), abs(other.z1)))

    def __eq__(self, other):
        if not isinstance(other, ProjPoint):
            return NotImplemented
        return self.distance(other) <= 1e-12

    __hash__ = None

    def __repr__(self):
        return f"ProjPoint([{self.z0:.6g} : {self.z1:.6g}])"


def to_chart(Z0, Z1):
    """Vectorized chart selection: the chart where ``|coordinate| <= 1``."""
    Z0 = np.asarray(Z0, dtype=complex)
    Z1 = np.asarray(Z1, dtype=complex)
    chart = (np.abs(Z1) > np.abs(Z0)).astype(np.int8)
    with np.errstate(divide="ignore", invalid="ignore"):
        coord = np.where(chart == 0, Z1 / Z0, Z0 / Z1)
    return chart, coord


def from_chart(chart, z):
    """Normalized homogeneous coordinates of chart points (vectorized)."""
    z = np.asarray(z, dtype=complex)
    chart = np.broadcast_to(np.asarray(chart), z.shape)
    Z0 = np.where(chart == 0, 1.0 + 0j, z)
    Z1 = np.where(chart == 0, z, 1.0 + 0j)
    return normalize_homogeneous(Z0, Z1)


def chart_transition(point: ProjPoint) -> tuple[int, complex]:
    """Return ``(chart, coordinate)`` with ``|coordinate| <= 1``.

    >>> chart_transition(ProjPoint(1, 2))
    (1, (0.5+0j))
    """
    if abs(point.z1) <= abs(point.z0):
        return 0, point.z1 / point.z0
    return 1, point.z0 / point.z1


# ---------------------------------------------------------------------------
# Fubini-Study form
# ---------------------------------------------------------------------------

def fs_potential(chart, z):
    """``0.5*log(1 + |z|^2)``; identical in both charts."""
    return 0.5 * np.log1p(np.abs(z) ** 2)


def omega_density(chart, z):
    """Laplacian of :func:`fs_potential`, ``2/(1 + |z|^2)^2``."""
    return 2.0 / (1.0 + np.abs(z) ** 2) ** 2


def homogeneous_log_norm(Z0, Z1):
    """``log ||Z||`` for the Euclidean norm on C^2."""
    return 0.5 * np.log(np.abs(Z0) ** 2 + np.abs(Z1) ** 2)


@dataclass
class OmegaSpec:
    """A smooth (1,1)-form on CP^1 given by chart potentials and densities.

    ``degree`` is the cohomology degree: ``potential_0(z) - potential_1(1/z)
    = degree * log|z|`` on the overlap and the total mass is
    ``2*pi*degree``.
    """

    potential_0: Callable
    potential_1: Callable
    density_0: Callable
    density_1: Callable
    degree: float = 1.0
    label: str = "fubini_study"

    @classmethod
    def fubini_study(cls) -> "OmegaSpec":
        return cls(lambda z: fs_potential(0, z), lambda z: fs_potential(1, z),
                   lambda z: omega_density(0, z), lambda z: omega_density(1, z))

    def potential(self, chart: int, z):
        return (self.potential_0 if chart == 0 else self.potential_1)(np.asarray(z))

    def density(self, chart: int, z):
        return (self.density_0 if chart == 0 else self.density_1)(np.asarray(z))

    def check(self, samples=None, fd_step: float = 1e-3) -> dict:
        """Verify density = Laplacian(potential), cocycle and positivity.

        Returns the worst relative Laplacian error, worst cocycle defect and
        the minimum sampled density.
        """
        if samples is None:
            rng = np.random.default_rng(0)
            samples = 0.9 * np.sqrt(rng.uniform(size=64)) * np.exp(2j * np.pi * rng.uniform(size=64))
        samples = np.asarray(samples, dtype=complex)
        lap_err = 0.0
        min_density = np.inf
        for chart in (0, 1):
            p = lambda u: self.potential(chart, u)
            e = fd_step
            fd = (p(samples + e) + p(samples - e) + p(samples + 1j * e)
                  + p(samples - 1j * e) - 4 * p(samples)) / e**2
            rho = self.density(chart, samples)
            lap_err = max(lap_err, float(np.max(np.abs(fd - rho) / np.maximum(np.abs(rho), 1e-12))))
            min_density = min(min_density, float(np.min(rho)))
        ring = np.exp(1j * np.linspace(0, 2 * np.pi, 37))[:-1] * np.array([0.9, 1.0, 1.1])[:, None]
        ring = ring.ravel()
        cocycle = self.potential(0, ring) - self.potential(1, 1 / ring) - self.degree * np.log(np.abs(ring))
        return {"laplacian_rel_error": lap_err,
                "cocycle_defect": float(np.max(np.abs(cocycle))),
                "min_density": min_density}


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

def _smooth_step(t, a):
    """1 for t <= -a, 0 for t >= a, with s(t) + s(-t) = 1."""
    t = np.clip(t, -a, a)
    return 0.5 * (1.0 - np.sin(0.5 * np.pi * t / a))


@dataclass(frozen=True)
class SphereGrid:
    """Two square grids ``[-hw, hw]^2``, one per chart.

    Node ``(ix, iy)`` sits at ``x[ix] + 1j*x[iy]``.  The outer frame of each
    square lies in ``|z| >= hw`` and is filled from the other chart; every
    other node is an interior node.
    """

    half_width: float = 1.25
    n_cells: int = 400

    def __post_init__(self):
        if self.half_width < 1.1:
            raise ConfigurationError(
                f"half_width={self.half_width} < 1.1: chart overlap annulus would be empty or too thin")
        if self.n_cells < 8:
            raise ConfigurationError(f"n_cells={self.n_cells} is too small")

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / self.n_cells

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_cells + 1, self.n_cells + 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.n_cells + 1)

    @property
    def z(self) -> np.ndarray:
        x = self.x
        return x[:, None] + 1j * x[None, :]

    @property
    def interior(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[1:-1, 1:-1] = True
        return m

    @property
    def frame(self) -> np.ndarray:
        return ~self.interior

    @property
    def overlap(self) -> np.ndarray:
        """Interior nodes in the annulus ``1/hw <= |z| <= hw``."""
        r = np.abs(self.z)
        return self.interior & (r >= 1.0 / self.half_width) & (r <= self.half_width)

    def own_region(self, chart: int) -> np.ndarray:
        """Deduplicated cover: chart 0 owns ``|z| <= 1``, chart 1 ``|w| < 1``."""
        r = np.abs(self.z)
        return r <= 1.0 if chart == 0 else r < 1.0

    def partition_of_unity(self, chart: int) -> np.ndarray:
        """Smooth weights with chi_0(z) + chi_1(1/z) = 1; zero on the frame."""
        with np.errstate(divide="ignore"):
            t = np.log(np.abs(self.z))
        return _smooth_step(t, math.log(self.half_width))

    def homogeneous(self, chart: int):
        """Normalized homogeneous coordinates of the nodes of ``chart``."""
        return from_chart(chart, self.z)

    def cell_distance(self, mask: np.ndarray) -> np.ndarray:
        """Euclidean distance, in cells, from each node to the nearest True node."""
        if not mask.any():
            return np.full(mask.shape, np.inf)
        return ndimage.distance_transform_edt(~mask)

    def index_of(self, z: complex) -> tuple[int, int]:
        """Nearest node indices of a chart coordinate."""
        ix = int(round((z.real + self.half_width) / self.h))
        iy = int(round((z.imag + self.half_width) / self.h))
        return (min(max(ix, 0), self.n_cells), min(max(iy, 0), self.n_cells))


def discrete_laplacian(values: np.ndarray, h: float) -> np.ndarray:
    """Five-point Laplacian on interior nodes; NaN on the frame."""
    out = np.full(values.shape, np.nan)
    with np.errstate(invalid="ignore"):
        out[1:-1, 1:-1] = (values[2:, 1:-1] + values[:-2, 1:-1] + values[1:-1, 2:]
                           + values[1:-1, :-2] - 4.0 * values[1:-1, 1:-1]) / h**2
    return out


NODE_SNAP = 1e-9


def bilinear(values: np.ndarray, grid: SphereGrid, u) -> np.ndarray:
    """Bilinear interpolation of one chart array at chart coordinates ``u``.

    Infinite corner values propagate (``+inf`` if any contributing corner is
    ``+inf``); points outside the square are clamped to the boundary.
    """
    u = np.asarray(u, dtype=complex)
    n = grid.n_cells
    fx = (u.real + grid.half_width) / grid.h
    fy = (u.imag + grid.half_width) / grid.h
    # points within roundoff of a node read that node alone
    fx = np.where(np.abs(fx - np.round(fx)) < NODE_SNAP, np.round(fx), fx)
    fy = np.where(np.abs(fy - np.round(fy)) < NODE_SNAP, np.round(fy), fy)
    i0 = np.clip(np.floor(fx), 0, n - 1).astype(np.intp)
    j0 = np.clip(np.floor(fy), 0, n - 1).astype(np.intp)
    tx = np.clip(fx - i0, 0.0, 1.0)
    ty = np.clip(fy - j0, 0.0, 1.0)
    out = np.zeros(u.shape)
    with np.errstate(invalid="ignore"):
        for di, dj, w in ((0, 0, (1 - tx) * (1 - ty)), (1, 0, tx * (1 - ty)),
                          (0, 1, (1 - tx) * ty), (1, 1, tx * ty)):
            c = values[i0 + di, j0 + dj]
            out = out + np.where(w > 0, w * c, 0.0)
    return out


def bicubic(values: np.ndarray, grid: SphereGrid, u, clip: float = 50.0) -> np.ndarray:
    """Cubic-spline interpolation; non-finite values are clipped first."""
    u = np.asarray(u, dtype=complex)
    v = np.clip(np.nan_to_num(values, nan=0.0, posinf=clip, neginf=-clip), -clip, clip)
    coords = np.stack([((u.real + grid.half_width) / grid.h).ravel(),
                       ((u.imag + grid.half_width) / grid.h).ravel()])
    return ndimage.map_coordinates(v, coords, order=3, mode="nearest").reshape(u.shape)


def aligned_chart(grid: SphereGrid, Z0, Z1, default=None) -> np.ndarray:
    """Chart to read each point from: one where it is a grid node, else ``default``.

    ``default`` (scalar or per point) falls back to the chart where the
    coordinate has modulus <= 1.

    Maps that send nodes to nodes of the other chart (``z -> -1/z``) are
    then transported without interpolation.
    """
    Z0 = np.asarray(Z0, dtype=complex)
    Z1 = np.asarray(Z1, dtype=complex)
    if default is None:
        default = to_chart(Z0, Z1)[0]
    default = np.broadcast_to(np.asarray(default), Z0.shape)
    hw, h = grid.half_width, grid.h
    edge = hw * (1 + NODE_SNAP)
    on_node = []
    with np.errstate(divide="ignore", invalid="ignore"):
        for u in (Z1 / Z0, Z0 / Z1):
            tx, ty = (u.real + hw) / h, (u.imag + hw) / h
            ok = np.isfinite(u) & (np.abs(u.real) <= edge) & (np.abs(u.imag) <= edge)
            mis = np.maximum(np.abs(tx - np.round(tx)), np.abs(ty - np.round(ty)))
            on_node.append(ok & (mis < NODE_SNAP))
    own = np.where(default == 0, on_node[0], on_node[1])
    other = np.where(default == 0, on_node[1], on_node[0])
    return np.where(~own & other, 1 - default, default)



@dataclass
class GridField:
    """A real function on CP^1 sampled on both chart grids.

    ``values`` has shape ``(2, n+1, n+1)``; ``values[c]`` holds chart ``c``.
    ``+inf``, ``-inf`` and ``nan`` are allowed as sentinels.
    """

    values: np.ndarray
    grid: SphereGrid
    label: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (2,) + self.grid.shape:
            raise ConfigurationError(
                f"field shape {self.values.shape} does not match grid {(2,) + self.grid.shape}")

    @property
    def values_0(self) -> np.ndarray:
        return self.values[0]

    @property
    def values_1(self) -> np.ndarray:
        return self.values[1]

    @classmethod
    def constant(cls, grid: SphereGrid, c: float, label: str = "") -> "GridField":
        return cls(np.full((2,) + grid.shape, float(c)), grid, label)

    @classmethod
    def from_function(cls, grid: SphereGrid, fn: Callable, label: str = "") -> "GridField":
        """Sample ``fn(Z0, Z1)`` (normalized homogeneous arrays) on all nodes."""
        vals = np.stack([np.asarray(fn(*grid.homogeneous(c)), dtype=float) for c in (0, 1)])
        return cls(vals, grid, label)

    @classmethod
    def from_chart_function(cls, grid: SphereGrid, fn: Callable, label: str = "") -> "GridField":
        """Sample ``fn(chart, z)`` on all nodes."""
        vals = np.stack([np.asarray(fn(c, grid.z), dtype=float) * np.ones(grid.shape) for c in (0, 1)])
        return cls(vals, grid, label)

    def copy(self) -> "GridField":
        return GridField(self.values.copy(), self.grid, self.label)

    def __add__(self, other):
        other_vals = other.values if isinstance(other, GridField) else other
        return GridField(self.values + other_vals, self.grid, self.label)

    def __sub__(self, other):
        other_vals = other.values if isinstance(other, GridField) else other
        return GridField(self.values - other_vals, self.grid, self.label)

    def __mul__(self, c: float):
        return GridField(self.values * c, self.grid, self.label)

    __rmul__ = __mul__

    def interpolate(self, chart: int, u, order: int = 1) -> np.ndarray:
        if order == 1:
            return bilinear(self.values[chart], self.grid, u)
        return bicubic(self.values[chart], self.grid, u)

    def evaluate(self, Z0, Z1, prefer_chart=None, order: int = 1) -> np.ndarray:
        """Chart-aware evaluation at homogeneous points.

        By default each point is read from the chart where its coordinate
        has modulus <= 1.  With ``prefer_chart`` the given chart (scalar or
        per-point array) is used whenever the point lies inside its square.
        """
        chart, coord = to_chart(Z0, Z1)
        if prefer_chart is not None:
            pref = np.broadcast_to(np.asarray(prefer_chart), chart.shape)
            with np.errstate(divide="ignore", invalid="ignore"):
                alt = np.where(pref == 0, np.asarray(Z1) / np.asarray(Z0), np.asarray(Z0) / np.asarray(Z1))
            hw = self.grid.half_width * (1 + NODE_SNAP)
            inside = np.isfinite(alt) & (np.abs(alt.real) <= hw) & (np.abs(alt.imag) <= hw)
            chart = np.where(inside, pref, chart)
            coord = np.where(inside, alt, coord)
        out = np.empty(np.shape(coord))
        for c in (0, 1):
            m = chart == c
            if m.any():
                out[m] = self.interpolate(c, coord[m], order)
        return out

    def evaluate_point(self, point: ProjPoint) -> float:
        return float(self.evaluate(np.array([point.z0]), np.array([point.z1]))[0])

    def laplacian(self) -> np.ndarray:
        """``(2, n+1, n+1)`` five-point Laplacians in chart coordinates."""
        return np.stack([discrete_laplacian(self.values[c], self.grid.h) for c in (0, 1)])

    def sup_diff(self, other: "GridField", mask=None) -> float:
        d = np.abs(self.values - other.values)
        if mask is not None:
            d = d[mask]
        return float(np.nanmax(d)) if d.size else 0.0

    # -- CSV -------------------------------------------------------------
    def to_csv(self, path) -> None:
        """Write ``chart,ix,iy,re_z,im_z,value`` rows with a header."""
        write_field_csv(self, path)

    @classmethod
    def from_csv(cls, path, half_width: float | None = None) -> "GridField":
        return read_field_csv(path, half_width)


CSV_HEADER = ["chart", "ix", "iy", "re_z", "im_z", "value"]


def _token(v: float) -> str:
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "+inf" if v > 0 else "-inf"
    return repr(float(v))


def write_field_csv(field: GridField, path) -> None:
    g = field.grid
    x = g.x.tolist()
    n = g.n_cells + 1
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for c in (0, 1):
            vals = field.values[c].tolist()
            for ix in range(n):
                row = vals[ix]
                xr = repr(x[ix])
                for iy in range(n):
                    w.writerow((c, ix, iy, xr, repr(x[iy]), _token(row[iy])))


def read_field_csv(path, half_width: float | None = None) -> GridField:
    rows = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if [h.strip() for h in header] != CSV_HEADER:
            raise ConfigurationError(f"{path}: expected header {CSV_HEADER}, got {header}")
        for row in r:
            if row:
                rows.append(row)
    chart = np.array([int(t[0]) for t in rows])
    ix = np.array([int(t[1]) for t in rows])
    iy = np.array([int(t[2]) for t in rows])
    n = int(ix.max())
    if half_width is None:
        half_width = max(abs(float(t[3])) for t in rows)
    grid = SphereGrid(half_width=half_width, n_cells=n)
    vals = np.full((2,) + grid.shape, np.nan)
    vals[chart, ix, iy] = [float(t[5]) for t in rows]
    return GridField(vals, grid)


# ---------------------------------------------------------------------------
# seams
# ---------------------------------------------------------------------------

def _other_chart_values(field: GridField, chart: int) -> np.ndarray:
    """Values of the other chart interpolated at this chart's nodes (1/z)."""
    z = field.grid.z
    with np.errstate(divide="ignore", invalid="ignore"):
        u = 1.0 / z
    out = np.full(z.shape, np.nan)
    ok = np.isfinite(u)
    out[ok] = field.interpolate(1 - chart, u[ok])
    return out


def seam_discrepancy(field: GridField) -> float:
    """Max over overlap nodes of ``|own value - other chart at 1/z|``."""
    g = field.grid
    worst = 0.0
    for c in (0, 1):
        other = _other_chart_values(field, c)
        own = field.values[c]
        m = g.overlap & np.isfinite(own) & np.isfinite(other)
        if m.any():
            worst = max(worst, float(np.max(np.abs(own[m] - other[m]))))
    return worst


def sync_seam(field: GridField) -> tuple[GridField, float]:
    """Reconcile the overlap by a pointwise minimum with the other chart.

    Returns the new field and the seam discrepancy measured before the
    reconciliation (finite pairs only).
    """
    g = field.grid
    if not g.overlap.any():
        raise ConfigurationError("grid overlap annulus is empty")
    disc = seam_discrepancy(field)
    out = field.values.copy()
    for c in (0, 1):
        other = _other_chart_values(field, c)
        m = g.overlap & ~np.isnan(other)
        out[c][m] = np.fmin(field.values[c][m], other[m])
    return GridField(out, g, field.label), disc


def sphere_mass(grid: SphereGrid, density: np.ndarray) -> float:
    """Partition-of-unity weighted ``sum(density * h^2)`` over both charts."""
    total = 0.0
    for c in (0, 1):
        chi = grid.partition_of_unity(c)
        m = grid.interior & (chi > 0)
        total += float(np.sum(chi[m] * density[c][m])) * grid.h**2
    return total


__all__ = [
    "VALUE_CAP", "ProjPoint", "OmegaSpec", "SphereGrid", "GridField",
    "fs_potential", "omega_density", "chart_transition", "sync_seam",
    "seam_discrepancy", "normalize_homogeneous", "to_chart", "from_chart",
    "discrete_laplacian", "bilinear", "aligned_chart", "sphere_mass", "homogeneous_log_norm",
]
