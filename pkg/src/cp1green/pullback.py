"""Rational self-maps of CP^1: evaluation, preimages, pullback and
pushforward of grid functions, and the sandwich / image inequalities.

A map of degree d is a pair of homogeneous polynomials ``F = (F0, F1)``
(``F0`` from the denominator, ``F1`` from the numerator), stored as
coefficient arrays ``c[j]`` of ``Z0^(d-j) Z1^j``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .core import (aligned_chart, GridField, OmegaSpec, ProjPoint, SphereGrid,
                   normalize_homogeneous, to_chart)
from .envelope_relax import SolverOptions, solve_envelope
from .exceptions import ConfigurationError, RootFindingError
from .weights import CompactSet, Weight, mild_check

_RNG_SEED = 20240607


# ---------------------------------------------------------------------------
# homogeneous polynomial helpers
# ---------------------------------------------------------------------------

def hom_eval(c: np.ndarray, Z0, Z1) -> np.ndarray:
    """``sum_j c[j] Z0^(d-j) Z1^j`` with ``d = len(c) - 1``."""
    Z0 = np.asarray(Z0, dtype=complex)
    Z1 = np.asarray(Z1, dtype=complex)
    d = len(c) - 1
    out = np.zeros(np.broadcast(Z0, Z1).shape, dtype=complex)
    for j, cj in enumerate(c):
        if cj != 0:
            out = out + cj * Z0 ** (d - j) * Z1**j
    return out


def hom_d0(c: np.ndarray) -> np.ndarray:
    d = len(c) - 1
    return np.array([(d - j) * c[j] for j in range(d)], dtype=complex) if d else np.zeros(1, complex)


def hom_d1(c: np.ndarray) -> np.ndarray:
    d = len(c) - 1
    return np.array([j * c[j] for j in range(1, d + 1)], dtype=complex) if d else np.zeros(1, complex)


def _aberth(poly: np.ndarray, max_iter: int = 500) -> np.ndarray:
    """Roots of a batch of polynomials, ``poly`` shape ``(B, m+1)`` highest first."""
    B, m1 = poly.shape
    m = m1 - 1
    if m == 0:
        return np.zeros((B, 0), dtype=complex)
    c = poly / poly[:, :1]
    if m == 1:
        return -c[:, 1:2]
    # Fujiwara bound for the starting circle, randomly rotated (fixed seed)
    k = np.arange(1, m + 1)
    bound = 2 * np.max(np.abs(c[:, 1:]) ** (1.0 / k), axis=1)
    rng = np.random.default_rng(_RNG_SEED)
    ang = 2 * np.pi * np.arange(m) / m + rng.uniform(0, 2 * np.pi) + 0.3 / m
    z = 0.5 * np.maximum(bound, 1e-3)[:, None] * np.exp(1j * ang)[None, :]
    z = z * (1 + 0.01 * rng.standard_normal((B, m)))
    dc = c[:, :-1] * np.arange(m, 0, -1)[None, :]
    active = np.ones(B, dtype=bool)
    eye = np.eye(m, dtype=bool)
    for it in range(max_iter):
        za = z[active]
        p = np.zeros_like(za)
        for j in range(m1):
            p = p * za + c[active, j:j + 1]
        dp = np.zeros_like(za)
        for j in range(m):
            dp = dp * za + dc[active, j:j + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = p / dp
            diff = za[:, :, None] - za[:, None, :]
            diff[:, eye] = np.inf
            s = np.sum(1.0 / diff, axis=2)
            w = ratio / (1 - ratio * s)
        w = np.where(np.isfinite(w), w, 1e-8 * (1 + np.abs(za)))
        w = np.where(p == 0, 0, w)
        za = za - w
        z[active] = za
        done = np.all(np.abs(w) <= 1e-15 * (1 + np.abs(za)), axis=1)
        idx = np.flatnonzero(active)
        active[idx[done]] = False
        if not active.any():
            break
    # backward-error check
    p = np.zeros_like(z)
    scale = np.zeros(z.shape)
    for j in range(m1):
        p = p * z + c[:, j:j + 1]
        scale = scale * np.abs(z) + np.abs(c[:, j:j + 1])
    res = np.abs(p) / scale
    if np.max(res) > 1e-10:
        b = int(np.argmax(np.max(res, axis=1)))
        raise RootFindingError(
            f"Aberth iteration did not converge in {max_iter} iterations: relative residual "
            f"{np.max(res):.3g} for coefficients {poly[b]}")
    return z


def homogeneous_roots(G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Roots of homogeneous forms ``G`` (shape ``(B, d+1)``, ascending ``Z1`` power).

    Returns normalized homogeneous arrays ``(R0, R1)`` of shape ``(B, d)``
    (multiplicities repeated).
    """
    G = np.atleast_2d(np.asarray(G, dtype=complex))
    B, d1 = G.shape
    d = d1 - 1
    R0 = np.empty((B, d), dtype=complex)
    R1 = np.empty((B, d), dtype=complex)
    nz = G != 0
    if not nz.any(axis=1).all():
        raise ConfigurationError("zero form has no finite root set")
    lo = np.argmax(nz, axis=1)                     # Z1^lo divides: root [1:0]
    hi = d - np.argmax(nz[:, ::-1], axis=1)        # Z0^(d-hi) divides: root [0:1]
    for a, b in set(zip(lo.tolist(), hi.tolist())):
        rows = np.flatnonzero((lo == a) & (hi == b))
        R0[rows, :a], R1[rows, :a] = 1.0, 0.0
        R0[rows, b:], R1[rows, b:] = 0.0, 1.0
        if b == a:
            continue
        core = G[rows, a:b + 1]                    # ascending in z = Z1/Z0
        use0 = np.abs(core[:, -1]) >= np.abs(core[:, 0])
        for flag in (True, False):
            sel = rows[use0 == flag]
            if sel.size == 0:
                continue
            cs = core[use0 == flag]
            if flag:
                r = _aberth(cs[:, ::-1])           # roots z
                N0, N1 = normalize_homogeneous(np.ones_like(r), r)
            else:
                r = _aberth(cs)                    # roots w = 1/z
                N0, N1 = normalize_homogeneous(r, np.ones_like(r))
            R0[sel, a:b], R1[sel, a:b] = N0, N1
    return R0, R1


def _sylvester_resultant(f: np.ndarray, g: np.ndarray) -> float:
    """Resultant of two forms of formal degree d (unit-normalized coefficients)."""
    f = np.asarray(f, dtype=complex)[::-1] / np.linalg.norm(f)
    g = np.asarray(g, dtype=complex)[::-1] / np.linalg.norm(g)
    d = f.size - 1
    S = np.zeros((2 * d, 2 * d), dtype=complex)
    for i in range(d):
        S[i, i:i + d + 1] = f
        S[d + i, i:i + d + 1] = g
    return float(abs(np.linalg.det(S)))


def _compose_forms(c: np.ndarray, G0: np.ndarray, G1: np.ndarray) -> np.ndarray:
    """Coefficients of ``sum_j c_j G0^(d-j) G1^j`` for forms G0, G1 (ascending)."""
    d = len(c) - 1
    e = len(G0) - 1
    out = np.zeros(d * e + 1, dtype=complex)
    for j, cj in enumerate(c):
        term = np.array([1.0 + 0j])
        for _ in range(d - j):
            term = np.convolve(term, G0)
        for _ in range(j):
            term = np.convolve(term, G1)
        out += cj * term
    return out


# ---------------------------------------------------------------------------
# rational maps
# ---------------------------------------------------------------------------

def _parse_coeffs(seq) -> np.ndarray:
    out = []
    for c in seq:
        if isinstance(c, (list, tuple)):
            if len(c) != 2:
                raise ConfigurationError(f"complex coefficient must be [re, im], got {c!r}")
            out.append(complex(float(c[0]), float(c[1])))
        else:
            out.append(complex(c))
    return np.array(out, dtype=complex)


@dataclass
class RationalMap:
    """``f = P/Q`` in chart 0, held as the forms ``F0`` (from Q) and ``F1`` (from P)."""

    F0: np.ndarray
    F1: np.ndarray
    label: str = "f"
    resultant: float = field(init=False)

    def __post_init__(self):
        self.F0 = np.asarray(self.F0, dtype=complex)
        self.F1 = np.asarray(self.F1, dtype=complex)
        if self.F0.size != self.F1.size or self.F0.size < 2:
            raise ConfigurationError("forms must share a degree >= 1")
        self.resultant = _sylvester_resultant(self.F0, self.F1)
        if self.resultant <= 1e-10:
            raise ConfigurationError(
                f"map {self.label!r} has a common factor or base point (|resultant| = {self.resultant:.3g})")

    @classmethod
    def from_polys(cls, P, Q, label: str = "f") -> "RationalMap":
        P = np.trim_zeros(np.asarray(P, dtype=complex), "b")
        Q = np.trim_zeros(np.asarray(Q, dtype=complex), "b")
        if P.size == 0 or Q.size == 0:
            raise ConfigurationError("P and Q must be nonzero polynomials")
        d = max(P.size, Q.size) - 1
        if d < 1:
            raise ConfigurationError("map must have degree >= 1")
        pad = lambda a: np.concatenate([a, np.zeros(d + 1 - a.size, dtype=complex)])
        return cls(pad(Q), pad(P), label)

    @classmethod
    def from_config(cls, spec: dict, label: str = "f") -> "RationalMap":
        extra = set(spec) - {"P", "Q"}
        if extra:
            raise ConfigurationError(f"unknown map keys: {sorted(extra)}")
        if "P" not in spec or "Q" not in spec:
            raise ConfigurationError("map needs both 'P' and 'Q' coefficient lists")
        return cls.from_polys(_parse_coeffs(spec["P"]), _parse_coeffs(spec["Q"]), label)

    @classmethod
    def identity(cls) -> "RationalMap":
        return cls.from_polys([0, 1], [1], "identity")

    @classmethod
    def power(cls, k: int) -> "RationalMap":
        return cls.from_polys([0] * k + [1], [1], f"z^{k}")

    @classmethod
    def mobius_rotation(cls, theta: float) -> "RationalMap":
        c, s = math.cos(theta), math.sin(theta)
        return cls.from_polys([-s, c], [c, s], f"rotation({theta:g})")

    @property
    def degree(self) -> int:
        return self.F0.size - 1

    def forms(self, Z0, Z1):
        return hom_eval(self.F0, Z0, Z1), hom_eval(self.F1, Z0, Z1)

    def __call__(self, Z0, Z1):
        """Normalized homogeneous image coordinates."""
        return normalize_homogeneous(*self.forms(Z0, Z1))

    def jacobian(self, Z0, Z1) -> np.ndarray:
        a = hom_eval(hom_d0(self.F0), Z0, Z1) * hom_eval(hom_d1(self.F1), Z0, Z1)
        b = hom_eval(hom_d1(self.F0), Z0, Z1) * hom_eval(hom_d0(self.F1), Z0, Z1)
        return a - b

    def jacobian_form(self) -> np.ndarray:
        return (np.convolve(hom_d0(self.F0), hom_d1(self.F1))
                - np.convolve(hom_d1(self.F0), hom_d0(self.F1)))

    def compose(self, g: "RationalMap") -> "RationalMap":
        """``self o g``."""
        return RationalMap(_compose_forms(self.F0, g.F0, g.F1),
                           _compose_forms(self.F1, g.F0, g.F1), f"{self.label}o{g.label}")

    def density_ratio(self, Z0, Z1) -> np.ndarray:
        """``(f^* omega_FS) / omega_FS = (|J| ||Z||^2 / (d ||F||^2))^2``."""
        F0, F1 = self.forms(Z0, Z1)
        nz = np.abs(Z0) ** 2 + np.abs(Z1) ** 2
        nf = np.abs(F0) ** 2 + np.abs(F1) ** 2
        return (np.abs(self.jacobian(Z0, Z1)) * nz / (self.degree * nf)) ** 2

    def chart_image(self, chart: int, z, prefer_same: bool = True, half_width: float = np.inf):
        """Image chart, image coordinate and ``|du/dz|`` for points of ``chart``.

        With ``prefer_same`` the image is expressed in the input chart when
        its coordinate lies in the square of half-width ``half_width``;
        otherwise in the chart where it has modulus <= 1.
        """
        z = np.asarray(z, dtype=complex)
        Z0 = np.ones_like(z) if chart == 0 else z
        Z1 = z if chart == 0 else np.ones_like(z)
        F0, F1 = self.forms(Z0, Z1)
        target = (np.abs(F1) > np.abs(F0)).astype(np.int8)
        if prefer_same:
            with np.errstate(divide="ignore", invalid="ignore"):
                same = F1 / F0 if chart == 0 else F0 / F1
            inside = np.isfinite(same) & (np.abs(same.real) <= half_width) & (np.abs(same.imag) <= half_width)
            target = np.where(inside, chart, target)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.where(target == 0, F1 / F0, F0 / F1)
            Fc = np.where(target == 0, F0, F1)
            deriv = np.abs(self.jacobian(Z0, Z1)) / (self.degree * np.abs(Fc) ** 2)
        return target, u, deriv


def eval_map(f: RationalMap, x: ProjPoint) -> ProjPoint:
    F0, F1 = f.forms(x.z0, x.z1)
    return ProjPoint(complex(F0), complex(F1))


def preimage_array(f: RationalMap, Y0, Y1) -> tuple[np.ndarray, np.ndarray]:
    """Preimages of many points; arrays of shape ``(B, d)``."""
    Y0 = np.atleast_1d(np.asarray(Y0, dtype=complex)).ravel()
    Y1 = np.atleast_1d(np.asarray(Y1, dtype=complex)).ravel()
    G = Y0[:, None] * f.F1[None, :] - Y1[:, None] * f.F0[None, :]
    return homogeneous_roots(G)


def preimages(f: RationalMap, y: ProjPoint) -> list[ProjPoint]:
    """All ``d`` preimages, repeated by multiplicity."""
    R0, R1 = preimage_array(f, y.z0, y.z1)
    pts = [ProjPoint(complex(a), complex(b)) for a, b in zip(R0[0], R1[0])]
    return _snap_clusters(pts)


def _snap_clusters(pts: list[ProjPoint], tol: float = 1e-6) -> list[ProjPoint]:
    """Replace each cluster of nearby roots by its first member."""
    out: list[ProjPoint] = []
    reps: list[ProjPoint] = []
    for p in pts:
        for r in reps:
            if r.distance(p) <= tol:
                out.append(r)
                break
        else:
            reps.append(p)
            out.append(p)
    return out


def preimage_multiplicities(f: RationalMap, y: ProjPoint, tol: float = 1e-6) -> list[tuple[ProjPoint, int]]:
    pts = preimages(f, y)
    out: list[tuple[ProjPoint, int]] = []
    for p in pts:
        for i, (r, m) in enumerate(out):
            if r.distance(p) <= tol:
                out[i] = (r, m + 1)
                break
        else:
            out.append((p, 1))
    return out


def critical_values(f: RationalMap) -> tuple[np.ndarray, np.ndarray]:
    J = f.jacobian_form()
    if J.size == 1:
        return np.zeros(0, complex), np.zeros(0, complex)
    C0, C1 = homogeneous_roots(J[None, :])
    return f(C0[0], C1[0])


# ---------------------------------------------------------------------------
# pullback / pushforward
# ---------------------------------------------------------------------------

def _as_evaluator(u):
    """``(Z0, Z1, chart) -> values`` for a GridField or an analytic callable."""
    if isinstance(u, GridField):
        return lambda Z0, Z1, chart: u.evaluate(Z0, Z1, prefer_chart=aligned_chart(u.grid, Z0, Z1, chart))
    return lambda Z0, Z1, chart: np.asarray(u(Z0, Z1), dtype=float)


def pullback_u(f: RationalMap, u, grid: SphereGrid | None = None) -> GridField:
    """``(f^* u)(x) = u(f(x))``.

    Images are read where they fall on a node, otherwise in the node's own
    chart when they lie inside its square.
    """
    grid = grid or u.grid
    ev = _as_evaluator(u)
    vals = np.empty((2,) + grid.shape)
    for c in (0, 1):
        W0, W1 = f(*grid.homogeneous(c))
        vals[c] = ev(W0, W1, c)
    return GridField(vals, grid, f"{f.label}^*u")


def pushforward_u(f: RationalMap, u, grid: SphereGrid | None = None) -> GridField:
    """``(f_* u)(x) = max`` of ``u`` over the preimages of ``x``."""
    grid = grid or u.grid
    ev = _as_evaluator(u)
    vals = np.empty((2,) + grid.shape)
    for c in (0, 1):
        Y0, Y1 = grid.homogeneous(c)
        R0, R1 = preimage_array(f, Y0.ravel(), Y1.ravel())
        v = ev(R0, R1, np.full(R0.shape, c))
        vals[c] = np.max(v, axis=1).reshape(grid.shape)
    return GridField(vals, grid, f"{f.label}_*u")


# ---------------------------------------------------------------------------
# sets and forms transported by f
# ---------------------------------------------------------------------------

def preimage_set(f: RationalMap, K: CompactSet, half_width: float = 1.25) -> CompactSet:
    """``f^{-1}(K)`` with the first-order distance ``dist_K(f(x)) / |f'(x)|``."""
    def dist(chart, z):
        target, u, deriv = f.chart_image(chart, z, True, half_width)
        d = np.empty(np.shape(z))
        for c in (0, 1):
            m = target == c
            if m.any():
                d[m] = K.chart_distance(c, u[m])
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(d == 0, 0.0, d / deriv)
        return np.where(np.isnan(out), np.inf, out)

    def sampler(m):
        y = K.sample(max(1, m // f.degree))
        R0, R1 = preimage_array(f, np.ones_like(y), y)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (R1 / R0).ravel()
        return z[np.isfinite(z)][:m]
    return CompactSet(dist, f"{f.label}^-1({K.label})", sampler if K.sampler else None)


def image_set(f: RationalMap, K: CompactSet, grid: SphereGrid | None = None) -> CompactSet:
    """``f(K)`` with distance ``min over preimages y of dist_K(y) |f'(y)|``.

    Each preimage is measured in the chart where its coordinate has modulus
    <= 1 (or, given ``grid``, where it is a node) and the derivative is taken
    into the chart of the query point.
    The first-order estimate is only trusted near the set, which is all
    rasterization needs.
    """
    def dist(chart, z):
        z = np.asarray(z, dtype=complex)
        Y0 = np.ones_like(z) if chart == 0 else z
        Y1 = z if chart == 0 else np.ones_like(z)
        R0, R1 = preimage_array(f, Y0.ravel(), Y1.ravel())
        ychart, coord = to_chart(R0, R1)
        if grid is not None:
            ychart = aligned_chart(grid, R0, R1, ychart)
            with np.errstate(divide="ignore", invalid="ignore"):
                coord = np.where(ychart == 0, R1 / R0, R0 / R1)
        best = np.full(R0.shape, np.inf)
        for c in (0, 1):
            m = ychart == c
            if m.any():
                best[m] = K.chart_distance(c, coord[m]) * _deriv_into(f, c, coord[m], chart)
        best = np.where(np.isnan(best), np.inf, best)
        return np.min(best, axis=1).reshape(z.shape)

    def sampler(m):
        y = K.sample(m)
        W0, W1 = f(np.ones_like(y), y)
        keep = np.abs(W0) > 0
        return W1[keep] / W0[keep]
    return CompactSet(dist, f"{f.label}({K.label})", sampler if K.sampler else None)


def _deriv_into(f: RationalMap, chart: int, z, target: int) -> np.ndarray:
    """``|du/dz|`` from ``chart`` to the image coordinate in ``target``."""
    z = np.asarray(z, dtype=complex)
    Z0 = np.ones_like(z) if chart == 0 else z
    Z1 = z if chart == 0 else np.ones_like(z)
    F0, F1 = f.forms(Z0, Z1)
    Fc = F0 if target == 0 else F1
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.abs(f.jacobian(Z0, Z1)) / (f.degree * np.abs(Fc) ** 2)


def pullback_omega(f: RationalMap, omega: OmegaSpec | None = None) -> OmegaSpec:
    """``f^* omega`` with chart density ``rho(f(z)) |f'(z)|^2``.

    For the Fubini-Study form the potential is ``log ||F(1, z)||`` in chart 0
    (and ``log ||F(w, 1)||`` in chart 1), smooth through the poles of f; for
    other forms it is ``phi o f`` read in the image chart.
    """
    omega = omega or OmegaSpec.fubini_study()
    fs = omega.label == "fubini_study"

    def density(chart):
        def rho(z):
            target, u, deriv = f.chart_image(chart, z, prefer_same=False)
            out = np.empty(np.shape(z))
            for c in (0, 1):
                m = target == c
                if np.any(m):
                    out[m] = omega.density(c, u[m]) * deriv[m] ** 2
            return out
        return rho

    def potential(chart):
        def phi(z):
            z = np.asarray(z, dtype=complex)
            Z0 = np.ones_like(z) if chart == 0 else z
            Z1 = z if chart == 0 else np.ones_like(z)
            F0, F1 = f.forms(Z0, Z1)
            if fs:
                return 0.5 * np.log(np.abs(F0) ** 2 + np.abs(F1) ** 2)
            target, u, _ = f.chart_image(chart, z, prefer_same=False)
            out = np.empty(np.shape(z))
            for c in (0, 1):
                m = target == c
                if np.any(m):
                    out[m] = omega.potential(c, u[m])
            return out
        return phi

    return OmegaSpec(potential(0), potential(1), density(0), density(1),
                     omega.degree * f.degree, f"{f.label}^*{omega.label}")


# ---------------------------------------------------------------------------
# constants and inequalities
# ---------------------------------------------------------------------------

@dataclass
class SandwichParams:
    alpha: float
    beta: float
    provenance: str = "user"

    def __post_init__(self):
        if not (self.alpha <= self.beta):
            raise ConfigurationError(f"need alpha <= beta, got {self.alpha} > {self.beta}")
        if self.alpha <= 0:
            raise ConfigurationError("alpha must be positive")

    @property
    def hypotheses_hold(self) -> bool:
        """Sandwich hypothesis ``1 < alpha <= beta`` (identity: ``alpha = beta = 1``)."""
        return 1 < self.alpha <= self.beta


def estimate_beta(f: RationalMap, omega: OmegaSpec | None = None, grid: SphereGrid | None = None) -> float:
    """Max over all grid nodes of ``rho(f(z)) |f'(z)|^2 / rho(z)``."""
    omega = omega or OmegaSpec.fubini_study()
    grid = grid or SphereGrid()
    if omega.label == "fubini_study":
        return float(max(np.max(f.density_ratio(*grid.homogeneous(c))) for c in (0, 1)))
    pulled = pullback_omega(f, omega)
    best = 0.0
    for c in (0, 1):
        r = pulled.density(c, grid.z) / omega.density(c, grid.z)
        best = max(best, float(np.nanmax(r)))
    return best


POLE_COLLAR = 10.0


def critical_value_mask(f: RationalMap, grid: SphereGrid, collar: float = 3.0) -> np.ndarray:
    """Nodes within ``collar`` cells of a critical value, per chart."""
    V0, V1 = critical_values(f)
    out = np.zeros((2,) + grid.shape, dtype=bool)
    for c in (0, 1):
        seed = np.zeros(grid.shape, dtype=bool)
        for a, b in zip(V0, V1):
            with np.errstate(divide="ignore", invalid="ignore"):
                u = b / a if c == 0 else a / b
            if np.isfinite(u) and abs(u.real) <= grid.half_width + collar * grid.h \
                    and abs(u.imag) <= grid.half_width + collar * grid.h:
                d = np.abs(grid.z - u) / grid.h
                seed |= d <= collar
        out[c] = seed
    return out


def _pushforward_residual(f, u, grid, omega, pole_collar=POLE_COLLAR):
    g = pushforward_u(f, u, grid)
    lap = g.laplacian()
    rho = np.stack([omega.density(c, grid.z) * np.ones(grid.shape) for c in (0, 1)])
    excl = critical_value_mask(f, grid)
    valid = np.zeros_like(excl)
    for c in (0, 1):
        fin = np.isfinite(g.values[c])
        if not fin.all():
            # the five-point stencil of log r is off by about 1/(k^4 h^2) at k cells
            excl[c] |= ndimage.distance_transform_edt(fin) <= pole_collar
        stencil = np.zeros(grid.shape, dtype=bool)
        stencil[1:-1, 1:-1] = (fin[1:-1, 1:-1] & fin[2:, 1:-1] & fin[:-2, 1:-1]
                               & fin[1:-1, 2:] & fin[1:-1, :-2])
        valid[c] = stencil & ~excl[c]
    return lap, rho, valid, excl


def check_alpha(f: RationalMap, alpha: float, test_functions: Sequence, omega: OmegaSpec | None = None,
                tol: float = 1e-6, grid: SphereGrid | None = None) -> dict:
    """Test ``alpha f_* u`` for omega-subharmonicity on a battery of functions.

    Test functions are grid fields or analytic callables ``u(Z0, Z1)``;
    analytic ones are preferred because interpolation noise enters the
    Laplacian at order ``1/h^2``.  Nodes within three cells of a critical
    value and within ``POLE_COLLAR`` cells of a non-finite value of
    ``f_* u`` are excluded.
    """
    omega = omega or OmegaSpec.fubini_study()
    worst = math.inf
    witness = None
    excluded = 0
    for k, u in enumerate(test_functions):
        g = grid or u.grid
        lap, rho, valid, excl = _pushforward_residual(f, u, g, omega)
        r = alpha * lap + rho
        excluded = int(np.count_nonzero(excl))
        r = np.where(valid, r, np.inf)
        i = int(np.argmin(r))
        if r.flat[i] < worst:
            worst = float(r.flat[i])
            c, ix, iy = np.unravel_index(i, r.shape)
            witness = {"test_function": k, "chart": int(c), "ix": int(ix), "iy": int(iy),
                       "z": [float(g.z[ix, iy].real), float(g.z[ix, iy].imag)]}
    return {"worst_residual": worst, "violation": bool(worst < -tol),
            "witness": witness, "excluded_nodes": excluded}


def estimate_alpha(f: RationalMap, test_functions: Sequence, omega: OmegaSpec | None = None,
                   grid: SphereGrid | None = None) -> dict:
    """Largest ``alpha`` with ``alpha Lap_h f_* u + rho >= 0`` on the battery.

    ``inf`` when no test function has a negative discrete Laplacian after
    pushforward.  ``degenerate`` flags the case ``alpha <= 1``, where the
    sandwich hypothesis ``alpha > 1`` fails on this battery.
    """
    omega = omega or OmegaSpec.fubini_study()
    best = math.inf
    for u in test_functions:
        g = grid or u.grid
        lap, rho, valid, _ = _pushforward_residual(f, u, g, omega)
        neg = valid & (lap < 0)
        if neg.any():
            best = min(best, float(np.min(rho[neg] / -lap[neg])))
    return {"alpha": best, "degenerate": bool(best <= 1.0)}


def _pullback_weight(f: RationalMap, Q: Weight, scale: float) -> Weight:
    return Q.compose(f, f.label).scale(1.0 / scale)


def verify_sandwich(f: RationalMap, K: CompactSet, Q: Weight, params: SandwichParams,
                    grid: SphereGrid, omega: OmegaSpec | None = None,
                    opts: SolverOptions | None = None) -> dict:
    """Defects of ``alpha V' <= V o f <= beta V''`` with ``V', V''`` on ``f^{-1}(K)``."""
    omega = omega or OmegaSpec.fubini_study()
    base = solve_envelope(K, Q, omega, grid, opts)
    Vf = pullback_u(f, base.V)
    pre = preimage_set(f, K, grid.half_width)
    if not pre.grid_mask(grid).any():
        raise ConfigurationError(f"preimage {pre.label!r} has an empty grid mask")
    wq_b = _pullback_weight(f, Q, params.beta)
    up = solve_envelope(pre, wq_b, omega, grid, opts)
    upper = float(np.max(Vf.values - params.beta * up.V.values))
    if params.alpha == params.beta:
        low = up
    else:
        low = solve_envelope(pre, _pullback_weight(f, Q, params.alpha), omega, grid, opts)
    lower = float(np.max(params.alpha * low.V.values - Vf.values))
    return {"upper_defect": upper, "lower_defect": lower, "alpha": params.alpha, "beta": params.beta,
            "provenance": params.provenance, "hypotheses_hold": params.hypotheses_hold,
            "mild_f*Q/beta": mild_check(wq_b, omega, grid).verdict,
            "solver_tol": (opts or SolverOptions()).tol}


def verify_image_inequality(f: RationalMap, K: CompactSet, Q: Weight, grid: SphereGrid,
                            omega: OmegaSpec | None = None, opts: SolverOptions | None = None) -> dict:
    """Defect of ``V_{f(K),omega,Q} o f <= V_{K, f^*omega, Q o f}``."""
    omega = omega or OmegaSpec.fubini_study()
    fK = image_set(f, K, grid)
    lhs_env = solve_envelope(fK, Q, omega, grid, opts)
    lhs = pullback_u(f, lhs_env.V)
    pulled = pullback_omega(f, omega)
    dens_ok = np.stack([np.isfinite(pulled.density(c, grid.z)) for c in (0, 1)])
    rhs = solve_envelope(K, Q.compose(f, f.label), pulled, grid, opts)
    d = lhs.values - rhs.V.values
    d = np.where(dens_ok, d, -np.inf)
    return {"defect": float(np.max(d)), "excluded_nodes": int(np.count_nonzero(~dens_ok)),
            "solver_tol": (opts or SolverOptions()).tol,
            "interpolation_error": float(max(lhs_env.seam_discrepancy, rhs.seam_discrepancy))}


__all__ = [
    "RationalMap", "SandwichParams", "eval_map", "preimages", "preimage_array",
    "preimage_multiplicities", "pullback_u", "pushforward_u", "estimate_beta",
    "check_alpha", "estimate_alpha", "verify_sandwich", "verify_image_inequality",
    "preimage_set", "image_set", "pullback_omega", "critical_values",
    "homogeneous_roots",
]
