"""Polynomial (section) envelopes: weighted Leja nodes, Lagrange families,
an LP oracle for the discrete extremal function, and the lift to the dual
bundle.

A degree-n section is a homogeneous polynomial ``p(Z0, Z1)``; its pointwise
norm is ``|p(Z)| / ||Z||^n`` and the weighted constraint on K reads
``|p(zeta)| <= M(zeta) = exp(n (Q + phi)(zeta))`` for the chart-0
representative ``(1, zeta)``.  Log-norms at evaluation points are formed
homogeneously, so evaluation works in either chart and at infinity.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from .core import (GridField, OmegaSpec, ProjPoint, SphereGrid,
                   chart_transition, homogeneous_log_norm)
from .envelope_relax import EnvelopeResult
from .exceptions import ConfigurationError, DomainError, SolverError
from .weights import CompactSet, Weight

_TINY = 1e-300


@dataclass
class Polynomial:
    """``p(z) = sum_j coeffs[j] z^j``, read as the section ``sum_j c_j Z0^(n-j) Z1^j``."""

    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.atleast_1d(np.asarray(self.coeffs, dtype=complex))

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def homogeneous(self, Z0, Z1) -> np.ndarray:
        Z0 = np.asarray(Z0, dtype=complex)
        Z1 = np.asarray(Z1, dtype=complex)
        n = self.degree
        out = np.zeros(np.broadcast(Z0, Z1).shape, dtype=complex)
        for j, c in enumerate(self.coeffs):
            out = out + c * Z0 ** (n - j) * Z1**j
        return out

    def chart(self, chart: int, u) -> np.ndarray:
        """The chart polynomial: ``p(z)`` in chart 0, ``w^n p(1/w)`` in chart 1."""
        u = np.asarray(u, dtype=complex)
        return np.polyval(self.coeffs[::-1] if chart == 0 else self.coeffs, u)

    def log_norm(self, Z0, Z1) -> np.ndarray:
        """``log|p(Z)| - n log||Z||`` (independent of the representative)."""
        with np.errstate(divide="ignore"):
            return np.log(np.abs(self.homogeneous(Z0, Z1))) - self.degree * homogeneous_log_norm(Z0, Z1)


def _as_samples(samples) -> np.ndarray:
    z = np.asarray(samples, dtype=complex).ravel()
    if not np.all(np.isfinite(z)):
        raise DomainError("K samples must be finite chart-0 coordinates")
    return z


def _weights_at(weight_fn, z: np.ndarray) -> np.ndarray:
    w = weight_fn(z) if callable(weight_fn) else weight_fn
    w = np.broadcast_to(np.asarray(w, dtype=float), z.shape)
    if not np.all(np.isfinite(w)):
        raise ConfigurationError("weight (Q + phi) must be finite on the K sample")
    return w


def leja_nodes(samples, weight_fn, count: int) -> np.ndarray:
    """Greedy weighted Leja sequence drawn from chart-0 ``samples``.

    ``weight_fn`` gives ``(Q + phi)`` at the samples (callable or array).
    The first node maximizes ``|z|``; node ``k`` maximizes
    ``sum_{j<k} log|z - zeta_j| - k (Q + phi)(z)``.  Ties go to the lowest
    sample index.  Returns indices into ``samples``.
    """
    z = _as_samples(samples)
    if count < 1:
        raise ConfigurationError("count must be >= 1")
    distinct = np.unique(np.round(z, 12)).size
    if distinct < count:
        raise ConfigurationError(f"only {distinct} distinct samples for {count} nodes")
    w = _weights_at(weight_fn, z)
    r = np.abs(z)
    chosen = [int(np.flatnonzero(r >= r.max() - 1e-12)[0])]
    acc = np.zeros(z.size)
    for k in range(1, count):
        with np.errstate(divide="ignore"):
            acc += np.log(np.abs(z - z[chosen[-1]]))
        score = acc - k * w
        score[chosen] = -np.inf
        best = np.max(score)
        if not np.isfinite(best):
            raise SolverError("Leja selection ran out of admissible samples")
        tie = 1e-12 * max(1.0, abs(best))
        chosen.append(int(np.flatnonzero(score >= best - tie)[0]))
    return np.array(chosen)


def _log_det(X0, X1, nodes):
    """Complex ``log det(X, (1, zeta_k))``, shape ``(len(X), len(nodes))``."""
    d = X0[:, None] * nodes[None, :] - X1[:, None]
    return np.log(np.where(d == 0, _TINY, d))


@dataclass
class SectionEnvelope:
    """Degree-n Lagrange family at weighted Leja nodes.

    ``log_M`` holds ``n (Q + phi)`` at the nodes and ``normalizers`` the
    factors ``max(1, sup_K |p_j| / M)`` of the basis ``p_j = M_j l_j``.
    """

    n: int
    nodes: np.ndarray
    log_M: np.ndarray
    normalizers: np.ndarray
    K_sample: np.ndarray
    sample_log_M: np.ndarray
    label: str = ""

    def __post_init__(self):
        k = self.nodes.size
        diff = self.nodes[:, None] - self.nodes[None, :]
        np.fill_diagonal(diff, 1.0)
        if np.min(np.abs(diff)) < 1e-14:
            raise SolverError("degenerate Leja nodes; use a smaller degree or a denser sample")
        # log prod_{k != j} det(zeta_j, zeta_k) with representatives (1, zeta)
        self._log_den = np.sum(np.log(diff), axis=1)
        if not np.all(np.isfinite(self._log_den)) or k != self.n + 1:
            raise SolverError("Lagrange denominators overflowed; use a smaller degree")
        self._B = None

    # -- Lagrange data ---------------------------------------------------
    def log_lagrange(self, X0, X1) -> np.ndarray:
        """Complex ``log l_j(X)`` (homogeneous degree n), shape ``(len(X), n+1)``."""
        L = _log_det(np.asarray(X0, dtype=complex).ravel(), np.asarray(X1, dtype=complex).ravel(),
                     self.nodes)
        total = L.sum(axis=1, keepdims=True)
        return total - L - self._log_den[None, :]

    def _sample_matrix(self) -> np.ndarray:
        """``l_j(zeta) / M(zeta)`` on the K sample, shape ``(m, n+1)``."""
        if self._B is None:
            s = self.K_sample
            logl = self.log_lagrange(np.ones_like(s), s)
            self._B = np.exp(logl - self.sample_log_M[:, None])
        return self._B

    # -- evaluation ------------------------------------------------------
    def basis_log_norms(self, Z0, Z1) -> np.ndarray:
        """``log(|p~_j(Z)| / ||Z||^n)`` for every basis element."""
        Z0 = np.asarray(Z0, dtype=complex).ravel()
        Z1 = np.asarray(Z1, dtype=complex).ravel()
        a = self.log_lagrange(Z0, Z1).real - self.n * homogeneous_log_norm(Z0, Z1)[:, None]
        return a + self.log_M[None, :] - np.log(self.normalizers)[None, :]

    def value(self, Z0, Z1, adapted: bool = True, chunk: int = 2048) -> np.ndarray:
        """``(1/n) log`` of the best certified section norm at each point.

        Takes the maximum over the renormalized basis and, with ``adapted``,
        over the interpolant ``P_x = sum_j M_j conj(l_j(x))/|l_j(x)| l_j``
        renormalized by its sup over the K sample, which puts all node
        allowances in phase at ``x``.
        """
        Z0 = np.asarray(Z0, dtype=complex)
        shape = Z0.shape
        Z0 = Z0.ravel()
        Z1 = np.asarray(Z1, dtype=complex).ravel()
        out = np.empty(Z0.size)
        B = self._sample_matrix() if adapted else None
        shift = float(np.max(self.log_M))
        for s in range(0, Z0.size, chunk):
            X0, X1 = Z0[s:s + chunk], Z1[s:s + chunk]
            logl = self.log_lagrange(X0, X1)
            a = logl.real - self.n * homogeneous_log_norm(X0, X1)[:, None]
            best = np.max(a + self.log_M - np.log(self.normalizers), axis=1)
            if adapted:
                C = np.exp(self.log_M[:, None] - shift - 1j * logl.imag.T)
                sup = np.max(np.abs(B @ C), axis=0) * math.exp(shift)
                peak = logsumexp(a + self.log_M, axis=1)
                best = np.maximum(best, peak - np.log(np.maximum(sup, 1.0)))
            out[s:s + chunk] = best / self.n
        return out.reshape(shape)

    def value_at(self, point: ProjPoint) -> float:
        return float(self.value(np.array([point.z0]), np.array([point.z1]))[0])

    def on_grid(self, grid: SphereGrid, stride: int = 1) -> GridField:
        """Values on the grid (NaN away from the ``stride`` subgrid)."""
        vals = np.full((2,) + grid.shape, np.nan)
        sel = np.zeros(grid.shape, dtype=bool)
        sel[::stride, ::stride] = True
        for c in (0, 1):
            Z0, Z1 = grid.homogeneous(c)
            vals[c][sel] = self.value(Z0[sel], Z1[sel])
        return GridField(vals, grid, f"value_{self.n}")

    def max_constraint(self) -> float:
        """Largest ``|p~_j| / M`` over the K sample (<= 1 by construction)."""
        return float(np.max(np.abs(self._sample_matrix()) * np.exp(self.log_M)[None, :]
                            / self.normalizers[None, :]))

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        nodes = []
        for z in self.nodes:
            c, u = chart_transition(ProjPoint(1.0, z))
            nodes.append([float(u.real), float(u.imag), int(c)])
        digest = hashlib.sha256(np.round(self.K_sample.view(float), 12).tobytes()).hexdigest()
        return {"n": self.n, "nodes": nodes, "normalizers": [float(x) for x in self.normalizers],
                "K_sample_digest": digest}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _sample_set(K, sample_size: int) -> np.ndarray:
    if isinstance(K, CompactSet):
        return _as_samples(K.sample(sample_size))
    return _as_samples(K)


def _log_M(Q: Weight, z: np.ndarray, n: int) -> np.ndarray:
    q = Q.evaluate(np.ones_like(z), z)
    if not np.all(np.isfinite(q)):
        raise ConfigurationError("Q must be finite on the K sample")
    return n * (q + 0.5 * np.log1p(np.abs(z) ** 2))


def build_section_envelope(K, Q: Weight, n: int, sample_size: int | None = None) -> SectionEnvelope:
    """Weighted Leja/Lagrange lower bound for the degree-n extremal function.

    ``K`` is a :class:`CompactSet` with a sampler or an array of chart-0
    points; the default sample size is ``50 n``.
    """
    if n < 1:
        raise ConfigurationError("degree n must be >= 1")
    sample_size = sample_size or 50 * n
    z = _sample_set(K, sample_size)
    if z.size < 4 * (n + 1):
        raise ConfigurationError(f"K sample of size {z.size} is too small for degree {n} (need >= {4 * (n + 1)})")
    logM = _log_M(Q, z, n)
    idx = leja_nodes(z, logM / n, n + 1)
    env = SectionEnvelope(n, z[idx], logM[idx], np.ones(n + 1), z, logM,
                          getattr(K, "label", "sample"))
    ratio = np.max(np.abs(env._sample_matrix()), axis=0) * np.exp(env.log_M)
    if not np.all(np.isfinite(ratio)):
        raise SolverError(f"Lagrange basis overflowed at degree {n}; use a smaller degree or a better sample")
    env.normalizers = np.maximum(1.0, ratio)
    return env


def combined_values(envelopes: list[SectionEnvelope], Z0, Z1) -> np.ndarray:
    """Running maximum over degrees; row i is ``max_{j <= i} value_{n_j}``."""
    vals = np.stack([e.value(Z0, Z1) for e in envelopes])
    return np.maximum.accumulate(vals, axis=0)


def oracle_phi_n(K_sample, Q: Weight, n: int, x: ProjPoint, phases: int = 64,
                 thetas: int = 4) -> dict:
    """Discrete extremal value by linear programming.

    Maximizes ``Re(e^{i theta} p(x))`` subject to
    ``Re(e^{i psi_k} p(zeta)) <= M(zeta)`` for ``psi_k = 2 pi k / m`` at every
    sample.  Each theta gives a value in ``[Phi_n, sec(pi/m) Phi_n]``; the
    smallest over ``thetas`` angles in ``[0, 2 pi / m)`` is returned as
    ``value = (1/n) log(best / ||x||^n)`` together with the polygon factor.
    """
    if n > 20:
        raise ConfigurationError("oracle_phi_n is limited to n <= 20")
    if phases < 32:
        raise ConfigurationError("need at least 32 phases")
    z = _as_samples(K_sample)
    logM = _log_M(Q, z, n)
    # orthonormalize the monomials on the sample for conditioning
    V = np.vander(z, n + 1, increasing=True) * np.exp(-logM)[:, None]
    _, R = np.linalg.qr(V)
    if np.min(np.abs(np.diag(R))) < 1e-13 * np.max(np.abs(np.diag(R))):
        raise SolverError("K sample too sparse for this degree (rank deficient)")
    Rinv = np.linalg.inv(R)
    A = V @ Rinv                       # sample values / M, orthonormal columns
    psi = 2 * np.pi * np.arange(phases) / phases
    # Re(e^{i psi}(a + i b) . A) = Re(e^{i psi} A) a - Im(e^{i psi} A) b
    rot = np.exp(1j * psi)[:, None, None] * A[None]
    A_ub = np.concatenate([rot.real, -rot.imag], axis=2).reshape(-1, 2 * (n + 1))
    b_ub = np.ones(A_ub.shape[0])
    X0, X1 = x.z0, x.z1
    mono = np.array([X0 ** (n - j) * X1**j for j in range(n + 1)]) @ Rinv
    best = math.inf
    for t in range(thetas):
        theta = 2 * np.pi * t / (phases * thetas)
        e = np.exp(1j * theta) * mono
        c = -np.concatenate([e.real, -e.imag])
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * c.size, method="highs")
        if res.status == 3:
            raise SolverError("LP unbounded: K sample too sparse for degree n")
        if res.status != 0:
            raise SolverError(f"LP failed: {res.message}")
        best = min(best, -res.fun)
    if best <= 0:
        return {"value": -math.inf, "sec_factor": 1 / math.cos(math.pi / phases)}
    value = (math.log(best) - n * float(homogeneous_log_norm(X0, X1))) / n
    return {"value": value, "sec_factor": 1 / math.cos(math.pi / phases)}


# ---------------------------------------------------------------------------
# bundle lift
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FiberPoint:
    """A point ``(x, t)`` of the dual bundle in the trivialization of ``chart``.

    Trivializations are related by ``t_1 = (Z1/Z0) t_0``, the factor that
    makes ``log|t| + phi_chart(x)`` chart independent.
    """

    base: ProjPoint
    t: complex
    chart: int

    def coordinate(self) -> complex:
        b = self.base
        if self.chart == 0:
            if b.z0 == 0:
                raise DomainError("base point is not in chart 0")
            return b.z1 / b.z0
        if b.z1 == 0:
            raise DomainError("base point is not in chart 1")
        return b.z0 / b.z1

    def in_chart(self, chart: int) -> "FiberPoint":
        if chart == self.chart:
            return self
        b = self.base
        if chart == 1:
            if b.z0 == 0 or b.z1 == 0:
                raise DomainError("point is not in the chart overlap")
            return FiberPoint(b, (b.z1 / b.z0) * self.t, 1)
        if b.z0 == 0 or b.z1 == 0:
            raise DomainError("point is not in the chart overlap")
        return FiberPoint(b, (b.z0 / b.z1) * self.t, 0)


def transition_g10(base: ProjPoint) -> complex:
    """Fiber transition ``t_1 / t_0`` at a point of the overlap."""
    if base.z0 == 0 or base.z1 == 0:
        raise DomainError("point is not in the chart overlap")
    return base.z1 / base.z0


def lift_to_bundle(V, omega: OmegaSpec | None = None):
    """``H(x, t) = V(x) + log|t| + phi_chart(x)`` on the dual bundle.

    ``V`` is an :class:`EnvelopeResult` or a :class:`GridField`; values are
    read in the fiber point's own chart by bilinear interpolation.
    """
    omega = omega or OmegaSpec.fubini_study()
    field = V.V if isinstance(V, EnvelopeResult) else V

    def H(p: FiberPoint) -> float:
        if p.t == 0:
            return -math.inf
        u = p.coordinate()
        v = float(field.interpolate(p.chart, np.array([u]))[0])
        return v + math.log(abs(p.t)) + float(omega.potential(p.chart, np.array([u]))[0])
    return H


__all__ = [
    "Polynomial", "SectionEnvelope", "FiberPoint", "leja_nodes",
    "build_section_envelope", "oracle_phi_n", "lift_to_bundle",
    "combined_values", "transition_g10",
]
