"""Discrete envelope ``V_{K,omega,Q}`` on the two-chart grid.

The discrete problem: find the largest grid function ``v`` with

* ``Lap_h v + rho >= 0`` at every interior node (omega-subharmonic),
* ``v <= Q`` at the nodes of the K mask,
* frame nodes equal to the bilinear interpolation of the other chart.

Equivalently ``v = T(v)`` with ``T(v) = min(Q [on K], avg4(v) + h^2 rho/4)``.
``T`` is order preserving and the fixed point is unique, so any monotone
scheme started below the solution climbs to it.  Two schemes are provided:

``howard``
    policy iteration on the obstacle/equation branch of each K node, one
    sparse direct solve per step, followed by a few Gauss-Seidel sweeps that
    confirm the fixed point to the stopping tolerance.
``gauss_seidel``
    red-black Gauss-Seidel started from the subsolution ``min_K Q``;
    every sweep is checked to be nodewise non-decreasing.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .core import (VALUE_CAP, GridField, OmegaSpec, SphereGrid,
                   seam_discrepancy, sphere_mass)
from .exceptions import ConfigurationError, InvalidWeightError, PreconditionError, SolverError
from .weights import CompactSet, GaugeFunction, Weight, gauge_shift


@dataclass
class SolverOptions:
    method: str = "howard"
    tol: float = 1e-9
    max_sweeps: int = 10**6
    max_policy_steps: int = 200
    polish_sweeps: int = 50
    value_cap: float = VALUE_CAP
    check_monotone: bool = True

    def __post_init__(self):
        if self.method not in ("howard", "gauss_seidel"):
            raise ConfigurationError(f"solver.method must be 'howard' or 'gauss_seidel', got {self.method!r}")
        if not self.tol > 0:
            raise ConfigurationError("solver.tol must be positive")


@dataclass
class EnvelopeResult:
    V: GridField
    iterations: int
    final_update: float
    seam_discrepancy: float
    ma_mass_total: float
    K_mask: np.ndarray
    Q_nodes: np.ndarray
    density: np.ndarray
    converged: bool
    certificate_min: float
    obstacle_excess: float
    wall_time: float
    metadata: dict = field(default_factory=dict)

    @property
    def grid(self) -> SphereGrid:
        return self.V.grid

    def residual(self) -> np.ndarray:
        """``Lap_h V + rho`` (NaN on the frame)."""
        return self.V.laplacian() + self.density

    def summary(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_update": self.final_update,
            "seam_discrepancy": self.seam_discrepancy,
            "ma_mass_total": self.ma_mass_total,
            "wall_time": self.wall_time,
            "converged": self.converged,
            "certificate_min": self.certificate_min,
            "obstacle_excess": self.obstacle_excess,
            **self.metadata,
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=2)


# ---------------------------------------------------------------------------
# assembly helpers
# ---------------------------------------------------------------------------

def frame_transfer(grid: SphereGrid) -> sp.csr_matrix:
    """Sparse map from all node values to frame values (bilinear at ``1/z``)."""
    N = grid.n_cells + 1
    n = grid.n_cells
    frame = grid.frame
    fi, fj = np.nonzero(frame)
    z = grid.z[fi, fj]
    u = 1.0 / z
    fx = (u.real + grid.half_width) / grid.h
    fy = (u.imag + grid.half_width) / grid.h
    i0 = np.clip(np.floor(fx), 0, n - 1).astype(np.intp)
    j0 = np.clip(np.floor(fy), 0, n - 1).astype(np.intp)
    tx = np.clip(fx - i0, 0.0, 1.0)
    ty = np.clip(fy - j0, 0.0, 1.0)
    rows, cols, vals = [], [], []
    nf = fi.size
    for c in (0, 1):
        row0 = c * nf + np.arange(nf)
        base = (1 - c) * N * N
        for di, dj, w in ((0, 0, (1 - tx) * (1 - ty)), (1, 0, tx * (1 - ty)),
                          (0, 1, (1 - tx) * ty), (1, 1, tx * ty)):
            rows.append(row0)
            cols.append(base + (i0 + di) * N + (j0 + dj))
            vals.append(w)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(2 * nf, 2 * N * N))


def _frame_flat_index(grid: SphereGrid) -> np.ndarray:
    N = grid.n_cells + 1
    fi, fj = np.nonzero(grid.frame)
    flat = fi * N + fj
    return np.concatenate([flat, N * N + flat])


def neighbor_cap(v: np.ndarray, c4: np.ndarray) -> np.ndarray:
    """``avg4(v) + h^2 rho / 4`` on interior nodes, ``+inf`` on the frame."""
    out = np.full(v.shape, np.inf)
    out[:, 1:-1, 1:-1] = 0.25 * (v[:, 2:, 1:-1] + v[:, :-2, 1:-1] + v[:, 1:-1, 2:]
                                 + v[:, 1:-1, :-2]) + c4[:, 1:-1, 1:-1]
    return out


def _resolve_inputs(K, Q, omega: OmegaSpec, grid: SphereGrid, cap: float):
    if isinstance(K, CompactSet):
        kmask = K.grid_mask(grid)
        klabel = K.label
    else:
        kmask = np.asarray(K, dtype=bool) & grid.interior[None]
        klabel = "mask"
    if kmask.shape != (2,) + grid.shape:
        raise ConfigurationError("K mask does not match the grid")
    if not kmask.any():
        raise ConfigurationError(f"K = {klabel!r} has an empty grid mask at h = {grid.h:.4g}")
    if isinstance(Q, Weight):
        qv = Q.on_grid(grid).values
        qlabel = Q.description
    elif isinstance(Q, GridField):
        qv = Q.values.copy()
        qlabel = Q.label or "grid"
    else:
        qv = np.asarray(Q, dtype=float)
        qlabel = "array"
    if np.isnan(qv[kmask]).any():
        raise InvalidWeightError("weight is NaN on K")
    saturated = int(np.count_nonzero(kmask & (np.abs(qv) >= cap)))
    qv = np.clip(qv, -cap, cap)
    active = kmask & (qv < cap)
    if not active.any():
        raise PreconditionError(f"weight is +inf (>= cap {cap:g}) on every K node; envelope is unbounded")
    rho = np.stack([np.asarray(omega.density(c, grid.z), dtype=float) * np.ones(grid.shape)
                    for c in (0, 1)])
    return kmask, active, qv, rho, klabel, qlabel, saturated


# ---------------------------------------------------------------------------
# schemes
# ---------------------------------------------------------------------------

def _gs_sweep(v, active, qv, c4, F, fidx, colors):
    """One red-black sweep in place; returns the signed change."""
    old = v.copy()
    flat = v.reshape(-1)
    for color in colors:
        cap = neighbor_cap(v, c4)
        new = np.where(active, np.minimum(qv, cap), cap)
        v[color] = new[color]
        flat[fidx] = F @ flat
    return v - old


def _gauss_seidel(v, active, qv, c4, F, fidx, opts: SolverOptions, check=True):
    colors = _color_masks_cache(v.shape)
    update = math.inf
    sweeps = 0
    while sweeps < opts.max_sweeps:
        d = _gs_sweep(v, active, qv, c4, F, fidx, colors)
        sweeps += 1
        if check and opts.check_monotone and np.min(d) < -1e-12:
            raise SolverError(f"monotonicity violated in sweep {sweeps}: min change {np.min(d):.3g}")
        update = float(np.max(np.abs(d)))
        if update < opts.tol:
            break
    return v, sweeps, update


_COLOR_CACHE: dict = {}


def _color_masks_cache(shape):
    if shape not in _COLOR_CACHE:
        i, j = np.indices(shape[1:])
        inner = np.zeros(shape[1:], dtype=bool)
        inner[1:-1, 1:-1] = True
        red = ((i + j) % 2 == 0) & inner
        black = ((i + j) % 2 == 1) & inner
        _COLOR_CACHE[shape] = (np.stack([red, red]), np.stack([black, black]))
    return _COLOR_CACHE[shape]


def _pde_operator(grid: SphereGrid):
    """Row/col/val triples of the interior five-point rows (scaled by 1/4)."""
    N = grid.n_cells + 1
    ii, jj = np.nonzero(grid.interior)
    base = ii * N + jj
    rows, cols, vals = [], [], []
    for c in (0, 1):
        r = c * N * N + base
        rows += [r] * 5
        cols += [r, r + N, r - N, r + 1, r - 1]
        vals += [np.ones(r.size)] + [np.full(r.size, -0.25)] * 4
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def _howard(active, qv, c4, grid: SphereGrid, F, fidx, opts: SolverOptions, policy=None):
    N = grid.n_cells + 1
    n_all = 2 * N * N
    pr, pc, pv = _pde_operator(grid)
    # frame rows: v_f - sum w v_k = 0
    Fc = F.tocoo()
    fr = np.concatenate([fidx, fidx[Fc.row]])
    fc = np.concatenate([fidx, Fc.col])
    fv = np.concatenate([np.ones(fidx.size), -Fc.data])
    q_flat = qv.reshape(-1)
    c_flat = c4.reshape(-1)
    act_flat = active.reshape(-1)
    obst = act_flat.copy() if policy is None else (policy.reshape(-1) & act_flat)
    if not obst.any():
        obst = act_flat.copy()
    v = None
    for step in range(1, opts.max_policy_steps + 1):
        keep = ~obst[pr]
        rows = np.concatenate([pr[keep], np.flatnonzero(obst), fr])
        cols = np.concatenate([pc[keep], np.flatnonzero(obst), fc])
        vals = np.concatenate([pv[keep], np.ones(int(obst.sum())), fv])
        A = sp.csr_matrix((vals, (rows, cols)), shape=(n_all, n_all))
        b = np.where(obst, q_flat, c_flat)
        b[fidx] = 0.0
        v = spsolve(A.tocsc(), b, permc_spec="MMD_AT_PLUS_A")
        if not np.all(np.isfinite(v)):
            raise SolverError("sparse solve produced non-finite values (singular policy)")
        cap = neighbor_cap(v.reshape(2, N, N), c4).reshape(-1)
        eps = 1e-12 * np.maximum(1.0, np.abs(q_flat))
        to_pde = obst & (q_flat > cap + eps)
        to_obs = act_flat & ~obst & (v > q_flat + eps)
        if not to_pde.any() and not to_obs.any():
            return v.reshape(2, N, N), step, obst.reshape(2, N, N)
        new = (obst & ~to_pde) | to_obs
        if not new.any():
            # keep the tightest obstacle so the system stays nonsingular
            k = np.flatnonzero(obst)[np.argmin((q_flat - cap)[obst])]
            new[k] = True
        obst = new
    raise SolverError(f"policy iteration did not settle in {opts.max_policy_steps} steps")


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def solve_envelope(K, Q, omega: OmegaSpec | None = None, grid: SphereGrid | None = None,
                   opts: SolverOptions | None = None, warm_start: "EnvelopeResult | None" = None,
                   **kwargs) -> EnvelopeResult:
    """Compute the discrete envelope ``V_{K,omega,Q}``.

    ``K`` is a :class:`CompactSet` or a boolean node mask, ``Q`` a
    :class:`Weight`, a :class:`GridField` or a raw ``(2, n+1, n+1)`` array.
    Keyword arguments override fields of :class:`SolverOptions`.
    """
    t0 = time.perf_counter()
    omega = omega or OmegaSpec.fubini_study()
    grid = grid or SphereGrid()
    opts = opts or SolverOptions()
    if kwargs:
        opts = SolverOptions(**{**opts.__dict__, **kwargs})
    kmask, active, qv, rho, klabel, qlabel, saturated = _resolve_inputs(K, Q, omega, grid, opts.value_cap)
    c4 = 0.25 * grid.h**2 * rho
    F = frame_transfer(grid)
    fidx = _frame_flat_index(grid)
    meta = {"method": opts.method, "n_cells": grid.n_cells, "half_width": grid.half_width,
            "h": grid.h, "K": klabel, "Q": qlabel, "omega": omega.label,
            "value_cap": opts.value_cap, "saturated_K_nodes": saturated, "tol": opts.tol}

    if opts.method == "howard":
        policy = None
        if warm_start is not None and warm_start.grid == grid:
            policy = warm_start.K_mask & (warm_start.V.values >= qv - 1e-9)
        v, steps, _ = _howard(active, qv, c4, grid, F, fidx, opts, policy)
        polish = SolverOptions(**{**opts.__dict__, "max_sweeps": opts.polish_sweeps})
        v, sweeps, update = _gauss_seidel(v, active, qv, c4, F, fidx, polish, check=False)
        meta["policy_steps"] = steps
        meta["polish_sweeps"] = sweeps
        iterations = steps
    else:
        v = np.full(qv.shape, float(np.min(qv[active])))
        v, iterations, update = _gauss_seidel(v, active, qv, c4, F, fidx, opts)
    converged = update < opts.tol
    meta["max_iterations_hit"] = not converged

    V = GridField(v, grid, f"V[{klabel},{qlabel}]")
    cap = neighbor_cap(v, c4)
    slack = cap - v
    cert = float(np.min(slack[:, grid.interior]))
    excess = float(np.max((v - qv)[active]))
    if cert < -10 * opts.tol and converged:
        raise SolverError(f"omega-psh certificate failed: min slack {cert:.3g}")
    if excess > 10 * opts.tol and converged:
        raise SolverError(f"obstacle violated on K by {excess:.3g}")
    residual = V.laplacian() + rho
    mass = sphere_mass(grid, np.nan_to_num(residual))
    return EnvelopeResult(V, int(iterations), float(update), seam_discrepancy(V), mass,
                          kmask, qv, rho, bool(converged), cert, excess,
                          time.perf_counter() - t0, meta)


def ma_residual(result: EnvelopeResult, K=None, collar: float = 3.0) -> dict:
    """Monge-Ampere diagnostics of an envelope.

    ``off_K_max_residual`` is ``max |Lap_h V + rho|`` over interior nodes more
    than ``collar`` cells from K; ``total_mass`` is the partition-of-unity
    sum of ``(Lap_h V + rho) h^2``; ``mass_on_K_fraction`` is the share of
    that mass carried within ``collar`` cells of K.
    """
    g = result.grid
    kmask = result.K_mask if K is None else (K.grid_mask(g) if isinstance(K, CompactSet) else K)
    r = np.nan_to_num(result.residual())
    off = 0.0
    near = np.zeros_like(kmask)
    for c in (0, 1):
        dist = g.cell_distance(kmask[c])
        near[c] = dist <= collar
        far = g.interior & ~near[c]
        if far.any():
            off = max(off, float(np.max(np.abs(r[c][far]))))
    total = sphere_mass(g, r)
    on_k = sphere_mass(g, np.where(near, r, 0.0))
    return {"off_K_max_residual": off, "total_mass": total,
            "mass_on_K_fraction": on_k / total if total else float("nan")}


def psh_certificate(u: GridField, omega: OmegaSpec | None = None) -> float:
    """Minimum over interior nodes of ``Lap_h u + rho``."""
    omega = omega or OmegaSpec.fubini_study()
    g = u.grid
    worst = math.inf
    for c in (0, 1):
        r = u.laplacian()[c] + omega.density(c, g.z)
        worst = min(worst, float(np.min(r[g.interior])))
    return worst


def domination_check(u: GridField, v: GridField, omega: OmegaSpec | None = None,
                     tol: float = 1e-9) -> dict:
    """Test the domination principle on a pair of grid functions.

    The certificate tolerance is in value units: ``Lap_h w + rho >= -4 tol/h^2``.
    """
    omega = omega or OmegaSpec.fubini_study()
    g = u.grid
    lap_tol = 4.0 * tol / g.h**2
    for name, w in (("u", u), ("v", v)):
        if not np.all(np.isfinite(w.values)):
            raise PreconditionError(f"{name} is not finite on the grid")
        cert = psh_certificate(w, omega)
        if cert < -lap_tol:
            raise PreconditionError(f"{name} is not discretely omega-psh: min(Lap_h {name} + rho) = {cert:.3g}")
    rho = np.stack([omega.density(c, g.z) * np.ones(g.shape) for c in (0, 1)])
    r = np.nan_to_num(u.laplacian() + rho)
    below = u.values < v.values - tol
    hyp = sphere_mass(g, np.where(below, r, 0.0))
    gap = float(np.min(u.values - v.values))
    consistent = not (hyp <= tol and gap < -10 * tol)
    return {"hypothesis_mass": hyp, "min_gap": gap, "consistent": bool(consistent)}


def shift_schedule(Q: Weight, ns: Sequence[int], direction: str) -> list[tuple[int, Weight]]:
    """``Q - 1/n`` (direction ``up``) or ``Q + 1/n`` (``down``)."""
    sign = -1.0 if direction == "up" else 1.0
    return [(n, Q + sign / n) for n in ns]


def monotone_weight_sweep(K, Q, omega: OmegaSpec | None, grid: SphereGrid,
                          schedule: Sequence[tuple[int, Weight]], direction: str,
                          opts: SolverOptions | None = None) -> list[dict]:
    """Solve along a monotone schedule ``Q_n`` and compare with the limit ``Q``."""
    if direction not in ("up", "down"):
        raise ConfigurationError("direction must be 'up' or 'down'")
    omega = omega or OmegaSpec.fubini_study()
    opts = opts or SolverOptions()
    qs = [q.on_grid(grid).values for _, q in schedule] + [Q.on_grid(grid).values]
    sgn = 1.0 if direction == "up" else -1.0
    for a, b in zip(qs[:-1], qs[1:]):
        with np.errstate(invalid="ignore"):
            d = sgn * (b - a)
        if np.any(d[np.isfinite(d)] < -1e-12):
            raise ConfigurationError(f"schedule is not monotone {direction}")
    limit = solve_envelope(K, Q, omega, grid, opts)
    rows = []
    prev = None
    for n, q in schedule:
        res = solve_envelope(K, q, omega, grid, opts, warm_start=limit)
        viol = 0.0
        if prev is not None:
            viol = max(0.0, float(np.max(sgn * (prev.V.values - res.V.values))))
        rows.append({"n": n, "sup_diff_to_limit": limit.V.sup_diff(res.V),
                     "monotonicity_violation": viol})
        prev = res
    return rows


def gauge_invariance_check(K, Q: Weight, omega: OmegaSpec | None, xi: GaugeFunction,
                           grid: SphereGrid, opts: SolverOptions | None = None,
                           stated_form: bool = True) -> dict:
    """Gauge identity for ``omega' = omega + dd^c xi``.

    A function u is omega'-psh exactly when ``u + xi`` is omega-psh, so
    ``V_{K,omega',Q} = V_{K,omega,Q+xi} - xi``; ``max_defect`` is the sup-norm
    of the difference of the two sides.  With ``stated_form`` the defect of
    ``V_{K,omega,Q-xi} + xi`` is reported as well (``stated_form_defect``);
    that form holds for ``omega' = omega - dd^c xi`` and only agrees with the
    first one for constant gauges.
    """
    omega = omega or OmegaSpec.fubini_study()
    q_plus, omega_p = gauge_shift(Q, xi, +1, omega)
    lhs = solve_envelope(K, Q, omega_p, grid, opts)
    rhs = solve_envelope(K, q_plus, omega, grid, opts)
    out = {"max_defect": lhs.V.sup_diff(rhs.V - xi.xi),
           "solver_tol": (opts or SolverOptions()).tol}
    if stated_form:
        q_minus, _ = gauge_shift(Q, xi, -1, omega)
        alt = solve_envelope(K, q_minus, omega, grid, opts)
        out["stated_form_defect"] = lhs.V.sup_diff(alt.V + xi.xi)
    return out


__all__ = [
    "SolverOptions", "EnvelopeResult", "solve_envelope", "ma_residual",
    "domination_check", "monotone_weight_sweep", "gauge_invariance_check",
    "shift_schedule", "psh_certificate", "frame_transfer", "neighbor_cap",
]
