"""Command-line front end.

    cp1green run --config run.json [--out DIR] [--verbosity N]
    cp1green report SUMMARY.json ... [--out DIR]

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .core import GridField, OmegaSpec, ProjPoint, SphereGrid, write_field_csv
from .envelope_relax import (SolverOptions, domination_check, gauge_invariance_check,
                             ma_residual, monotone_weight_sweep, psh_certificate,
                             shift_schedule, solve_envelope)
from .envelope_sections import FiberPoint, build_section_envelope, lift_to_bundle
from .exceptions import CP1GreenError, SolverError
from .hprinciple import (MetricData, chi_to_metric, dehomogenize, homogenized,
                         metric_to_chi)
from .pullback import (RationalMap, SandwichParams, check_alpha, estimate_alpha,
                       estimate_beta, pullback_u, verify_image_inequality,
                       verify_sandwich)
from .weights import (bump_gauge, constant_gauge, harmonic_gauge, mild_check,
                      parse_set, parse_weight)

log = logging.getLogger("cp1green")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


class Run:
    """Objects shared by every command, built once from the config."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.grid = SphereGrid(cfg.grid.half_width, cfg.grid.n_cells)
        self.K = parse_set(cfg.K.spec())
        self.Q = parse_weight(cfg.Q.spec())
        self.omega = OmegaSpec.fubini_study()
        t = cfg.tolerances
        self.opts = SolverOptions(method=t.solver_method, tol=t.solver_tol, max_sweeps=t.max_sweeps)
        self.threads = _threads()
        self.failed: list[str] = []

    def envelope(self):
        res = solve_envelope(self.K, self.Q, self.omega, self.grid, self.opts)
        if not res.converged:
            self.failed.append("envelope did not converge")
        return res

    def sections(self):
        cfg = self.cfg

        def build(n):
            return build_section_envelope(self.K, self.Q, n)
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(build, cfg.degrees))

    def rational_map(self) -> RationalMap:
        m = self.cfg.map
        if m.kind == "identity":
            return RationalMap.identity()
        if m.kind == "power":
            return RationalMap.power(m.degree)
        if m.kind == "mobius":
            return RationalMap.mobius_rotation(m.theta)
        return RationalMap.from_config({"P": m.P, "Q": m.Q}, "custom")


def _threads() -> int:
    raw = os.environ.get("THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise CP1GreenError(f"THREADS must be an integer, got {raw!r}") from None
    return n if n > 0 else (os.cpu_count() or 1)


def _center(field: GridField, chart: int = 0) -> float:
    m = field.grid.n_cells // 2
    return float(field.values[chart, m, m])


def _envelope_block(res) -> dict:
    s = res.summary()
    s.pop("wall_time", None)
    s["V_at_0"] = _center(res.V, 0)
    s["V_at_inf"] = _center(res.V, 1)
    return s


# ---------------------------------------------------------------------------
# commands: each returns (summary dict, field to write or None)
# ---------------------------------------------------------------------------

def cmd_envelope(run: Run):
    res = run.envelope()
    out = _envelope_block(res)
    out.update(ma_residual(res))
    return out, res.V


def cmd_sections(run: Run):
    envs = run.sections()
    g = run.grid
    per = {}
    for se in envs:
        per[str(se.n)] = {"value_at_0": se.value_at(ProjPoint(1.0, 0.0)),
                          "value_at_inf": se.value_at(ProjPoint(0.0, 1.0)),
                          "max_constraint": se.max_constraint()}
    top = envs[-1].on_grid(g, run.cfg.section_stride)
    return {"degrees": per}, top


def cmd_compare(run: Run):
    res = run.envelope()
    envs = run.sections()
    g = run.grid
    stride = run.cfg.section_stride
    per = {}
    diffs = []
    for se in envs:
        vn = se.on_grid(g, stride).values
        ok = np.isfinite(vn) & np.isfinite(res.V.values)
        d = float(np.max(np.abs(vn[ok] - res.V.values[ok])))
        diffs.append(d)
        per[str(se.n)] = {"sup_diff": d, "value_at_0": se.value_at(ProjPoint(1.0, 0.0))}
    mono = all(b <= a for a, b in zip(diffs, diffs[1:]))
    return {"envelope": _envelope_block(res), "degrees": per, "sup_diff_non_increasing": mono}, res.V


def cmd_pullback(run: Run):
    f = run.rational_map()
    g = run.grid
    base = run.envelope()
    beta_est = estimate_beta(f, run.omega, g)
    alpha_est = estimate_alpha(f, [base.V], run.omega)
    sw = run.cfg.sandwich
    beta = sw.beta if sw.beta is not None else beta_est
    if sw.alpha is not None:
        alpha, prov = sw.alpha, "user"
    else:
        alpha, prov = min(alpha_est["alpha"], beta), "estimated"
    params = SandwichParams(alpha, beta, prov)
    sandwich = verify_sandwich(f, run.K, run.Q, params, g, run.omega, run.opts)
    image = verify_image_inequality(f, run.K, run.Q, g, run.omega, run.opts)
    alpha_check = check_alpha(f, alpha, [base.V], run.omega)
    out = {"map": f.label, "degree": f.degree, "beta_estimate": beta_est,
           "alpha_estimate": alpha_est, "sandwich": sandwich, "image": image,
           "alpha_check": alpha_check, "envelope": _envelope_block(base)}
    return out, pullback_u(f, base.V)


def cmd_sweep(run: Run):
    sw = run.cfg.sweep
    sched = shift_schedule(run.Q, sw.ns, sw.direction)
    rows = monotone_weight_sweep(run.K, run.Q, run.omega, run.grid, sched, sw.direction, run.opts)
    tol = run.opts.tol
    bad = [r["n"] for r in rows if r["sup_diff_to_limit"] > 1.0 / r["n"] + 2 * tol]
    viol = sum(1 for r in rows if r["monotonicity_violation"] > 2 * tol)
    limit = run.envelope()
    return {"direction": sw.direction, "rows": rows, "bound_failures": bad,
            "monotonicity_violations": viol}, limit.V


def cmd_hprinciple(run: Run):
    res = run.envelope()
    rng = np.random.default_rng(run.cfg.seed)
    m = 1000
    z = 1.2 * np.sqrt(rng.uniform(size=m)) * np.exp(2j * np.pi * rng.uniform(size=m))

    def v(u):
        u = np.asarray(u, dtype=complex)
        return res.V.evaluate(np.ones_like(u), u)
    H = homogenized(v, "V")
    lam = (rng.normal(size=m) + 1j * rng.normal(size=m)) + 0.1
    Z0, Z1 = lam, lam * z
    v_back = dehomogenize(H)(z)
    roundtrip_h = float(np.max(np.abs(v_back - v(z))))
    hom_defect = H.homogeneity_defect(Z0, Z1)

    metric = MetricData.from_field(res, run.omega)
    d = 1.0
    chi = metric_to_chi(metric, d)
    pts = [FiberPoint(ProjPoint.from_chart(c, zz), complex(t), c)
           for c, zz, t in zip(rng.integers(0, 2, 64), z[:64], lam[:64])]
    back = chi_to_metric(chi, d, pts)
    roundtrip_m = max(float(np.max(np.abs(back.h(c, z[:200]) - metric.h(c, z[:200])))) for c in (0, 1))
    fiber_defect = chi.homogeneity_defect(pts)

    lift = lift_to_bundle(res, run.omega)
    ring = z[(np.abs(z) > 0.85) & (np.abs(z) < 1.0 / 0.85)]
    lift_gap = 0.0
    for zz, t in zip(ring, lam):
        p = FiberPoint(ProjPoint.from_chart(0, zz), complex(t), 0)
        lift_gap = max(lift_gap, abs(lift(p) - lift(p.in_chart(1))))
    out = {"samples": m, "homogenize_roundtrip": roundtrip_h, "log_homogeneity_defect": hom_defect,
           "metric_chi_roundtrip": roundtrip_m, "fiber_homogeneity_defect": fiber_defect,
           "lift_chart_consistency": lift_gap, "lift_bound_10h": 10 * run.grid.h,
           "envelope": _envelope_block(res)}
    return out, res.V


def cmd_diagnostics(run: Run):
    res = run.envelope()
    g = run.grid
    mild = mild_check(run.Q, run.omega, g)
    gc = run.cfg.gauge
    if gc.kind == "constant":
        xi = constant_gauge(g, gc.amplitude)
    elif gc.kind == "harmonic":
        xi = harmonic_gauge(g, gc.amplitude)
    else:
        xi = bump_gauge(g, gc.amplitude)
    gauge = gauge_invariance_check(run.K, run.Q, run.omega, xi, g, run.opts)
    out = {"envelope": _envelope_block(res), "ma": ma_residual(res),
           "psh_certificate": psh_certificate(res.V, run.omega),
           "mild": {"verdict": mild.verdict, "continuity_score": mild.continuity_score,
                    "finite_area_fraction": mild.finite_area_fraction, "raw_score": mild.raw_score,
                    "saturated_nodes": mild.saturated_nodes},
           "gauge": {"kind": gc.kind, **gauge, "bound": 5 * g.h**2 + 2 * run.opts.tol}}
    if np.all(np.isfinite(res.V.values)):
        out["domination_self"] = domination_check(res.V, res.V, run.omega, run.opts.tol)
    return out, res.V


COMMANDS = {"envelope": cmd_envelope, "sections": cmd_sections, "compare": cmd_compare,
            "pullback": cmd_pullback, "sweep": cmd_sweep, "hprinciple": cmd_hprinciple,
            "diagnostics": cmd_diagnostics}


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "+inf" if x > 0 else "-inf"
        return x
    return x


def dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def atomic_write(path: Path, text: str | None = None, writer=None) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        if writer is not None:
            writer(tmp)
        else:
            Path(tmp).write_text(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _resolve_out(cfg: RunConfig, flag: str | None) -> Path:
    return Path(flag or os.environ.get("OUTPUT_DIR") or cfg.output_dir)


def run(config_path, out: str | None = None) -> int:
    try:
        cfg = load_config(config_path)
        r = Run(cfg)
    except CP1GreenError as exc:
        log.error("invalid config: %s", exc)
        return EXIT_INVALID
    outdir = _resolve_out(cfg, out)
    t0 = time.perf_counter()
    try:
        summary, field = COMMANDS[cfg.command](r)
    except SolverError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (CP1GreenError, ValueError) as exc:
        log.error("invalid input: %s", exc)
        return EXIT_INVALID
    except (FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    summary = {"command": cfg.command, "grid": {"half_width": cfg.grid.half_width,
               "n_cells": cfg.grid.n_cells, "h": r.grid.h}, "seed": cfg.seed,
               "failures": r.failed, "results": summary,
               "wall_time": time.perf_counter() - t0}
    atomic_write(outdir / "effective_config.json", dump_json(cfg.effective()))
    atomic_write(outdir / "summary.json", dump_json(summary))
    if field is not None:
        atomic_write(outdir / "V.csv", writer=lambda p: write_field_csv(field, p))
    log.info("wrote %s", outdir)
    if r.failed:
        log.error("numerical failure: %s", "; ".join(r.failed))
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif isinstance(v, (int, float, str, bool)) or v is None:
            out[key] = v
    return out


def _rows(path: str, s: dict) -> list[dict]:
    base = {"source": path, "command": s.get("command"),
            "n_cells": s.get("grid", {}).get("n_cells"), "h": s.get("grid", {}).get("h")}
    res = s.get("results", {})
    if isinstance(res.get("rows"), list):
        return [{**base, **_flatten(row)} for row in res["rows"]]
    return [{**base, **_flatten(res)}]


def _sort_key(row):
    n = row.get("n")
    h = row.get("h")
    return (str(row.get("command")), -(h if isinstance(h, (int, float)) else 0),
            n if isinstance(n, (int, float)) else 0, str(row.get("source")))


def report(paths: list[str], out: str | None = None) -> int:
    if not paths:
        log.error("report needs at least one summary.json")
        return EXIT_INVALID
    rows = []
    for p in paths:
        try:
            s = json.loads(Path(p).read_text())
        except FileNotFoundError:
            log.error("summary %r not found", p)
            return EXIT_INVALID
        except json.JSONDecodeError as exc:
            log.error("summary %r is not valid JSON: %s", p, exc)
            return EXIT_INVALID
        rows.extend(_rows(p, s))
    rows.sort(key=_sort_key)
    lead = ["command", "h", "n_cells", "n", "source"]
    rest = sorted({k for r in rows for k in r} - set(lead))
    cols = [c for c in lead if any(c in r for r in rows)] + rest
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    digest = _digest(rows)
    if out:
        d = Path(out)
        atomic_write(d / "report.csv", buf.getvalue())
        atomic_write(d / "report.txt", digest)
    else:
        sys.stdout.write(buf.getvalue())
    sys.stdout.write(digest)
    return EXIT_OK


_DIGEST_KEYS = ("V_at_0", "envelope.V_at_0", "sup_diff_to_limit", "monotonicity_violation",
                "ma_mass_total", "envelope.ma_mass_total", "sandwich.upper_defect", "image.defect",
                "gauge.max_defect")


def _digest(rows: list[dict]) -> str:
    lines = [f"{len(rows)} row(s)"]
    for r in rows:
        parts = [f"{r.get('command')}", f"h={r.get('h')}"]
        if "n" in r:
            parts.append(f"n={r['n']}")
        for k in _DIGEST_KEYS:
            if k in r:
                v = r[k]
                parts.append(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}")
        lines.append("  ".join(parts))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cp1green", description="Weighted Green functions on the Riemann sphere.")
    p.add_argument("--verbosity", type=int, default=1, help="0 quiet, 1 info, 2 debug")
    sub = p.add_subparsers(dest="action", required=True)
    r = sub.add_parser("run", help="run one config")
    r.add_argument("config_pos", nargs="?", metavar="CONFIG")
    r.add_argument("--config")
    r.add_argument("--out")
    r.add_argument("--verbosity", type=int, default=argparse.SUPPRESS)
    rep = sub.add_parser("report", help="merge summary.json files")
    rep.add_argument("summaries", nargs="*")
    rep.add_argument("--out")
    rep.add_argument("--verbosity", type=int, default=argparse.SUPPRESS)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    level = {0: logging.ERROR, 1: logging.INFO}.get(args.verbosity, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    if args.action == "run":
        path = args.config or args.config_pos
        if not path:
            log.error("run needs --config")
            return EXIT_INVALID
        return run(path, args.out)
    return report(args.summaries, args.out)


if __name__ == "__main__":
    sys.exit(main())
