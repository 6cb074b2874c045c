"""``ahsolve``: command-line front end with machine-readable reports.

Every subcommand builds a :class:`Report`, records named checks
(value, tolerance, pass/fail) and writes JSON (schema 1) and/or CSV.
The JSON is deterministic for a given command line and seed; wall time
lives in the separate ``timing`` field.

Exit status: 0 all checks pass, 1 a check failed, 2 usage error,
3 solver or construction error.
"""
from __future__ import annotations

import os

_threads = os.environ.get("AHSOLVE_THREADS")
if _threads:
    # must happen before numpy loads its BLAS
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import io  # noqa: E402
import json  # noqa: E402
import math  # noqa: E402
import sys  # noqa: E402
import tempfile  # noqa: E402
import time  # noqa: E402
from dataclasses import asdict, dataclass  # noqa: E402

import numpy as np  # noqa: E402

from . import ah, cone, families, solver  # noqa: E402
from .differentials import realize  # noqa: E402
from .grids import (ConformalMetric, LatticeTorus, SphereChart, from_json,  # noqa: E402
                    gauss_bonnet_defect, surface_from_dict, write_csv)

SCHEMA = 1

SPHERE_CSV = ("rho", "h_coeff", "sR", "f", "gamma_norm2")
TORUS_CSV = ("s", "h_coeff", "sR", "f", "gamma_norm2")
GEODESIC_CSV = ("t", "x", "y", "energy", "kappa_geo")
RAY_CSV = ("t", "phi_min", "phi_max", "phi_closed_form", "lower_envelope_gap", "rescaled_volume")
CONE_CSV = ("x", "y", "t", "F", "g_eig1", "g_eig2", "g_eig3", "f_eig1", "f_eig2", "f_eig3")
MONGE_AMPERE_CSV = ("tau", "Psi", "dPsi", "d2Psi")


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    """Resolved configuration, echoed in every report."""

    grid: tuple | None = None
    tol: float | None = None
    out: str | None = None
    emit: str = "json"
    seed: int = 0
    normalization: str | None = None
    normalization_value: float | None = None
    threads: str | None = None

    def __post_init__(self):
        if self.tol is not None and not self.tol > 0:
            raise UsageError("--tol must be positive")
        if self.emit not in ("json", "csv", "both"):
            raise UsageError("--emit is json, csv or both")

    def tolerance(self, default: float) -> float:
        return default if self.tol is None else self.tol


def _clean(x):
    """JSON-safe copy: numpy scalars and arrays to Python, non-finite to None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


class Report:
    def __init__(self, command: list, config: RunConfig):
        self.command = list(command)
        self.config = config
        self.results: dict = {}
        self.checks: dict = {}
        self.tables: dict = {}  # name -> (columns, rows)
        self.raw_csv: dict = {}  # name -> text, e.g. grid-field dumps
        self.errors: list = []
        self._t0 = time.perf_counter()

    def check(self, name: str, value, tol: float, relation: str = "le"):
        """``le``: |value| <= tol; ``ge``: value >= tol; ``gt``: value > tol."""
        v = float(value) if value is not None else float("nan")
        if relation == "le":
            ok = abs(v) <= tol
        elif relation == "ge":
            ok = v >= tol
        elif relation == "gt":
            ok = v > tol
        else:
            raise ValueError(relation)
        self.checks[name] = {"value": v, "tol": tol, "relation": relation, "pass": bool(ok)}
        return ok

    def flag(self, name: str, ok: bool):
        self.checks[name] = {"value": bool(ok), "tol": None, "relation": "true", "pass": bool(ok)}
        return ok

    def table(self, name: str, columns, rows):
        self.tables[name] = (tuple(columns), np.atleast_2d(np.asarray(rows, dtype=float)))

    def csv_outputs(self) -> dict:
        out = {name: _csv_text(c, r) for name, (c, r) in self.tables.items()}
        out.update(self.raw_csv)
        return out

    @property
    def passed(self) -> bool:
        return not self.errors and all(c["pass"] for c in self.checks.values())

    def to_dict(self) -> dict:
        failed = sorted(k for k, c in self.checks.items() if not c["pass"])
        return _clean({
            "schema": SCHEMA,
            "command": self.command,
            "config": asdict(self.config),
            "seed": self.config.seed,
            "results": self.results,
            "residuals": {k: c["value"] for k, c in self.checks.items()},
            "tolerances": {k: c["tol"] for k, c in self.checks.items()},
            "checks": self.checks,
            "failed": failed,
            "errors": self.errors,
            "pass": self.passed,
            "timing": {"wall_seconds": time.perf_counter() - self._t0},
        })


def dumps(d: dict) -> str:
    return json.dumps(d, sort_keys=True, indent=2) + "\n"


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    np.savetxt(buf, rows, delimiter=",", header=",".join(columns), comments="", fmt="%.17g")
    return buf.getvalue()


def _emit(report: Report, stdout) -> None:
    cfg = report.config
    d = report.to_dict()
    want_json = cfg.emit in ("json", "both")
    want_csv = cfg.emit in ("csv", "both")
    csvs = report.csv_outputs() if want_csv else {}
    if cfg.out is None:
        if want_json:
            stdout.write(dumps(d))
        for name, text in csvs.items():
            if len(csvs) > 1:
                stdout.write(f"# {name}\n")
            stdout.write(text)
        return
    stem = cfg.out[:-5] if cfg.out.endswith(".json") else cfg.out
    parent = os.path.dirname(stem)
    if parent:
        os.makedirs(parent, exist_ok=True)
    if want_json:
        with open(stem + ".json", "w") as fh:
            fh.write(dumps(d))
    for name, text in csvs.items():
        path = stem + ".csv" if len(csvs) == 1 else f"{stem}-{name}.csv"
        with open(path, "w") as fh:
            fh.write(text)


# --------------------------------------------------------------------------
# argument helpers
# --------------------------------------------------------------------------

def parse_grid(text: str | None) -> tuple | None:
    """``"256"`` -> (256, 256); ``"512x256"`` -> (512, 256)."""
    if text is None:
        return None
    parts = text.lower().replace(",", "x").split("x")
    try:
        vals = tuple(int(p) for p in parts if p)
    except ValueError:
        raise UsageError(f"bad --grid {text!r}") from None
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2 or min(vals) < 8:
        raise UsageError(f"bad --grid {text!r}")
    return vals


def parse_samples(text: str) -> np.ndarray:
    """``"a:b:step"`` (inclusive of b) or a comma list."""
    try:
        if ":" in text:
            a, b, st = (float(v) for v in text.split(":"))
            if st <= 0 or b < a:
                raise ValueError
            n = int(math.floor((b - a) / st + 1e-9)) + 1
            return np.round(a + st * np.arange(n), 12)
        return np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise UsageError(f"bad sample list {text!r}") from None


def _torus(grid, default=256) -> LatticeTorus:
    nx, ny = grid or (default, default)
    return LatticeTorus(nx=nx, ny=ny)


def _chart(grid) -> SphereChart:
    if grid is None:
        return SphereChart()
    return SphereChart(n_rho=grid[0], n_ang=grid[1])


def _cubic_coeff(B_norm2: float) -> float:
    """Constant coefficient c with |2 Re(c dz^3)|^2_flat = 16 c^2 = B_norm2."""
    if B_norm2 < 0:
        raise UsageError("--B-norm2 must be non-negative")
    return math.sqrt(B_norm2 / 16.0)


# --------------------------------------------------------------------------
# structures from JSON
# --------------------------------------------------------------------------

def load_structure(obj: dict, grid=None):
    """Build an AH structure from a JSON description.

    kinds: ``exact-torus`` (coefficient [re, im], perturbation, grid),
    ``sphere-family`` (kappa, chart), ``torus-family`` (kappa, grid),
    ``fields`` (log_factor, optional B and gamma as field JSON envelopes).
    Returns (structure, kind, spectral).
    """
    kind = obj.get("kind")
    if obj.get("schema", SCHEMA) != SCHEMA:
        raise UsageError("unsupported structure schema")
    if grid is None and "grid" in obj:
        grid = parse_grid(str(obj["grid"]))
    if kind == "exact-torus":
        c = obj.get("coefficient", [1.0 / math.sqrt(2.0), 0.0])
        c = complex(*c) if isinstance(c, list) else complex(c)
        a = ah.exact_torus(_torus(grid, 64), c)
        amp = float(obj.get("perturbation", 0.0))
        if amp:
            a = ah.perturbed(a, amp)
        return a, kind, True
    if kind == "sphere-family":
        chart = surface_from_dict(obj["chart"]) if "chart" in obj else _chart(grid)
        return families.SphereFamily(float(obj["kappa"])).structure(chart), kind, False
    if kind == "torus-family":
        fam = families.TorusFamily(float(obj["kappa"]))
        n = grid[0] if grid else int(obj.get("n", 64))
        return fam.structure(fam.lattice(n)), kind, True
    if kind == "fields":
        L = from_json(json.dumps(obj["log_factor"]))
        m = ConformalMetric.explicit(L.surface, L.values)
        B = from_json(json.dumps(obj["B"])) if "B" in obj else None
        g = from_json(json.dumps(obj["gamma"])) if "gamma" in obj else None
        return ah.AHStructure(m, B, g), kind, L.surface.kind == "torus"
    raise UsageError(f"unknown structure kind {kind!r}")


def _read_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read {path}: {e}") from None


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_solve(args, rep: Report):
    cfg = rep.config
    if args.spec:
        spec, closed = _spec_from_json(_read_json(args.spec), cfg.grid)
    else:
        spec, closed = _spec_from_flags(args, cfg.grid)
    s = spec.surface
    tol = cfg.tolerance(1e-10 if s.kind == "torus" else 1e-7)
    if args.method == "newton":
        r = solver.solve_newton(spec, 0.0, tol)
    else:
        bracket = "auto" if args.bracket is None else tuple(parse_samples(args.bracket))
        r = solver.solve_monotone(spec, bracket, tol)
    rep.results["solve"] = r.summary()
    rep.results["surface"] = s.describe()
    rep.check("residual", r.residual, tol)
    if closed is not None:
        err = float(np.max(np.abs(r.phi.values - closed)))
        rep.results["closed_form"] = {"phi_mean": float(np.mean(closed))}
        # the constant solution is exact; a conformal background adds discretization error
        flat = not getattr(args, "background_cos", 0.0)
        rep.check("closed_form_error", err, cfg.tolerance(1e-10 if flat else 1e-8))
    if r.bracket is not None:
        p = r.phi.values
        ok = bool(np.all(p >= r.bracket[0] - 1e-12) and np.all(p <= r.bracket[1] + 1e-12))
        rep.flag("iterates_in_bracket", ok)
    rep.raw_csv["phi"] = _field_csv(r.phi)


def _field_csv(fld) -> str:
    with tempfile.TemporaryDirectory() as d:
        p = os.path.join(d, "field.csv")
        write_csv(fld, p)
        with open(p) as src:
            return src.read()


def _spec_from_flags(args, grid):
    if args.sphere:
        chart = _chart(grid)
        m = ConformalMetric.round_sphere(chart)
        coeffs = [float(v) for v in args.B_poly.split(",")] if args.B_poly else [0.0]
        B = realize(3, coeffs, chart).field
        return solver.OperatorSpec(m, args.kappa, (B,)), None
    torus = _torus(grid)
    X, _ = torus.coordinates()
    psi = args.background_cos * np.cos(X)
    m = ConformalMetric.flat(torus, psi)
    B = realize(3, _cubic_coeff(args.B_norm2), torus).field
    closed = None
    if args.kappa < 0 and args.B_norm2 > 0:
        # constant solution on the flat torus, shifted by the conformal factor
        closed = math.log(args.B_norm2 / (4.0 * abs(args.kappa))) / 3.0 - psi
    return solver.OperatorSpec(m, args.kappa, (B,)), closed


def _spec_from_json(obj, grid):
    """{"surface": {...}, "phi": number, "F": number, "B": [re, im] | poly list}."""
    s = surface_from_dict(obj["surface"]) if "surface" in obj else _torus(grid)
    phi = float(obj.get("phi", 0.0))
    if s.kind == "torus":
        m = ConformalMetric.flat(s, phi)
    else:
        m = ConformalMetric.round_sphere(s, phi)
    Bspec = obj.get("B", [0.0, 0.0])
    if s.kind == "torus":
        coeff = complex(*Bspec) if isinstance(Bspec, list) else complex(Bspec)
    else:
        coeff = [complex(*c) if isinstance(c, list) else complex(c) for c in Bspec]
    B = realize(3, coeff, s).field
    F = float(obj.get("F", -2.0))
    return solver.OperatorSpec(m, F, (B,)), None


def cmd_verify(args, rep: Report):
    cfg = rep.config
    a, kind, spectral = load_structure(_read_json(args.structure), cfg.grid)
    if cfg.normalization:
        if cfg.normalization_value is None:
            raise UsageError("--normalization needs --normalization-value")
        a, c = ah.normalized(a, cfg.normalization, cfg.normalization_value)
        rep.results["normalization_factor"] = c
    rep.results["structure"] = {"kind": kind, "surface": a.surface.describe(),
                                "exact": a.is_exact, "weyl": a.is_weyl}
    _verify_structure(a, spectral, rep)


def _verify_structure(a, spectral: bool, rep: Report):
    cfg = rep.config
    et = cfg.tolerance(1e-10 if spectral else 1e-5)
    res = ah.einstein_residuals(a)
    for k in ("divB", "Bgamma", "killing", "const_defect"):
        rep.check(k, res[k], et)
    genus = a.surface.genus
    rep.check("gauss_bonnet", gauss_bonnet_defect(a.metric, genus), cfg.tolerance(1e-6))
    vi = ah.vortex_identity(a, genus, rel_spread=np.inf)
    rep.results["vortex"] = vi
    rep.check("vortex_identity", vi["defect"], cfg.tolerance(1e-6 if not spectral else 1e-9))
    rep.flag("nu_below_bound", vi["nu_below_bound"])
    if a.is_exact or a.is_weyl:
        rep.check("vortex_residual", ah.vortex_residual(a),
                  cfg.tolerance(1e-12 if spectral and a.is_exact else 1e-6))
    inv = ah.complex_scalar_invariant(a)
    rep.results["complex_invariant"] = inv
    rep.check("complex_invariant_spread", inv["spread"], cfg.tolerance(1e-8 if spectral else 1e-6))


def cmd_family(args, rep: Report):
    cfg = rep.config
    k = args.kappa
    if args.which == "sphere":
        fam = families.SphereFamily(k)
        rho = np.logspace(-2, 2, args.samples)
        e = fam.eval(rho)
        rep.table("family", SPHERE_CSV, np.column_stack(
            [rho, e["h_coeff"], e["sR"], e["f"], e["gamma_norm2"]]))
        nu_q = fam.volume_quadrature() * k
        rep.results["family"] = {"kappa": k, "nu": fam.nu, "theta": fam.theta,
                                 "volume": fam.volume(), "volume_quadrature": fam.volume_quadrature(),
                                 "nu_quadrature": nu_q, "S": fam.S, "mu": fam.mu,
                                 "equator_lengths": list(fam.equator_lengths())}
        if args.verify:
            inv = e["sR"] ** 2 + e["f"] ** 2
            rep.check("invariant_closed_form", np.max(np.abs(inv - (k * k + 16))), cfg.tolerance(1e-10))
            rep.check("nu_quadrature", abs(nu_q - fam.nu) / max(1.0, abs(fam.nu)), cfg.tolerance(1e-6))
            if 0 < fam.theta < 0.5 * np.pi:
                _, nu_th = families.theta_conversions(fam.theta)
                rep.check("nu_theta", float(nu_th) - fam.nu, cfg.tolerance(1e-12))
            a = fam.structure(_chart(cfg.grid))
            q = ah.curvature_quantities(a)
            S, _ = a.surface.log_polar()
            exact = fam.eval(np.exp(S))["sR"]
            rep.check("sR_fd_error", ah._imax(q["sR"].values - exact, a.surface), cfg.tolerance(1e-5))
            _verify_structure(a, False, rep)
    else:
        fam = families.TorusFamily(k)
        s = np.linspace(0.0, np.pi, args.samples)
        e = fam.eval(s)
        rep.table("family", TORUS_CSV, np.column_stack(
            [s, e["h_coeff"], e["sR"], e["f"], e["gamma_norm2"]]))
        rep.results["family"] = {"kappa": k, "nu": fam.nu, "volume": fam.volume(), "T": fam.T,
                                 "sR_min": float(e["sR"].min()), "sR_max": float(e["sR"].max())}
        if args.verify:
            inv = e["sR"] ** 2 + e["f"] ** 2
            rep.check("invariant_closed_form", np.max(np.abs(inv - (k * k - 16))), cfg.tolerance(1e-8))
            n = cfg.grid[0] if cfg.grid else 64
            a = fam.structure(fam.lattice(n))
            _verify_structure(a, True, rep)
            vi = rep.results["vortex"]
            rep.check("gamma_norm_vs_nu", 4 * vi["gamma_norm2"] + fam.nu, cfg.tolerance(1e-6))


def cmd_ray(args, rep: Report):
    cfg = rep.config
    torus = _torus(cfg.grid, 64)
    t = parse_samples(args.t)
    B = realize(3, _cubic_coeff(args.B_norm2), torus).field
    reports, cert = solver.ray_solve(ConformalMetric.flat(torus), B, t,
                                     cfg.tolerance(1e-10), kappa=args.kappa)
    rows, worst = [], 0.0
    for ti, r, gap, vol in zip(t, reports, cert.lower_envelope_gap, cert.rescaled_volumes):
        cf = 2 * ti + math.log(args.B_norm2 * 2.0 / (8.0 * abs(args.kappa))) / 3.0
        p = r.phi.values
        worst = max(worst, float(np.max(np.abs(p - cf))))
        rows.append([ti, p.min(), p.max(), cf, gap, vol])
    rep.table("ray", RAY_CSV, rows)
    rep.results["certificate"] = cert.summary()
    rep.results["solves"] = [r.summary() | {"residual_history": None} for r in reports]
    rep.check("closed_form_error", worst, cfg.tolerance(1e-8))
    for k in ("monotone_slack", "lipschitz_slack", "lower_envelope_slack", "upper_envelope_slack"):
        rep.check(k, getattr(cert, k), -1e-9, "ge")
    if args.kappa == -2.0:
        rep.check("lower_envelope_saturation", max(cert.lower_envelope_gap), cfg.tolerance(1e-8))


def cmd_ckmc(args, rep: Report):
    cfg = rep.config
    torus = _torus(cfg.grid, 64)
    B = realize(3, _cubic_coeff(args.B_norm2), torus).field
    tol = cfg.tolerance(1e-10)
    r = solver.solve_ckmc(ConformalMetric.flat(torus), args.c, args.eps, B=B, tol=tol)
    rep.results["solve"] = r.summary()
    rep.check("residual", r.residual, tol)
    target = args.B_norm2 * args.eps / (-2.0 * args.c)
    if target > 0:
        closed = math.log(target) / 3.0
        rep.results["closed_form_phi"] = closed
        rep.check("closed_form_error", np.max(np.abs(r.phi.values - closed)), tol)
    mb = args.bracket_max_B2
    r1 = solver.ckmc_bracket(mb)
    rep.results["bracket"] = {"max_B2": mb, "r1": r1, "exists": r1 is not None,
                              "threshold": 8.0 / 27.0}
    rep.flag("bracket_exists_iff_bound", (r1 is not None) == (mb <= 8.0 / 27.0))
    if r1 is not None:
        rep.check("r1_le_two_thirds", 2.0 / 3.0 - r1, -1e-12, "ge")
        w = solver.ckmc_constant_operator(math.log(r1), -2.0, -1.0, -1, 0.0, mb)
        rep.check("r1_subsolution", w, -1e-12, "ge")
        w0 = solver.ckmc_constant_operator(0.0, -2.0, -1.0, -1, 0.0, mb)
        rep.check("zero_supersolution", -w0, 0.0, "ge")


def cmd_cone(args, rep: Report):
    cfg = rep.config
    t = parse_samples(args.t)
    if args.structure:
        obj = _read_json(args.structure)
    else:
        obj = {"kind": "exact-torus", "coefficient": [1.0 / math.sqrt(2.0), 0.0]}
    rng = np.random.default_rng(cfg.seed)
    if obj.get("kind") == "hyperbolic-plane":
        base = cone.ConeBase.hyperbolic()
        pts = np.column_stack([rng.uniform(-1, 1, args.points), rng.uniform(0.6, 2.0, args.points)])
    else:
        a, _, _ = load_structure(obj, cfg.grid)
        if obj.get("kind") == "exact-torus" and "kappa" in obj:
            a, _ = ah.normalized(a, "fix-uR", float(obj["kappa"]))
        base = cone.ConeBase.from_structure(a)
        pts = rng.uniform(0.0, 2.0 * np.pi, (args.points, 2))
    grid = cone.ConeGrid(base, pts, t)
    checks = set(args.check.split(",")) if args.check != "all" else {
        "connection", "metrics", "det", "hessian", "level", "dust", "monge-ampere"}
    rep.results["base"] = {"label": base.label, "uR": base.uR, "points": pts}
    samples = list(grid.samples())
    if "connection" in checks:
        rep.check("connection_curvature", max(cone.connection_curvature(base, p) for p in samples),
                  cfg.tolerance(1e-8))
        rep.check("radial_derivative", max(cone.radial_derivative_defect(base, p) for p in samples),
                  cfg.tolerance(1e-12))
    if "metrics" in checks or "det" in checks:
        ms = cone.cone_metrics(grid)
        rep.flag("g_lorentzian_f_positive",
                 all(m["g_signature"] == (1, 2) and m["f_positive"] for m in ms))
        rep.table("cone", CONE_CSV, [[*m["point"], m["F"], *m["g_eigenvalues"], *m["f_eigenvalues"]]
                                     for m in ms])
    if "det" in checks:
        d = cone.determinant_identities(grid)
        rep.check("detg_defect", d["detg_defect"], cfg.tolerance(1e-10))
        rep.check("detf_defect", d["detf_defect"], cfg.tolerance(1e-10))
    if "hessian" in checks:
        rep.check("hessian", max(cone.hessian_defect(grid, p) for p in samples), cfg.tolerance(1e-6))
    if "level" in checks:
        lv = cone.level_set_checks(grid)
        rep.check("f_total_geodesy", lv["f_total_geodesy"], cfg.tolerance(1e-8))
        rep.check("g_umbilicity", lv["g_umbilicity"], cfg.tolerance(1e-8))
        rep.check("f_norm_dt_defect", lv["f_norm_dt_defect"], cfg.tolerance(1e-12))
        rep.check("f_parallel_dt", lv["f_parallel_dt"], cfg.tolerance(1e-8))
    if "dust" in checks:
        du = cone.dust_residual(grid)
        rep.results["B_vanishes"] = du["B_vanishes"]
        rep.check("dust", du["residual"], cfg.tolerance(1e-5))
        rep.check("energy_condition_min", cone.energy_condition(grid, seed=cfg.seed), -1e-8, "ge")
    if "monge-ampere" in checks:
        tau = parse_samples(args.tau)
        ma = cone.monge_ampere_potential(args.C, tau)
        rep.results["monge_ampere"] = {"C": args.C, "dPsi_fd_defect": ma["dPsi_fd_defect"],
                                       "identity_defect": ma["identity_defect"]}
        rep.check("monge_ampere_det", ma["det_defect"], cfg.tolerance(1e-8))
        rep.check("monge_ampere_dPsi", ma["dPsi_fd_defect"], cfg.tolerance(1e-8))
        rep.table("monge_ampere", MONGE_AMPERE_CSV,
                  np.column_stack([ma["tau"], ma["Psi"], ma["dPsi"], ma["d2Psi"]]))


def cmd_geodesic(args, rep: Report):
    cfg = rep.config
    fam = families.SphereFamily(args.kappa)
    geom = fam.geometry()
    T = 2.0 * np.pi * args.periods
    tr = families.magnetic_geodesic(geom, start=(args.rho0, 0.0), T=T, steps=args.steps,
                                    scale=args.scale)
    rho = np.hypot(tr.points[:, 0], tr.points[:, 1])
    kg = tr.kappa_geo[np.isfinite(tr.kappa_geo)]
    rep.results["trajectory"] = {"start": [args.rho0, 0.0], "T": T, "steps": args.steps,
                                 "scale": args.scale, "energy_drift": tr.energy_drift,
                                 "radial_drift": float(np.max(np.abs(rho - args.rho0))),
                                 "kappa_geo_mean": float(np.mean(kg))}
    rep.table("geodesic", GEODESIC_CSV,
              np.column_stack([tr.t, tr.points, tr.energy, tr.kappa_geo]))
    rep.check("radial_drift_per_period", np.max(np.abs(rho - args.rho0)) / args.periods,
              cfg.tolerance(1e-8))
    rep.check("energy_drift", tr.energy_drift, cfg.tolerance(1e-8))
    if tr.kappa_expected is not None and args.scale == 1.0:
        ke = tr.kappa_expected[np.isfinite(tr.kappa_geo)]
        rep.results["trajectory"]["kappa_expected"] = float(np.mean(ke))
        rep.check("kappa_geo_vs_expected", np.max(np.abs(kg - ke)), cfg.tolerance(1e-6))
        rep.check("kappa_geo_constancy", np.max(kg) - np.min(kg), cfg.tolerance(1e-6))


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _common(p):
    p.add_argument("--grid", help="resolution, N or NxM")
    p.add_argument("--tol", type=float, help="override every check tolerance")
    p.add_argument("--out", help="output stem; writes STEM.json and STEM[-name].csv")
    p.add_argument("--emit", choices=("json", "csv", "both"), default="json")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--normalization", choices=("fix-volume", "fix-uR"))
    p.add_argument("--normalization-value", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ahsolve", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve W(phi) = 0")
    _common(p)
    where = p.add_mutually_exclusive_group()
    where.add_argument("--torus", action="store_true", help="flat square torus (default)")
    where.add_argument("--sphere", action="store_true", help="round sphere chart")
    p.add_argument("--spec", help="operator data as JSON")
    p.add_argument("--kappa", type=float, default=-2.0, help="constant F")
    p.add_argument("--B-norm2", dest="B_norm2", type=float, default=4.0,
                   help="constant flat |B|^2 of the cubic term (torus)")
    p.add_argument("--B-poly", dest="B_poly", help="sphere: polynomial coefficients of B, comma list")
    p.add_argument("--background-cos", type=float, default=0.0,
                   help="amplitude A of the torus background exp(A cos x) flat")
    p.add_argument("--method", choices=("newton", "monotone"), default="newton")
    p.add_argument("--bracket", help="monotone bracket lo,hi (default auto)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="Einstein and vortex checks of a structure")
    _common(p)
    p.add_argument("--structure", required=True, help="structure JSON")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("family", help="closed-form Einstein-Weyl families")
    _common(p)
    p.add_argument("which", choices=("sphere", "torus"))
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--verify", action="store_true", help="also run the grid checks")
    p.add_argument("--samples", type=int, default=201)
    p.set_defaults(func=cmd_family)

    p = sub.add_parser("ray", help="ray deformation t -> exp(3t) B on the torus")
    _common(p)
    p.add_argument("--t", default="0,0.5,1,2")
    p.add_argument("--kappa", type=float, default=-2.0)
    p.add_argument("--B-norm2", dest="B_norm2", type=float, default=8.0)
    p.set_defaults(func=cmd_ray)

    p = sub.add_parser("ckmc", help="CKMC equation on the flat torus and bracket arithmetic")
    _common(p)
    p.add_argument("--c", type=float, default=-1.0)
    p.add_argument("--eps", type=int, choices=(-1, 1), default=1)
    p.add_argument("--B-norm2", dest="B_norm2", type=float, default=0.2)
    p.add_argument("--bracket-max-B2", type=float, default=0.2)
    p.set_defaults(func=cmd_ckmc)

    p = sub.add_parser("cone", help="cone metrics over an exact structure")
    _common(p)
    p.add_argument("--structure", help="structure JSON (exact torus or hyperbolic-plane)")
    p.add_argument("--t", default="-0.5:0.5:0.05")
    p.add_argument("--points", type=int, default=3, help="random base points")
    p.add_argument("--check", default="all",
                   help="all or a comma list of connection,metrics,det,hessian,level,dust,monge-ampere")
    p.add_argument("--C", type=float, default=2.0, help="Monge-Ampere constant")
    p.add_argument("--tau", default="-0.6:0.6:0.1")
    p.set_defaults(func=cmd_cone)

    p = sub.add_parser("geodesic", help="magnetic geodesics of the sphere family")
    _common(p)
    p.add_argument("--kappa", type=float, default=3.0)
    p.add_argument("--rho0", type=float, default=1.0, help="start at (rho0, 0)")
    p.add_argument("--periods", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=10000)
    p.add_argument("--scale", type=float, default=1.0, help="magnetic term multiplier")
    p.set_defaults(func=cmd_geodesic)
    return ap


_RANGE_FLAGS = ("--t", "--tau", "--bracket")


def _glue_ranges(argv):
    """Let range values start with a minus sign: ``--t -0.5:0.5:0.05``."""
    out, it = [], iter(argv)
    for a in it:
        if a in _RANGE_FLAGS:
            nxt = next(it, None)
            out.append(a if nxt is None else f"{a}={nxt}")
        else:
            out.append(a)
    return out


def run(argv, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    argv = list(argv)
    ap = build_parser()
    try:
        args = ap.parse_args(_glue_ranges(argv))
    except SystemExit as e:
        return int(e.code or 0)
    try:
        cfg = RunConfig(grid=parse_grid(args.grid), tol=args.tol, out=args.out, emit=args.emit,
                        seed=args.seed, normalization=args.normalization,
                        normalization_value=args.normalization_value,
                        threads=os.environ.get("AHSOLVE_THREADS"))
    except UsageError as e:
        stderr.write(f"ahsolve: {e}\n")
        return 2
    rep = Report(["ahsolve", *argv], cfg)
    np.random.seed(cfg.seed)
    code = 0
    try:
        args.func(args, rep)
    except UsageError as e:
        stderr.write(f"ahsolve: {e}\n")
        return 2
    except (solver.SolverError, families.FamilyError, cone.ConeError, ah.NotEinstein,
            ValueError) as e:
        rep.errors.append(f"{type(e).__name__}: {e}")
        code = 3
    _emit(rep, stdout)
    failed = sorted(k for k, c in rep.checks.items() if not c["pass"])
    if code == 0 and failed:
        code = 1
    status = "PASS" if code == 0 else "FAIL"
    detail = (" failed: " + ", ".join(failed)) if failed else ""
    if rep.errors:
        detail += " error: " + "; ".join(rep.errors)
    stderr.write(f"ahsolve {args.command}: {status}{detail}\n")
    return code


def main(argv=None) -> int:
    return run(sys.argv[1:] if argv is None else list(argv))


if __name__ == "__main__":
    sys.exit(main())
