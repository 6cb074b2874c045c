"""The semilinear conformal-factor operator and its solvers.

For a background metric ``h``, a function ``F`` and tensors ``B`` of
degree ``k`` the operator is

    W(h, F, B)(phi) = Lap_h phi - sR_h + F e^phi + sum_k 2^(1-k) e^((1-k) phi) |B|^2_h

and ``W(phi) = 0`` says that ``e^phi h`` has the prescribed curvature data.
A cubic term has ``k = 3``, a vector field ``k = -1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.linalg import solve_banded
from scipy.sparse.linalg import LinearOperator, cg, gmres

from .differentials import KDifferential
from .grids import (FD_ACCURACY, ConformalMetric, ScalarField, SurfaceMismatch, SymTensorField,
                    _stencils,
                    integrate, laplacian, scalar_curvature, tensor_norm2)


class SolverError(RuntimeError):
    pass


class DivergenceError(SolverError):
    pass


class SingularLinearization(SolverError):
    pass


class NoSolution(SolverError):
    pass


class BracketError(SolverError):
    pass


# --------------------------------------------------------------------------
# operator
# --------------------------------------------------------------------------

def _as_tensor(t):
    return t.field if isinstance(t, KDifferential) else t


@dataclass(frozen=True, eq=False)
class OperatorSpec:
    """Data (h, F, B_1, ..., B_n) of the operator W."""

    background: ConformalMetric
    F: object = 0.0
    terms: tuple = ()

    def __post_init__(self):
        s = self.background.surface
        F = self.F.values if isinstance(self.F, ScalarField) else self.F
        if isinstance(self.F, ScalarField) and self.F.surface != s:
            raise SurfaceMismatch("F lives on another surface")
        object.__setattr__(self, "F", np.broadcast_to(np.asarray(F, float), s.shape).copy())
        terms = tuple(_as_tensor(t) for t in self.terms)
        for t in terms:
            if not isinstance(t, SymTensorField):
                raise TypeError("terms must be tensor fields or differentials")
            if t.surface != s:
                raise SurfaceMismatch("term lives on another surface")
        degrees = {t.degree for t in terms if np.any(t.comps)}
        if 3 in degrees and -1 in degrees:
            raise ValueError("an Einstein structure has a cubic term or a vector term, not both")
        object.__setattr__(self, "terms", terms)

    @property
    def surface(self):
        return self.background.surface

    def norms(self):
        return [(t.degree, tensor_norm2(t, self.background)) for t in self.terms]

    def zeroth_order(self, phi):
        """G(phi) and dG/dphi, with W(phi) = Lap_h phi + G(phi)."""
        sR = scalar_curvature(self.background).values
        eph = np.exp(phi)
        G = -sR + self.F * eph
        dG = self.F * eph
        for k, n2 in self.norms():
            e = 2.0 ** (1 - k) * np.exp((1 - k) * phi) * n2
            G = G + e
            dG = dG + (1 - k) * e
        return G, dG

    def rescaled(self, mu, lam) -> "OperatorSpec":
        """Data (e^mu h, e^lam F, e^((1-k) lam / 2) B)."""
        s = self.surface
        mu = _arr(mu, s)
        lam = _arr(lam, s)
        terms = tuple(SymTensorField(s, t.degree, t.comps * np.exp((1 - t.degree) * lam / 2), t.name)
                      for t in self.terms)
        return OperatorSpec(self.background.rescaled(mu), np.exp(lam) * self.F, terms)


def _arr(f, surface):
    v = f.values if isinstance(f, ScalarField) else f
    return np.broadcast_to(np.asarray(v, float), surface.shape)


def apply(spec: OperatorSpec, phi) -> ScalarField:
    """W(h, F, B)(phi) with all norms taken in the background metric."""
    phi = _arr(phi, spec.surface)
    G, _ = spec.zeroth_order(phi)
    return ScalarField(spec.surface, laplacian(phi, spec.background).values + G, "W")


def frechet(spec: OperatorSpec, phi, v) -> ScalarField:
    """Derivative of W at phi in direction v."""
    phi, v = _arr(phi, spec.surface), _arr(v, spec.surface)
    _, dG = spec.zeroth_order(phi)
    return ScalarField(spec.surface, laplacian(v, spec.background).values + dG * v, "DW")


def scaling_residual(spec: OperatorSpec, phi, mu, lam) -> float:
    """Max-norm of e^mu W(rescaled)(phi - mu - lam) - W(phi) + Lap_h lam."""
    s = spec.surface
    phi, mu, lam = _arr(phi, s), _arr(mu, s), _arr(lam, s)
    lhs = np.exp(mu) * apply(spec.rescaled(mu, lam), phi - mu - lam).values
    rhs = apply(spec, phi).values - laplacian(lam, spec.background).values
    return float(np.max(np.abs(lhs - rhs)[s.interior()]))


# --------------------------------------------------------------------------
# linear solves for Lap0 u + V u = b (coordinate Laplacian)
# --------------------------------------------------------------------------

def _active(surface):
    """Nodes where the equation is imposed; sphere-chart edge rows are pinned."""
    return surface.interior()


def _solve_linear(surface, V, b, rtol=1e-13):
    if surface.kind == "torus":
        return _solve_torus(surface, V, b, rtol)
    return _solve_sphere(surface, V, b, rtol)


def _solve_torus(T, V, b, rtol):
    shape, n = T.shape, V.size
    symbol = T.lap0_symbol()
    if np.max(np.abs(V)) < 1e-300:
        raise SingularLinearization("linearization is the bare Laplacian")
    definite = np.all(V <= 0)
    c = np.mean(np.abs(V))

    def matvec(u):
        u = u.reshape(shape)
        return (-T.lap0(u) - V * u).ravel()

    def precond(r):
        rh = np.fft.rfft2(r.reshape(shape))
        return np.fft.irfft2(rh / (-symbol + c), s=shape).ravel()

    A = LinearOperator((n, n), matvec=matvec, dtype=float)
    M = LinearOperator((n, n), matvec=precond, dtype=float)
    if definite:
        u, info = cg(A, -b.ravel(), rtol=rtol, atol=0.0, M=M, maxiter=2000)
    else:
        u, info = gmres(A, -b.ravel(), rtol=rtol, atol=0.0, M=M, restart=60, maxiter=200)
    if info != 0:
        raise SingularLinearization(f"linear solve did not converge (info={info})")
    return u.reshape(shape)


def _solve_sphere(C, V, b, rtol):
    """Dirichlet problem on the interior rows; edge rows stay fixed.

    Preconditioned by exact solves of the angle-averaged operator, which
    decouples into one banded radial system per Fourier mode.
    """
    m, stencil, _ = _stencils(2, FD_ACCURACY)
    ni = C.n_rho - 2 * m
    shape = (ni, C.n_ang)
    Vi = V[m:-m]
    vbar = Vi.mean(axis=1)
    ks = C._ang_wavenumbers()
    st = stencil / C.ds**2

    def pad(u):
        full = np.zeros(C.shape)
        full[m:-m] = u.reshape(shape)
        return full

    def matvec(u):
        return (C.lap0(pad(u))[m:-m] + Vi * u.reshape(shape)).ravel()

    # banded storage: ab[m - off, j] holds the coefficient of u_j in row j - off;
    # entries falling outside the matrix are ignored by solve_banded
    bands = []
    for k in ks:
        ab = np.zeros((2 * m + 1, ni))
        for off, c in zip(range(-m, m + 1), st):
            ab[m - off] = c
        ab[m] += vbar - k**2
        bands.append(ab)

    def precond(r):
        rh = np.fft.rfft(r.reshape(shape), axis=1)
        out = np.empty_like(rh)
        for j, ab in enumerate(bands):
            out[:, j] = solve_banded((m, m), ab, rh[:, j])
        return np.fft.irfft(out, n=C.n_ang, axis=1).ravel()

    n = ni * C.n_ang
    A = LinearOperator((n, n), matvec=matvec, dtype=float)
    M = LinearOperator((n, n), matvec=precond, dtype=float)
    # the exp(L) range of the chart stalls GMRES near 1e-12; Newton needs less
    rtol = max(rtol, 1e-10)
    u, info = gmres(A, b[m:-m].ravel(), rtol=rtol, atol=0.0, M=M, restart=40, maxiter=100)
    if info != 0:
        raise SingularLinearization(f"linear solve did not converge (info={info})")
    return pad(u)


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

@dataclass
class SolveReport:
    phi: ScalarField
    residual_history: list
    iterations: int
    method: str
    bracket: tuple | None = None
    bound_certificate: dict = field(default_factory=dict)

    @property
    def residual(self) -> float:
        return self.residual_history[-1]

    def summary(self) -> dict:
        p = self.phi.values
        return {"method": self.method, "iterations": self.iterations,
                "residual": self.residual,
                "residual_history": [float(r) for r in self.residual_history],
                "phi_min": float(p.min()), "phi_max": float(p.max()),
                "phi_mean": float(p.mean()),
                "bracket": None if self.bracket is None else [float(c) for c in self.bracket],
                "bound_certificate": self.bound_certificate}


def _default_tol(surface):
    return 1e-10 if surface.kind == "torus" else 1e-7


def _max_res(W, surface):
    return float(np.max(np.abs(W[_active(surface)])))


def _newton(metric, zeroth, phi0, tol, max_iter=60, label="newton"):
    """Damped Newton for Lap_h phi + G(phi) = 0 with backtracking on the max-norm."""
    s = metric.surface
    eL = np.exp(metric.log_factor)
    phi = np.array(_arr(phi0, s), dtype=float)

    def residual(p):
        G, dG = zeroth(p)
        return laplacian(p, metric).values + G, dG

    W, dG = residual(phi)
    res = _max_res(W, s)
    history = [res]
    it = 0
    while res > tol:
        if it >= max_iter:
            raise DivergenceError(f"{label}: no convergence after {max_iter} iterations "
                                  f"(residual {res:.3e})")
        V = eL * dG
        if np.max(np.abs(V)) < 1e-300:
            raise SingularLinearization("linearization is the bare Laplacian")
        delta = _solve_linear(s, V, -eL * W)
        step = 1.0
        for _ in range(31):
            trial = phi + step * delta
            with np.errstate(over="ignore", invalid="ignore"):
                Wt, dGt = residual(trial)
            rt = _max_res(Wt, s)
            if np.isfinite(rt) and rt < res:
                break
            step *= 0.5
        else:
            raise DivergenceError(f"{label}: line search failed at residual {res:.3e}")
        phi, W, dG, res = trial, Wt, dGt, rt
        history.append(res)
        it += 1
    return phi, history, it


def _check_solvable(spec):
    """Detect the case with no phi-dependence at all: F = 0 and only k = 1 terms."""
    if np.any(spec.F):
        return
    if any(k != 1 for k, _ in spec.norms()):
        return
    G, _ = spec.zeroth_order(np.zeros(spec.surface.shape))
    total = integrate(G, spec.background)
    if abs(total) > 1e-12:
        raise NoSolution("F = 0 with only degree-1 terms: W(phi) = Lap phi + g with "
                         f"integral of g = {total:.3e} != 0, so there is no solution")
    raise SingularLinearization("F = 0 with only degree-1 terms: solutions are not unique")


def solve_newton(spec: OperatorSpec, phi0=0.0, tol: float | None = None,
                 max_iter: int = 60) -> SolveReport:
    """Damped Newton iteration for W(phi) = 0."""
    tol = _default_tol(spec.surface) if tol is None else tol
    _check_solvable(spec)
    phi, hist, it = _newton(spec.background, spec.zeroth_order, phi0, tol, max_iter)
    rep = SolveReport(ScalarField(spec.surface, phi, "phi"), hist, it, "newton")
    rep.bound_certificate = bound_certificate(spec, phi)
    return rep


# --------------------------------------------------------------------------
# bracket arithmetic and the monotone scheme
# --------------------------------------------------------------------------

def positive_root_bound(p: int, a: float, b: float):
    """Unique positive root of r^p - a r^(p-1) - b, with a <= r <= a + b^(1/p)."""
    if p < 1 or a <= 0 or b <= 0:
        raise ValueError("need p >= 1, a > 0, b > 0")
    lo, hi = a, a + b ** (1.0 / p)
    if p == 1:
        return float(a + b), lo, hi

    def g(r):
        return r**p - a * r ** (p - 1) - b

    root = optimize.brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return root, lo, hi


def _single_power(spec):
    terms = [(k, n2) for k, n2 in spec.norms() if np.any(n2)]
    if len(terms) > 1:
        raise BracketError("bracket arithmetic handles one tensor term")
    if terms and terms[0][0] < 2:
        raise BracketError("bracket arithmetic needs a term of degree >= 2")
    return terms[0] if terms else (None, None)


def auto_bracket(spec: OperatorSpec):
    """Constant sub- and supersolutions from the extrema of sR, F and |B|^2.

    Needs F < 0 and sR < 0 everywhere. Returns (c_minus, c_plus).
    """
    s = spec.surface
    sR = scalar_curvature(spec.background).values[_active(s)]
    F = spec.F[_active(s)]
    if np.any(F >= 0):
        raise BracketError("F must be negative everywhere")
    if np.any(sR >= 0):
        raise BracketError("auto-bracket needs background curvature negative everywhere "
                           "(impossible on a sphere or torus by Gauss-Bonnet)")
    k, n2 = _single_power(spec)
    Q, kbar = sR.max(), F.min()
    q, K = sR.min(), F.max()
    c_minus = np.log(Q / kbar)
    a = q / K
    if k is None:
        return c_minus, np.log(a)
    P = n2[_active(s)].max()
    r1, _, _ = positive_root_bound(k, a, 2.0 ** (1 - k) * P / abs(K))
    return c_minus, np.log(r1)


def bound_certificate(spec: OperatorSpec, phi) -> dict:
    """Evaluate the a priori bounds on e^phi that hold when F < 0 and sR < 0."""
    s = spec.surface
    act = _active(s)
    sR = scalar_curvature(spec.background).values[act]
    F = spec.F[act]
    out = {"applicable": bool(np.all(F < 0) and np.all(sR < 0))}
    try:
        k, n2 = _single_power(spec)
    except BracketError:
        out["applicable"] = False
        return out
    eph = np.exp(np.asarray(phi)[act])
    if np.all(F < 0):
        K = F.max()
        if k is not None:
            P = n2[act].max()
            # lower bound from the cubic term alone
            low = 2.0 ** ((1 - k) / k) * np.abs(F) ** (-1.0 / k) * n2[act] ** (1.0 / k)
            out["term_lower_bound_slack"] = float(np.min(eph - low))
        if out["applicable"]:
            lower = sR.max() / F.min()
            upper = sR.min() / K
            if k is not None:
                upper += 2.0 ** ((1 - k) / k) * abs(K) ** (-1.0 / k) * P ** (1.0 / k)
            out.update(lower=float(lower), upper=float(upper),
                       lower_slack=float(eph.min() - lower),
                       upper_slack=float(upper - eph.max()))
    return out


def solve_monotone(spec: OperatorSpec, bracket="auto", tol: float | None = None,
                   max_iter: int = 5000) -> SolveReport:
    """Monotone iteration between constant sub- and supersolutions.

    Each step solves (Lap_h - Lam) phi_new = -(G(phi) + Lam phi) with Lam
    dominating -dG/dphi on the current bracket, so that G + Lam phi is
    increasing there. The sequence started at the supersolution decreases
    and the one started at the subsolution increases; both squeeze the
    solution, and Lam shrinks with the bracket.
    """
    s = spec.surface
    tol = _default_tol(s) if tol is None else tol
    act = _active(s)
    if np.any(spec.F[act] >= 0):
        raise BracketError("F must be negative everywhere")
    if isinstance(bracket, str):
        if bracket != "auto":
            raise ValueError("bracket must be 'auto' or a pair of constants")
        c_lo, c_hi = auto_bracket(spec)
    else:
        c_lo, c_hi = map(float, bracket)
    if c_lo > c_hi:
        raise BracketError("need c_minus <= c_plus")
    for c, sign, name in ((c_lo, 1.0, "sub"), (c_hi, -1.0, "super")):
        W = apply(spec, np.full(s.shape, c)).values
        # roundoff allowance: the bracket constants can be exact roots of W
        bad = (sign * W < -1e-10 * (1.0 + np.abs(W))) & act
        if bad.any():
            idx = tuple(int(i) for i in np.argwhere(bad)[0])
            raise BracketError(f"constant {c:.6g} is not a {name}solution: "
                               f"W = {W[idx]:.3e} at grid point {idx}")
    eL = np.exp(spec.background.log_factor)
    upper = np.full(s.shape, c_hi)
    lower = np.full(s.shape, c_lo)
    history, it = [], 0
    inside = True

    def step(phi, lam, G):
        # (Lap_h - Lam) new = -(G + Lam phi), written for the increment so
        # that pinned sphere-chart rows keep their values
        W = laplacian(phi, spec.background).values + G
        return phi + _solve_linear(s, -lam * eL, -eL * W)

    while True:
        G, _ = spec.zeroth_order(upper)
        res = _max_res(laplacian(upper, spec.background).values + G, s)
        history.append(res)
        inside &= bool(np.all(upper[act] >= c_lo - 1e-12) and np.all(upper[act] <= c_hi + 1e-12))
        if res <= tol:
            break
        if it >= max_iter:
            raise DivergenceError(f"monotone: residual {res:.3e} after {max_iter} iterations")
        # dominate -dG/dphi on the current bracket [lower, upper]
        lam = 1e-3
        for c in np.linspace(lower[act].min(), upper[act].max(), 17):
            _, dG = spec.zeroth_order(np.full(s.shape, c))
            lam = max(lam, float(np.max(-dG[act])))
        Gl, _ = spec.zeroth_order(lower)
        upper, lower = step(upper, lam, G), step(lower, lam, Gl)
        it += 1
    phi = upper
    rep = SolveReport(ScalarField(s, phi, "phi"), history, it, "monotone", (c_lo, c_hi))
    rep.bound_certificate = bound_certificate(spec, phi)
    rep.bound_certificate["iterates_in_bracket"] = inside
    return rep


# --------------------------------------------------------------------------
# CKMC variant
# --------------------------------------------------------------------------

def ckmc_zeroth(background, c, eps, H=None, B=None):
    s = background.surface
    sR = scalar_curvature(background).values
    H2 = tensor_norm2(_as_tensor(H), background) if H is not None else np.zeros(s.shape)
    B2 = tensor_norm2(_as_tensor(B), background) if B is not None else np.zeros(s.shape)

    def zeroth(phi):
        e1, e2, em2 = np.exp(phi), np.exp(2 * phi), np.exp(-2 * phi)
        G = -sR + 2 * c * e1 - 0.25 * eps * e2 * H2 + eps * em2 * B2
        dG = 2 * c * e1 - 0.5 * eps * e2 * H2 - 2 * eps * em2 * B2
        return G, dG

    return zeroth


def ckmc_apply(background, c, eps, H=None, B=None, phi=0.0) -> ScalarField:
    s = background.surface
    phi = _arr(phi, s)
    G, _ = ckmc_zeroth(background, c, eps, H, B)(phi)
    return ScalarField(s, laplacian(phi, background).values + G, "ckmc")


def solve_ckmc(background, c: float, eps: int, H=None, B=None, phi0=0.0,
               tol: float | None = None) -> SolveReport:
    """Newton solve of Lap phi - sR + 2c e^phi - (eps/4) e^(2phi)|H|^2 + eps e^(-2phi)|B|^2 = 0."""
    if eps not in (-1, 1):
        raise ValueError("eps must be +1 or -1")
    if H is not None and _as_tensor(H).degree != -1:
        raise ValueError("H must be a vector field (degree -1)")
    if B is not None and _as_tensor(B).degree != 3:
        raise ValueError("B must be cubic (degree 3)")
    tol = _default_tol(background.surface) if tol is None else tol
    phi, hist, it = _newton(background, ckmc_zeroth(background, c, eps, H, B), phi0, tol,
                            label="ckmc")
    return SolveReport(ScalarField(background.surface, phi, "phi"), hist, it, "ckmc-newton")


def ckmc_bracket(max_B2: float):
    """Smallest positive zero r1 of r^3 - r^2 + max|B|^2 / 2, or None.

    With background curvature -2, eps = -1 and c = -1, the constants 0 and
    log r1 are a super- and a subsolution.
    """
    if max_B2 < 0:
        raise ValueError("max |B|^2 must be non-negative")
    if max_B2 == 0:
        return 1.0
    half = 0.5 * max_B2
    # p has a local minimum at r = 2/3 with value half - 4/27
    if half - 4.0 / 27.0 > 0:
        return None
    return optimize.brentq(lambda r: r**3 - r**2 + half, 0.0, 2.0 / 3.0, xtol=1e-15)


def ckmc_constant_operator(phi, sR, c, eps, H2, B2):
    """The CKMC operator evaluated on constants (Laplacian term absent)."""
    return -sR + 2 * c * np.exp(phi) - 0.25 * eps * np.exp(2 * phi) * H2 \
        + eps * np.exp(-2 * phi) * B2


# --------------------------------------------------------------------------
# rays
# --------------------------------------------------------------------------

@dataclass
class RayCertificate:
    t: list
    monotone_slack: float
    lipschitz_slack: float
    lower_envelope_slack: float
    upper_envelope_slack: float
    lower_envelope_gap: list
    rescaled_volumes: list

    def holds(self, slack=-1e-9) -> bool:
        return min(self.monotone_slack, self.lipschitz_slack, self.lower_envelope_slack,
                   self.upper_envelope_slack) >= slack

    def summary(self) -> dict:
        return {k: getattr(self, k) for k in ("t", "monotone_slack", "lipschitz_slack",
                                              "lower_envelope_slack", "upper_envelope_slack",
                                              "lower_envelope_gap", "rescaled_volumes")}


def ray_solve(background: ConformalMetric, B, t_list, tol: float | None = None,
              kappa: float = -2.0):
    """Solve W(h, kappa, e^(3t) B)(phi_t) = 0 along t, warm-starting each solve."""
    B = _as_tensor(B)
    if not np.any(B.comps):
        raise ValueError("B must not vanish identically")
    t_list = [float(t) for t in t_list]
    if any(t < 0 for t in t_list) or t_list != sorted(t_list):
        raise ValueError("t values must be sorted and non-negative")
    s = background.surface
    reports = []
    phi = np.zeros(s.shape)
    for t in t_list:
        Bt = SymTensorField(s, B.degree, np.exp(3 * t) * B.comps, B.name)
        spec = OperatorSpec(background, kappa, (Bt,))
        rep = solve_newton(spec, phi, tol)
        phi = rep.phi.values
        reports.append(rep)
    act = _active(s)
    normB = np.sqrt(tensor_norm2(B, background))
    mono, lip = np.inf, np.inf
    for (t1, r1), (t2, r2) in zip(zip(t_list, reports), zip(t_list[1:], reports[1:])):
        d = (r2.phi.values - r1.phi.values)[act]
        mono = min(mono, float(d.min()))
        lip = min(lip, float(2 * (t2 - t1) - np.abs(d).max()))
    lo_slack, up_slack, gaps, vols = np.inf, np.inf, [], []
    for t, r in zip(t_list, reports):
        p = r.phi.values[act]
        with np.errstate(divide="ignore"):
            lower = np.maximum(0.0, 2 * t + (2.0 / 3.0) * np.log(normB[act]) - np.log(2.0))
        lo_slack = min(lo_slack, float((p - lower).min()))
        up_slack = min(up_slack, float((2 * t - p).min()))
        gaps.append(float(np.max(np.abs(p - lower))))
        vols.append(float(np.exp(-2 * t) * integrate(np.exp(r.phi.values), background)))
    cert = RayCertificate(t_list, mono if np.isfinite(mono) else 0.0,
                          lip if np.isfinite(lip) else 0.0, lo_slack, up_slack, gaps, vols)
    return reports, cert
