"""The cone over an exact negative Einstein AH structure.

On ``M x R`` with fiber coordinate ``t`` (the radial field is ``d/dt``)
the structure ``(h, B)`` with constant ``uR < 0`` induces

* a flat torsion-free connection with coefficients
  ``G^k_ij = LC(h)^k_ij - B^k_ij / 2``, ``G^t_ij = -(uR/2) h_ij``,
  ``G^k_it = delta^k_i`` and ``G^t_tt = 1``;
* a Lorentzian metric ``g = v (dt^2 + (uR/2) h)`` with
  ``v = (uR/2)^(-2/3) exp(2t)`` (real cube root);
* a Riemannian Hessian metric ``f = 3 dt^2 - (3 uR/2) h``, the Hessian of
  ``F = -3t - 3 log|(uR/2)^(-1/3)|`` for that connection.

All geometry is evaluated pointwise from callables, and derivatives are
4th-order centered differences in ``(x, y, t)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate as sint

from .ah import AHStructure, curvature_quantities
from .grids import tensor_norm2


class ConeError(ValueError):
    pass


_D1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_OFF = np.array([-2, -1, 0, 1, 2])


def _derivs(fun, p, steps):
    """4th-order centered derivatives of ``fun`` along the three axes."""
    p = np.asarray(p, dtype=float)
    out = []
    for axis, h in enumerate(steps):
        acc = 0.0
        for o, c in zip(_OFF, _D1):
            if c:
                q = p.copy()
                q[axis] += o * h
                acc = acc + c * np.asarray(fun(q))
        out.append(acc / h)
    return np.stack(out)


def _cbrt_real(x):
    return np.sign(x) * np.abs(x) ** (1.0 / 3.0)


# --------------------------------------------------------------------------
# base data
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ConeBase:
    """Pointwise base data: ``L(x, y)``, its gradient, the four
    components of ``B`` (coordinate, lowered with ``h = exp(L) delta``)
    and the constant ``uR``."""

    L: object
    dL: object
    B: object
    uR: float
    label: str = "custom"

    def __post_init__(self):
        if not self.uR < 0:
            raise ConeError("the cone construction needs uR < 0")

    def B_full(self, x):
        b = np.asarray(self.B(x), dtype=float)
        T = np.empty((2, 2, 2))
        for i in range(2):
            for j in range(2):
                for k in range(2):
                    T[i, j, k] = b[i + j + k]
        return T

    def B_norm2(self, x):
        b = np.asarray(self.B(x), dtype=float)
        return float(np.exp(-3.0 * self.L(x)) * (b[0] ** 2 + 3 * b[1] ** 2 + 3 * b[2] ** 2 + b[3] ** 2))

    @classmethod
    def hyperbolic(cls):
        """Upper half-plane y > 0 with metric y^-2 (dx^2 + dy^2) and B = 0."""
        return cls(lambda x: -2.0 * np.log(x[1]),
                   lambda x: np.array([0.0, -2.0 / x[1]]),
                   lambda x: np.zeros(4), -2.0, "hyperbolic half-plane")

    @classmethod
    def from_structure(cls, a: AHStructure, rel_tol: float = 1e-8):
        """Fourier interpolation of an exact torus structure with constant uR."""
        s = a.surface
        if s.kind != "torus":
            raise ConeError("pointwise interpolation is implemented for tori")
        if not a.is_exact:
            raise ConeError("the cone needs an exact structure (gamma = 0)")
        uR = curvature_quantities(a)["uR"].values
        mean = float(np.mean(uR))
        if np.max(np.abs(uR - mean)) > rel_tol * max(1.0, abs(mean)):
            raise ConeError("uR is not constant: the structure is not Einstein")
        interp = _TorusInterpolant(s)
        Lc = interp.coefficients(a.metric.log_factor)
        Bc = [interp.coefficients(c) for c in a.B.comps]
        return cls(lambda x: interp(Lc, x),
                   lambda x: interp.gradient(Lc, x),
                   lambda x: np.array([interp(c, x) for c in Bc]),
                   mean, "torus structure")


class _TorusInterpolant:
    """Trigonometric interpolation of grid data at arbitrary points."""

    def __init__(self, torus):
        self.G = torus.generator_matrix
        self.Ginv = np.linalg.inv(self.G)
        self.shape = torus.shape
        self.k1 = np.fft.fftfreq(torus.nx, 1.0 / torus.nx)
        self.k2 = np.fft.fftfreq(torus.ny, 1.0 / torus.ny)
        # drop Nyquist modes so the interpolant is real
        self.k1[torus.nx // 2] = 0.0
        self.k2[torus.ny // 2] = 0.0

    def coefficients(self, values):
        c = np.fft.fft2(values) / values.size
        c[self.shape[0] // 2, :] = 0.0
        c[:, self.shape[1] // 2] = 0.0
        return c

    def _phase(self, x):
        u = self.Ginv @ np.asarray(x[:2], dtype=float)
        return np.exp(2j * np.pi * (self.k1[:, None] * u[0] + self.k2[None, :] * u[1]))

    def __call__(self, c, x):
        return float(np.real(np.sum(c * self._phase(x))))

    def gradient(self, c, x):
        ph = c * self._phase(x)
        du = np.array([np.real(np.sum(2j * np.pi * self.k1[:, None] * ph)),
                       np.real(np.sum(2j * np.pi * self.k2[None, :] * ph))])
        return self.Ginv.T @ du


# --------------------------------------------------------------------------
# cone geometry
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ConeGrid:
    base: ConeBase
    points: np.ndarray  # (n, 2) base points
    t_samples: np.ndarray
    step: float = 1e-2

    def __post_init__(self):
        t = np.asarray(self.t_samples, dtype=float)
        if t.ndim != 1 or not np.all(np.isfinite(t)) or np.any(np.diff(t) <= 0):
            raise ConeError("t samples must be finite and increasing")
        object.__setattr__(self, "t_samples", t)
        object.__setattr__(self, "points", np.atleast_2d(np.asarray(self.points, dtype=float)))

    def samples(self):
        for x in self.points:
            for t in self.t_samples:
                yield np.array([x[0], x[1], t])

    @property
    def half_uR(self) -> float:
        return 0.5 * self.base.uR

    def v(self, t):
        return _cbrt_real(self.half_uR) ** -2 * np.exp(2.0 * t)

    def g(self, p):
        h = np.exp(self.base.L(p[:2]))
        v = self.v(p[2])
        return v * np.diag([self.half_uR * h, self.half_uR * h, 1.0])

    def f(self, p):
        h = np.exp(self.base.L(p[:2]))
        return np.diag([-3.0 * self.half_uR * h, -3.0 * self.half_uR * h, 3.0])

    def F(self, p):
        return -3.0 * p[2] - 3.0 * np.log(abs(_cbrt_real(self.half_uR) ** -1))

    def Psi2(self, p):
        """Parallel volume squared, pinned by det g = Psi^2 at t = 0."""
        q = np.array([p[0], p[1], 0.0])
        return np.linalg.det(self.g(q)) * np.exp(6.0 * p[2])

    def steps(self):
        return (self.step,) * 3


def thomas_coefficients(base: ConeBase, p) -> np.ndarray:
    """Gamma[a, b, c] = Gamma^a_bc at p = (x, y, t); index 2 is t."""
    x = np.asarray(p[:2], dtype=float)
    dL = np.asarray(base.dL(x), dtype=float)
    G = np.zeros((3, 3, 3))
    for k in range(2):
        for i in range(2):
            for j in range(2):
                G[k, i, j] = 0.5 * ((k == i) * dL[j] + (k == j) * dL[i] - (i == j) * dL[k])
    beta = np.exp(-base.L(x)) * base.B_full(x)  # beta^k_ij = h^{kp} B_ijp
    G[:2, :2, :2] -= 0.5 * np.transpose(beta, (2, 0, 1))
    h = np.exp(base.L(x))
    G[2, 0, 0] = G[2, 1, 1] = -0.5 * base.uR * h
    for k in range(2):
        G[k, k, 2] = G[k, 2, k] = 1.0
    G[2, 2, 2] = 1.0
    return G


def connection_curvature(base: ConeBase, p, step: float = 1e-3) -> float:
    """Max |R^a_bcd| of the Thomas connection by finite differences.

    One derivative only, so a finer step than the nested Ricci stencils.
    """
    fun = lambda q: thomas_coefficients(base, q)  # noqa: E731
    dG = _derivs(fun, p, (step,) * 3)  # dG[c, a, d, b] = d_c Gamma^a_db
    G = fun(np.asarray(p, dtype=float))
    R = (np.einsum("cadb->abcd", dG) - np.einsum("dacb->abcd", dG)
         + np.einsum("ace,edb->abcd", G, G) - np.einsum("ade,ecb->abcd", G, G))
    return float(np.max(np.abs(R)))


def radial_derivative_defect(base: ConeBase, p) -> float:
    """max |nabla_I X^J - delta_I^J| for the radial field X = d/dt."""
    G = thomas_coefficients(base, p)
    return float(np.max(np.abs(G[:, :, 2].T - np.eye(3))))


def _christoffel(gfun, p, steps):
    g = np.asarray(gfun(p))
    dg = _derivs(gfun, p, steps)  # dg[c, a, b] = d_c g_ab
    ginv = np.linalg.inv(g)
    low = 0.5 * (np.einsum("bdc->dbc", dg) + np.einsum("cdb->dbc", dg) - dg)  # [d, b, c]
    return np.einsum("ad,dbc->abc", ginv, low)


def ricci(gfun, p, steps) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    G = _christoffel(gfun, p, steps)
    dG = _derivs(lambda q: _christoffel(gfun, q, steps), p, steps)  # [e, a, b, c]
    return (np.einsum("aabd->bd", dG) - np.einsum("daab->bd", dG)
            + np.einsum("aae,ebd->bd", G, G) - np.einsum("ade,eab->bd", G, G))


def hessian_defect(c: ConeGrid, p) -> float:
    """max |f - Hess F| with the Hessian taken by the Thomas connection."""
    p = np.asarray(p, dtype=float)
    st = c.steps()
    dF = _derivs(c.F, p, st)
    ddF = _derivs(lambda q: _derivs(c.F, q, st), p, st)
    G = thomas_coefficients(c.base, p)
    H = ddF - np.einsum("kij,k->ij", G, dF)
    return float(np.max(np.abs(H - c.f(p))))


def cone_metrics(c: ConeGrid) -> list[dict]:
    """g, f and F at every sample, with their signatures."""
    out = []
    for p in c.samples():
        g, f = c.g(p), c.f(p)
        eg = np.linalg.eigvalsh(g)
        ef = np.linalg.eigvalsh(f)
        out.append({"point": p, "g": g, "f": f, "F": c.F(p),
                    "g_signature": (int(np.sum(eg > 0)), int(np.sum(eg < 0))),
                    "f_positive": bool(np.all(ef > 0)),
                    "g_eigenvalues": eg, "f_eigenvalues": ef})
    return out


def determinant_identities(c: ConeGrid) -> dict:
    """max |det g - Psi^2| and max |det f - 27 exp(2F) Psi^2| over samples."""
    dg = df = 0.0
    for p in c.samples():
        P2 = c.Psi2(p)
        dg = max(dg, abs(np.linalg.det(c.g(p)) - P2))
        df = max(df, abs(np.linalg.det(c.f(p)) - 27.0 * np.exp(2.0 * c.F(p)) * P2))
    return {"detg_defect": dg, "detf_defect": df,
            "psi_normalization": "det g = Psi^2 at t = 0"}


def level_set_checks(c: ConeGrid) -> dict:
    """Second fundamental forms of the levels t = const.

    For f the levels are totally geodesic; for g they are umbilic. Also
    checks |d/dt|_f^2 = 3 and that d/dt is f-parallel.
    """
    tg = umb = norm = par = 0.0
    st = c.steps()
    for p in c.samples():
        df = _derivs(c.f, p, st)
        dg = _derivs(c.g, p, st)
        f, g = c.f(p), c.g(p)
        # II = (1/2) L_N (metric) on the level, N the unit normal d/dt / |d/dt|
        IIf = 0.5 * df[2, :2, :2] / np.sqrt(f[2, 2])
        tg = max(tg, float(np.max(np.abs(IIf))))
        IIg = 0.5 * dg[2, :2, :2] / np.sqrt(g[2, 2])
        gl = g[:2, :2]
        lam = np.trace(np.linalg.solve(gl, IIg)) / 2.0
        umb = max(umb, float(np.max(np.abs(IIg - lam * gl))))
        norm = max(norm, abs(f[2, 2] - 3.0))
        Gf = _christoffel(c.f, p, st)
        par = max(par, float(np.max(np.abs(Gf[:, :, 2]))))
    return {"f_total_geodesy": tg, "g_umbilicity": umb, "f_norm_dt_defect": norm,
            "f_parallel_dt": par}


def dust_density(c: ConeGrid, x) -> float:
    """-|B|^2_h / (4 uR), the coefficient of dt (x) dt in the Einstein tensor."""
    return -0.25 * c.base.B_norm2(x) / c.base.uR


def einstein_tensor(c: ConeGrid, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    Ric = ricci(c.g, p, c.steps())
    g = c.g(p)
    R = np.trace(np.linalg.solve(g, Ric))
    return Ric - 0.5 * R * g


def dust_residual(c: ConeGrid) -> dict:
    """max |Ric - R g / 2 - rho dt (x) dt| with rho = -|B|^2 / (4 uR).

    The Einstein tensor of g is that of a pressureless fluid with velocity
    along d/dt. With B = 0 it vanishes and the cone is flat.
    """
    res, trivial = 0.0, True
    for p in c.samples():
        rho = dust_density(c, p[:2])
        trivial &= rho == 0.0
        E = einstein_tensor(c, p)
        E[2, 2] -= rho
        res = max(res, float(np.max(np.abs(E))))
    return {"residual": res, "B_vanishes": bool(trivial)}


def energy_condition(c: ConeGrid, n_vectors: int = 100, seed: int = 0) -> float:
    """min over samples and random U of Ein(U, U); non-negative for dust."""
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((n_vectors, 3))
    worst = np.inf
    for p in c.samples():
        E = einstein_tensor(c, p)
        worst = min(worst, float(np.min(np.einsum("ni,ij,nj->n", U, E, U))))
    return worst


# --------------------------------------------------------------------------
# Monge-Ampere potential
# --------------------------------------------------------------------------

def monge_ampere_potential(C: float, tau, fd_step: float = 5e-4) -> dict:
    """Psi(tau) = int_{exp(-tau/3)}^{C^(1/3)} (C - r^3)^(1/3) dr and its checks.

    Returns Psi by quadrature, Psi' in closed form, the FD derivative of
    the quadrature values, Psi'' by differencing Psi', and

        det_defect  = max |27 Psi'^2 (Psi' + 3 Psi'') exp(2 tau) - 1|,
        identity_defect = max relative |(Psi' + 3 Psi'') - Psi' / (C exp(tau) - 1)|.
    """
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    if C <= 0:
        raise ConeError("C must be positive")
    lo = -np.log(C)
    if np.any(tau - 2 * fd_step <= lo):
        raise ConeError(f"tau must exceed -log C = {lo:.6g} (plus the FD stencil)")
    top = C ** (1.0 / 3.0)

    def psi(t):
        return sint.quad(lambda r: (C - r**3) ** (1.0 / 3.0), np.exp(-t / 3.0), top,
                         epsabs=1e-14, epsrel=1e-13, limit=200)[0]

    def dpsi(t):
        a = np.exp(-np.asarray(t) / 3.0)
        return a / 3.0 * (C - a**3) ** (1.0 / 3.0)

    P = np.array([psi(t) for t in tau])
    P1 = dpsi(tau)
    h = fd_step
    P1_fd = np.array([(psi(t - 2 * h) - 8 * psi(t - h) + 8 * psi(t + h) - psi(t + 2 * h)) / (12 * h)
                      for t in tau])
    P2 = (dpsi(tau - 2 * h) - 8 * dpsi(tau - h) + 8 * dpsi(tau + h) - dpsi(tau + 2 * h)) / (12 * h)
    comb = P1 + 3.0 * P2
    det = 27.0 * P1**2 * comb * np.exp(2.0 * tau)
    ident = P1 / (C * np.exp(tau) - 1.0)
    return {"tau": tau, "Psi": P, "dPsi": P1, "dPsi_fd_defect": float(np.max(np.abs(P1_fd - P1))),
            "d2Psi": P2, "det_defect": float(np.max(np.abs(det - 1.0))),
            "identity_defect": float(np.max(np.abs(comb - ident) / np.abs(ident)))}


def cone_report(c: ConeGrid) -> dict:
    """All identities at every sample."""
    ms = cone_metrics(c)
    pts = list(c.samples())
    return {
        "connection_curvature": max(connection_curvature(c.base, p) for p in pts),
        "radial_derivative": max(radial_derivative_defect(c.base, p) for p in pts),
        "hessian": max(hessian_defect(c, p) for p in pts),
        "signature_ok": all(m["g_signature"] == (1, 2) and m["f_positive"] for m in ms),
        **determinant_identities(c),
        **level_set_checks(c),
        "dust": dust_residual(c)["residual"],
        "energy_condition_min": energy_condition(c),
    }


def structure_B_norm2(a: AHStructure) -> np.ndarray:
    return tensor_norm2(a.B, a.metric)
