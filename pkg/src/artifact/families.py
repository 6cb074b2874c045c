"""Closed-form Einstein-Weyl families on the sphere and the torus.

Sphere family (``kappa`` any real, ``S = sqrt(kappa^2 + 16)``,
``mu = 2 kappa / S``)::

    h = 8 / (S (1 + mu rho^2 + rho^4)) (dx^2 + dy^2),   gamma = h_coeff (x dy - y dx)

Torus family (``kappa < -4``, ``T = sqrt(kappa^2 - 16)``) on the lattice
spanned by ``(pi, 0)`` and ``(0, pi)`` in coordinates ``(r, s)``::

    h = 4 / (T cos 2s - kappa) (dr^2 + ds^2),   gamma = h_coeff dr

Both have ``gamma`` dual to a Killing field and ``uR - 4|gamma|^2 = kappa``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate as sint

from .ah import AHStructure
from .grids import ConformalMetric, LatticeTorus, OneFormField, ScalarField, SphereChart


class FamilyError(ValueError):
    pass


# --------------------------------------------------------------------------
# parameter conversions
# --------------------------------------------------------------------------

def tau(z):
    """z (pi/2 - arctan z), an increasing map of R onto (-inf, 1)."""
    z = np.asarray(z, dtype=float)
    return z * (0.5 * np.pi - np.arctan(z))


def nu_from_kappa(kappa):
    return 8.0 * np.pi * tau(np.asarray(kappa) / 4.0)


def theta_from_kappa(kappa):
    """theta in (0, pi/2) with kappa = 4 cot 2 theta."""
    return 0.5 * (0.5 * np.pi - np.arctan(np.asarray(kappa) / 4.0))


def theta_conversions(theta):
    """(kappa, nu) for theta in (0, pi/2)."""
    theta = np.asarray(theta, dtype=float)
    if np.any((theta <= 0) | (theta >= 0.5 * np.pi)):
        raise FamilyError("theta must lie in (0, pi/2)")
    cot = 1.0 / np.tan(2.0 * theta)
    return 4.0 * cot, 16.0 * np.pi * theta * cot


# --------------------------------------------------------------------------
# sphere
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SphereFamily:
    kappa: float

    @property
    def S(self) -> float:
        return float(np.hypot(self.kappa, 4.0))

    @property
    def mu(self) -> float:
        return 2.0 * self.kappa / self.S

    @property
    def theta(self) -> float:
        return float(theta_from_kappa(self.kappa))

    @property
    def nu(self) -> float:
        return float(nu_from_kappa(self.kappa))

    def _D(self, rho):
        r2 = np.asarray(rho, dtype=float) ** 2
        return 1.0 + self.mu * r2 + r2 * r2

    def eval(self, rho) -> dict:
        """Closed-form h_coeff, sR, f, |gamma|^2 and gamma_coeff at radius rho."""
        rho = np.asarray(rho, dtype=float)
        if np.any(rho < 0):
            raise FamilyError("rho must be non-negative")
        D = self._D(rho)
        r2 = rho**2
        h = 8.0 / (self.S * D)
        return {"h_coeff": h,
                "sR": self.kappa + 32.0 * r2 / (self.S * D),
                "f": 4.0 * (r2 * r2 - 1.0) / D,
                "gamma_norm2": h * r2,
                "gamma_coeff": h}

    def volume(self) -> float:
        return 2.0 * np.pi * (0.5 * np.pi - np.arctan(self.kappa / 4.0))

    def volume_quadrature(self) -> float:
        """2 pi times the radial integral of h_coeff rho, split at rho = 1."""
        g = lambda r: self.eval(r)["h_coeff"] * r  # noqa: E731
        # rho -> 1/rho maps the outer half onto (0, 1) with Jacobian rho^-2
        inner = sint.quad(g, 0.0, 1.0, epsabs=0, epsrel=1e-13)[0]
        outer = sint.quad(lambda r: g(1.0 / r) / r**2, 0.0, 1.0, epsabs=0, epsrel=1e-13)[0]
        return 2.0 * np.pi * (inner + outer)

    def equator_lengths(self) -> tuple[float, float]:
        S, k = self.S, self.kappa
        Lh = np.pi * np.sqrt(S - k)
        Lhat = 2.0 * np.sqrt(2.0) * np.pi * S**0.5 / np.sqrt(S + k)
        return float(Lh), float(Lhat)

    def equator_length_quadrature(self) -> float:
        """h-length of rho = 1 by direct arc-length quadrature."""
        c = lambda t: np.sqrt(self.eval(1.0)["h_coeff"])  # noqa: E731
        return sint.quad(c, 0.0, 2.0 * np.pi)[0]

    # grid realization -----------------------------------------------------

    def metric(self, chart: SphereChart, exact_curvature: bool = False) -> ConformalMetric:
        rho = chart.rho()
        e = self.eval(rho)
        if exact_curvature:
            # h_coeff rho^2 is the factor relative to ds^2 + dr^2
            L = np.log(e["h_coeff"]) + 2.0 * np.log(rho)
            return ConformalMetric.explicit(chart, L, e["sR"])
        # relative to the round metric 4 / (1 + rho^2)^2, formed without
        # cancelling the large log rho terms of either factor
        phi = np.log(e["h_coeff"] / 4.0) + 2.0 * np.log1p(rho**2)
        return ConformalMetric.round_sphere(chart, phi)

    def structure(self, chart: SphereChart, exact_curvature: bool = False) -> AHStructure:
        rho = chart.rho()
        e = self.eval(rho)
        g = np.stack([np.zeros(chart.shape), e["h_coeff"] * rho**2])
        return AHStructure(self.metric(chart, exact_curvature), None,
                           OneFormField(chart, g, "gamma"))

    def geometry(self) -> "ClosedFormGeometry":
        """Metric and magnetic function in stereographic coordinates."""
        def evaluate(p):
            x, y = p
            r2 = x * x + y * y
            D = 1.0 + self.mu * r2 + r2 * r2
            h = 8.0 / (self.S * D)
            # grad log h = -(dD/d(r2)) (2x, 2y) / D
            dL = -(2.0 * self.mu + 4.0 * r2) / D
            return np.log(h), np.array([dL * x, dL * y]), 4.0 * (r2 * r2 - 1.0) / D, h

        def killing(p):
            return np.array([-p[1], p[0]])

        return ClosedFormGeometry(evaluate, killing, lambda p: bool(np.all(np.isfinite(p)) and np.hypot(*p) < 1e6))


# --------------------------------------------------------------------------
# torus
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TorusFamily:
    """Torus instances normalized so that the s-period is pi."""

    kappa: float
    r_period: float = np.pi
    s_periods: int = 1

    def __post_init__(self):
        if not self.kappa < -4.0:
            raise FamilyError("torus family needs kappa < -4")
        if int(self.s_periods) != self.s_periods or self.s_periods < 1:
            raise FamilyError("s_periods must be a positive integer")

    @property
    def T(self) -> float:
        return float(np.sqrt(self.kappa**2 - 16.0))

    def eval(self, s) -> dict:
        s = np.asarray(s, dtype=float)
        T, k = self.T, self.kappa
        c2 = np.cos(2.0 * s)
        h = 4.0 / (T * c2 - k)
        return {"h_coeff": h,
                "sR": T * (k * c2 - T) / (T * c2 - k),
                "f": 4.0 * np.sin(2.0 * s) / (c2 - k / T),
                "gamma_norm2": h}

    def lattice(self, n: int = 128) -> LatticeTorus:
        return LatticeTorus((self.r_period, 0.0), (0.0, np.pi * self.s_periods), n, n)

    def volume(self) -> float:
        """r-period times the s-integral of h_coeff over whole periods."""
        # integral of 4 / (T cos 2s - k) over one period pi is 4 pi / sqrt(k^2 - T^2)
        return self.r_period * self.s_periods * np.pi

    @property
    def nu(self) -> float:
        return self.kappa * self.volume()

    def metric(self, torus: LatticeTorus, exact_curvature: bool = False) -> ConformalMetric:
        _, s = torus.coordinates()
        e = self.eval(s)
        return ConformalMetric.explicit(torus, np.log(e["h_coeff"]),
                                        e["sR"] if exact_curvature else None)

    def structure(self, torus: LatticeTorus, exact_curvature: bool = False) -> AHStructure:
        _, s = torus.coordinates()
        h = self.eval(s)["h_coeff"]
        g = np.stack([h, np.zeros_like(h)])
        return AHStructure(self.metric(torus, exact_curvature), None, OneFormField(torus, g, "gamma"))

    def geometry(self) -> "ClosedFormGeometry":
        T, k = self.T, self.kappa

        def evaluate(p):
            s = p[1]
            den = T * np.cos(2.0 * s) - k
            h = 4.0 / den
            dLs = 2.0 * T * np.sin(2.0 * s) / den
            return np.log(h), np.array([0.0, dLs]), 4.0 * np.sin(2.0 * s) / (np.cos(2.0 * s) - k / T), h

        return ClosedFormGeometry(evaluate, lambda p: np.array([1.0, 0.0]),
                                  lambda p: bool(np.all(np.isfinite(p))))


# --------------------------------------------------------------------------
# magnetic geodesics
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ClosedFormGeometry:
    """``evaluate(p) -> (L, grad L, f, |X|^2 scale)`` in a conformal chart,
    the Killing field ``X`` dual to gamma and a chart-membership test."""

    evaluate: object
    killing: object
    inside: object

    def gamma_sharp(self, p):
        return self.killing(p)


class GridGeometry:
    """Spline interpolation of a sampled metric and magnetic function."""

    def __init__(self, m: ConformalMetric, f_field: ScalarField):
        from scipy.interpolate import RectBivariateSpline

        s = m.surface
        if f_field.surface != s:
            raise FamilyError("metric and magnetic function live on different surfaces")
        L, f = m.log_factor, f_field.values
        if s.kind == "torus":
            G = s.generator_matrix
            if abs(G[0, 1]) > 0 or abs(G[1, 0]) > 0:
                raise FamilyError("grid geometry needs a rectangular lattice")
            px, py = G[0, 0], G[1, 1]
            u = np.arange(-3, s.nx + 3) * px / s.nx
            v = np.arange(-3, s.ny + 3) * py / s.ny
            wrap = lambda a: np.pad(a, 3, mode="wrap")  # noqa: E731
            self._L = RectBivariateSpline(u, v, wrap(L), kx=5, ky=5, s=0)
            self._f = RectBivariateSpline(u, v, wrap(f), kx=5, ky=5, s=0)
            self._box = None
            self._period = (px, py)
        else:
            r = s.dr * np.arange(-3, s.n_ang + 3)
            pad = lambda a: np.pad(a, ((0, 0), (3, 3)), mode="wrap")  # noqa: E731
            self._L = RectBivariateSpline(s.s, r, pad(L), kx=5, ky=5, s=0)
            self._f = RectBivariateSpline(s.s, r, pad(f), kx=5, ky=5, s=0)
            self._box = (s.s[2], s.s[-3])
            self._period = (None, 2.0 * np.pi)

    def _reduce(self, p):
        a, b = p
        if self._period[0] is not None:
            a = a % self._period[0]
        return a, b % self._period[1]

    def evaluate(self, p):
        a, b = self._reduce(p)
        L = self._L(a, b, grid=False)
        g = np.array([self._L(a, b, dx=1, grid=False), self._L(a, b, dy=1, grid=False)])
        return float(L), g, float(self._f(a, b, grid=False)), float(np.exp(L))

    def inside(self, p):
        if not np.all(np.isfinite(p)):
            return False
        return self._box is None or self._box[0] <= p[0] <= self._box[1]

    def gamma_sharp(self, p):
        raise FamilyError("grid geometry carries no Killing field")


def _accel(geom, p, v, scale):
    _, dL, f, _ = geom.evaluate(p)
    vL = dL @ v
    v2 = v @ v
    # Levi-Civita part of the conformal metric plus A(v) = -(f/4) J v
    return -vL * v + 0.5 * v2 * dL + 0.25 * scale * f * np.array([v[1], -v[0]])


@dataclass
class Trajectory:
    t: np.ndarray
    points: np.ndarray
    velocities: np.ndarray
    energy: np.ndarray
    kappa_geo: np.ndarray
    kappa_expected: np.ndarray | None

    @property
    def energy_drift(self) -> float:
        return float(np.max(np.abs(self.energy - self.energy[0])))

    def to_csv(self, path) -> None:
        kg = self.kappa_geo
        data = np.column_stack([self.t, self.points, self.energy, kg])
        np.savetxt(path, data, delimiter=",", header="t,x,y,energy,kappa_geo",
                   comments="", fmt="%.17g")


def magnetic_geodesic(geom, f_field=None, start=(1.0, 0.0), v0=None, T=2.0 * np.pi,
                      steps: int = 10000, scale: float = 1.0) -> Trajectory:
    """Integrate D_v v = A(v) with A = -(scale/4) f J by classical RK4.

    ``geom`` is a closed-form geometry (``SphereFamily.geometry()``) or a
    ``ConformalMetric`` together with ``f_field``. ``v0`` defaults to the
    dual of gamma when the geometry knows its Killing field. ``scale``
    multiplies the magnetic term; 1 is the normalization in which
    gamma-orbits are magnetic geodesics.
    """
    if isinstance(geom, ConformalMetric):
        if f_field is None:
            raise FamilyError("a sampled metric needs f_field")
        geom = GridGeometry(geom, f_field)
    p = np.array(start, dtype=float)
    v = np.array(geom.gamma_sharp(p) if v0 is None else v0, dtype=float)
    dt = T / steps
    P = np.empty((steps + 1, 2))
    V = np.empty((steps + 1, 2))
    P[0], V[0] = p, v
    for n in range(steps):
        k1p, k1v = v, _accel(geom, p, v, scale)
        k2p = v + 0.5 * dt * k1v
        k2v = _accel(geom, p + 0.5 * dt * k1p, k2p, scale)
        k3p = v + 0.5 * dt * k2v
        k3v = _accel(geom, p + 0.5 * dt * k2p, k3p, scale)
        k4p = v + dt * k3v
        k4v = _accel(geom, p + dt * k3p, k4p, scale)
        p = p + dt / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
        v = v + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if not geom.inside(p):
            raise FamilyError(f"trajectory left the chart at t = {(n + 1) * dt:.6g}")
        P[n + 1], V[n + 1] = p, v
    t = dt * np.arange(steps + 1)
    ev = [geom.evaluate(q) for q in P]
    L = np.array([e[0] for e in ev])
    dL = np.array([e[1] for e in ev])
    f = np.array([e[2] for e in ev])
    energy = np.exp(L) * np.sum(V**2, axis=1)
    kg = _fd_geodesic_curvature(P, dt, L, dL)
    expected = None
    try:
        X = np.array([geom.gamma_sharp(q) for q in P])
        expected = -0.25 * scale * f / np.sqrt(np.exp(L) * np.sum(X**2, axis=1))
    except FamilyError:
        pass
    return Trajectory(t, P, V, energy, kg, expected)


def _fd_geodesic_curvature(P, dt, L, dL):
    """Signed geodesic curvature from 4th-order differences of the positions.

    kappa = <D_v v, J v>_h / |v|_h^3; end points are left as NaN.
    """
    n = len(P)
    kg = np.full(n, np.nan)
    if n < 5:
        return kg
    v = (P[:-4] - 8 * P[1:-3] + 8 * P[3:-1] - P[4:]) / (12 * dt)
    a = (-P[:-4] + 16 * P[1:-3] - 30 * P[2:-2] + 16 * P[3:-1] - P[4:]) / (12 * dt * dt)
    Lc, dLc = L[2:-2], dL[2:-2]
    vL = np.sum(dLc * v, axis=1)
    v2 = np.sum(v * v, axis=1)
    acc = a + vL[:, None] * v - 0.5 * v2[:, None] * dLc
    Jv = np.column_stack([-v[:, 1], v[:, 0]])
    kg[2:-2] = np.sum(acc * Jv, axis=1) * np.exp(Lc) / (np.exp(Lc) * v2) ** 1.5
    return kg


# --------------------------------------------------------------------------
# Ricci flow
# --------------------------------------------------------------------------

SPHERE_BRANCH = "sphere"
TORUS_BRANCH = "torus"
LITERAL_SPHERE_BRANCH = "sphere-literal"


def kappa_of_t(branch: str, t: float) -> float:
    """kappa along the flow.

    sphere: -4 cot 4t on (-pi/4, 0); torus: -4 coth 4t for t > 0.
    ``sphere-literal`` is -2 cot 2t on (-pi/2, 0), kept to document that it
    does not solve the flow.
    """
    if branch == SPHERE_BRANCH:
        if not -0.25 * np.pi < t < 0:
            raise FamilyError("sphere branch needs t in (-pi/4, 0)")
        return -4.0 / np.tan(4.0 * t)
    if branch == LITERAL_SPHERE_BRANCH:
        if not -0.5 * np.pi < t < 0:
            raise FamilyError("literal sphere branch needs t in (-pi/2, 0)")
        return -2.0 / np.tan(2.0 * t)
    if branch == TORUS_BRANCH:
        if not t > 0:
            raise FamilyError("torus branch needs t > 0")
        return -4.0 / np.tanh(4.0 * t)
    raise FamilyError(f"unknown branch {branch!r}")


def ricci_flow_residual(branch: str, t: float, delta: float = 1e-4,
                        samples: np.ndarray | None = None) -> float:
    """max |(h(t+d) - h(t-d)) / 2d + sR h| over sample points."""
    kappa_of_t(branch, t)
    kappa_of_t(branch, t - delta)
    kappa_of_t(branch, t + delta)
    sphere = branch != TORUS_BRANCH
    if samples is None:
        samples = np.logspace(-2, 2, 81) if sphere else np.linspace(0, np.pi, 81)
    fam = (lambda k: SphereFamily(k)) if sphere else (lambda k: TorusFamily(k))
    hp = fam(kappa_of_t(branch, t + delta)).eval(samples)["h_coeff"]
    hm = fam(kappa_of_t(branch, t - delta)).eval(samples)["h_coeff"]
    e = fam(kappa_of_t(branch, t)).eval(samples)
    return float(np.max(np.abs((hp - hm) / (2.0 * delta) + e["sR"] * e["h_coeff"])))
