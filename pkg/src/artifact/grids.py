"""Discrete surfaces, sampled fields and the calculus on them.

Two surfaces are supported.

* ``LatticeTorus``: the plane modulo a rank two lattice, sampled on a
  uniform grid in lattice coordinates and differentiated spectrally.
* ``SphereChart``: the sphere minus two polar caps, sampled in log-polar
  coordinates ``w = s + i r = log z`` on a finite cylinder,
  differentiated with 6th order centered differences in ``s`` and
  spectrally in the periodic angle ``r``.

Both charts are conformal, so every metric is ``exp(L) * (du1^2 + du2^2)``
for a log-factor ``L`` and tensor components are stored in the chart
coordinates ``(u1, u2)``: ``(x, y)`` on the torus, ``(s, r)`` on the sphere.
"""
from __future__ import annotations

import base64
import json
import math
from functools import lru_cache
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi


class SurfaceMismatch(ValueError):
    """Raised when fields living on different surfaces are combined."""


# --------------------------------------------------------------------------
# surfaces
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LatticeTorus:
    """Flat torus R^2 / (Z g1 + Z g2) on an ``nx`` by ``ny`` grid.

    Axis 0 of every array runs along ``generator1`` and axis 1 along
    ``generator2``. Oblique lattices are handled by differentiating in the
    unit-square lattice coordinates and applying the chain rule.
    """

    generator1: tuple = (TWO_PI, 0.0)
    generator2: tuple = (0.0, TWO_PI)
    nx: int = 256
    ny: int = 256

    kind = "torus"
    genus = 1

    def __post_init__(self):
        G = self.generator_matrix
        if abs(np.linalg.det(G)) < 1e-14:
            raise ValueError("lattice generators are linearly dependent")
        for n in (self.nx, self.ny):
            if n < 8 or n % 2:
                raise ValueError("torus resolution must be even and >= 8")

    @property
    def generator_matrix(self) -> np.ndarray:
        # columns are the generators
        return np.array([self.generator1, self.generator2], dtype=float).T

    @property
    def shape(self):
        return (self.nx, self.ny)

    @property
    def area(self) -> float:
        return abs(np.linalg.det(self.generator_matrix))

    def coordinates(self):
        """Plane coordinates ``(x, y)`` of the grid nodes."""
        u = np.arange(self.nx) / self.nx
        v = np.arange(self.ny) / self.ny
        U, V = np.meshgrid(u, v, indexing="ij")
        G = self.generator_matrix
        return G[0, 0] * U + G[0, 1] * V, G[1, 0] * U + G[1, 1] * V

    def _wavenumbers(self):
        # d/dx, d/dy symbols: grad_xy = G^{-T} grad_uv
        ku = TWO_PI * np.fft.fftfreq(self.nx, 1.0 / self.nx)
        kv = TWO_PI * np.fft.rfftfreq(self.ny, 1.0 / self.ny)
        KU, KV = np.meshgrid(ku, kv, indexing="ij")
        Ginv_T = np.linalg.inv(self.generator_matrix).T
        kx = Ginv_T[0, 0] * KU + Ginv_T[0, 1] * KV
        ky = Ginv_T[1, 0] * KU + Ginv_T[1, 1] * KV
        return kx, ky, KU, KV

    def grad(self, f: np.ndarray):
        """Spectral first derivatives; the Nyquist modes are dropped."""
        kx, ky, KU, KV = self._wavenumbers()
        keep = np.ones_like(kx)
        keep[np.abs(KU) == np.pi * self.nx] = 0.0
        keep[np.abs(KV) == np.pi * self.ny] = 0.0
        fh = np.fft.rfft2(f, axes=(-2, -1))
        fx = np.fft.irfft2(1j * kx * keep * fh, s=self.shape, axes=(-2, -1))
        fy = np.fft.irfft2(1j * ky * keep * fh, s=self.shape, axes=(-2, -1))
        return fx, fy

    def lap0(self, f: np.ndarray) -> np.ndarray:
        """Coordinate Laplacian d^2/dx^2 + d^2/dy^2."""
        kx, ky, _, _ = self._wavenumbers()
        fh = np.fft.rfft2(f, axes=(-2, -1))
        return np.fft.irfft2(-(kx**2 + ky**2) * fh, s=self.shape, axes=(-2, -1))

    def lap0_symbol(self) -> np.ndarray:
        kx, ky, _, _ = self._wavenumbers()
        return -(kx**2 + ky**2)

    def quadrature_weights(self) -> np.ndarray:
        return np.full(self.shape, self.area / (self.nx * self.ny))

    def interior(self, margin: int | None = None) -> np.ndarray:
        # periodic: every node is interior
        return np.ones(self.shape, dtype=bool)

    def describe(self) -> dict:
        return {"type": "torus", "generator1": list(self.generator1),
                "generator2": list(self.generator2), "nx": self.nx, "ny": self.ny}


def _stencil(offsets, order: int) -> np.ndarray:
    """Finite-difference weights for the ``order``-th derivative at 0."""
    x = np.asarray(offsets, dtype=float)
    V = np.vander(x, increasing=True).T
    rhs = np.zeros(len(x))
    rhs[order] = math.factorial(order)
    return np.linalg.solve(V, rhs)


FD_ACCURACY = 6
CAP_TERMS = 3


@lru_cache(maxsize=None)
def _stencils(order: int, acc: int):
    half = acc // 2
    centre = _stencil(range(-half, half + 1), order)
    # one-sided companions for the first ``half`` rows, same accuracy
    npts = acc + order
    edge = [_stencil([j - i for j in range(npts)], order) for i in range(half)]
    return half, centre, edge


def _fd_axis(f: np.ndarray, h: float, order: int, axis: int, periodic: bool,
             acc: int = FD_ACCURACY):
    f = np.moveaxis(f, axis, -1)
    n = f.shape[-1]
    half, stencil, edge = _stencils(order, acc)
    out = np.zeros_like(f)
    if periodic:
        for j, c in zip(range(-half, half + 1), stencil):
            out += c * np.roll(f, -j, axis=-1)
    else:
        for j, c in zip(range(-half, half + 1), stencil):
            if c:
                out[..., half:n - half] += c * f[..., half + j:n - half + j]
        mirror = -1.0 if order % 2 else 1.0  # odd derivatives flip at the far end
        for i, w in enumerate(edge):
            m = len(w)
            out[..., i] = f[..., :m] @ w
            out[..., n - 1 - i] = mirror * (f[..., n - 1:n - 1 - m:-1] @ w)
    return np.moveaxis(out / h**order, -1, axis)


@dataclass(frozen=True)
class SphereChart:
    """Sphere minus polar caps, sampled in log-polar coordinates.

    Nodes sit at ``s = log rho`` uniformly spaced on ``[log rho_min,
    log rho_max]`` (axis 0) and at angles ``r = 2 pi j / n_ang`` (axis 1).
    The flat coordinate metric is ``ds^2 + dr^2 = rho^-2 (dx^2 + dy^2)``.
    """

    rho_min: float = float(np.exp(-3.0))
    rho_max: float = float(np.exp(3.0))
    n_rho: int = 512
    n_ang: int = 256

    kind = "sphere"
    genus = 0

    def __post_init__(self):
        if not (0.0 < self.rho_min < 1.0 < self.rho_max):
            raise ValueError("chart must contain the equator rho = 1")
        if abs(self.rho_min * self.rho_max - 1.0) > 1e-12:
            raise ValueError("chart must satisfy rho_min * rho_max = 1")
        if self.n_rho < 8 or self.n_ang < 8:
            raise ValueError("sphere resolution too small")

    @property
    def shape(self):
        return (self.n_rho, self.n_ang)

    @property
    def s(self) -> np.ndarray:
        return np.linspace(np.log(self.rho_min), np.log(self.rho_max), self.n_rho)

    @property
    def ds(self) -> float:
        return (np.log(self.rho_max) - np.log(self.rho_min)) / (self.n_rho - 1)

    @property
    def dr(self) -> float:
        return TWO_PI / self.n_ang

    def log_polar(self):
        r = self.dr * np.arange(self.n_ang)
        return np.meshgrid(self.s, r, indexing="ij")

    def coordinates(self):
        """Stereographic coordinates ``(x, y)`` of the grid nodes."""
        S, R = self.log_polar()
        rho = np.exp(S)
        return rho * np.cos(R), rho * np.sin(R)

    def rho(self) -> np.ndarray:
        return np.exp(self.log_polar()[0])

    def _ang_wavenumbers(self):
        return np.fft.rfftfreq(self.n_ang, 1.0 / self.n_ang)

    def grad(self, f: np.ndarray):
        # radial: finite differences; angular: periodic, so spectral
        k = self._ang_wavenumbers()
        k = np.where(k == self.n_ang // 2, 0.0, k)
        fr = np.fft.irfft(1j * k * np.fft.rfft(f, axis=-1), n=self.n_ang, axis=-1)
        return _fd_axis(f, self.ds, 1, -2, periodic=False), fr

    def lap0(self, f: np.ndarray) -> np.ndarray:
        k = self._ang_wavenumbers()
        frr = np.fft.irfft(-(k**2) * np.fft.rfft(f, axis=-1), n=self.n_ang, axis=-1)
        return _fd_axis(f, self.ds, 2, -2, periodic=False) + frr

    def quadrature_weights(self) -> np.ndarray:
        """Trapezoid weights on the cylinder plus a polar-cap closure.

        Summed over angles, the area density of a field that extends
        smoothly over a pole is ``sum_j a_j exp(-2 j |s|)`` near it.
        Fitting three terms to three rows gives the missing cap integral,
        and the edge slope for the Euler-Maclaurin end correction of the
        trapezoid rule, as linear combinations of those rows; both are
        folded into their weights. The fit starts at the first row with a
        centred stencil, so curvatures computed by one-sided differences
        near the edge get zero weight.
        """
        ds = self.ds
        skip = FD_ACCURACY // 2
        j = np.arange(1, CAP_TERMS + 1)
        # row skip + i of the fit: sum_j A_j exp(2 j i ds)
        M = np.exp(2.0 * ds * np.outer(np.arange(CAP_TERMS), j))
        extra = np.linalg.solve(M.T, 1.0 / (2.0 * j) + ds * ds / 12.0 * (2.0 * j))
        w = np.full(self.shape, ds * self.dr)
        w[:skip] = 0.0
        w[self.n_rho - skip:] = 0.0
        w[skip] *= 0.5
        w[-1 - skip] *= 0.5
        for i, e in enumerate(extra):
            w[skip + i] += self.dr * e
            w[-1 - skip - i] += self.dr * e
        return w

    def interior(self, margin: int | None = None) -> np.ndarray:
        """Rows reached by centred stencils only (``margin`` defaults to
        the stencil half-width)."""
        margin = FD_ACCURACY // 2 if margin is None else margin
        mask = np.zeros(self.shape, dtype=bool)
        mask[margin:self.n_rho - margin] = True
        return mask

    def describe(self) -> dict:
        return {"type": "sphere", "rho_min": self.rho_min, "rho_max": self.rho_max,
                "n_rho": self.n_rho, "n_ang": self.n_ang}


def surface_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("type")
    if kind == "torus":
        return LatticeTorus(tuple(d["generator1"]), tuple(d["generator2"]),
                            int(d["nx"]), int(d["ny"]))
    if kind == "sphere":
        return SphereChart(float(d["rho_min"]), float(d["rho_max"]),
                           int(d["n_rho"]), int(d["n_ang"]))
    raise ValueError(f"unknown surface type {kind!r}")


# --------------------------------------------------------------------------
# fields
# --------------------------------------------------------------------------

def _check(surface, values, ncomp=None):
    values = np.asarray(values, dtype=float)
    tail = values.shape[-2:]
    if tail != surface.shape:
        raise SurfaceMismatch(f"array shape {tail} does not match grid {surface.shape}")
    if ncomp is not None and values.shape[:-2] != (ncomp,):
        raise ValueError(f"expected {ncomp} components, got {values.shape[:-2]}")
    return values


@dataclass(frozen=True, eq=False)
class ScalarField:
    surface: object
    values: np.ndarray
    name: str = "f"

    def __post_init__(self):
        object.__setattr__(self, "values", _check(self.surface, self.values))


@dataclass(frozen=True, eq=False)
class OneFormField:
    """Covariant one-form; ``comps[i]`` is the ``du_i`` coefficient."""

    surface: object
    comps: np.ndarray
    name: str = "alpha"

    def __post_init__(self):
        object.__setattr__(self, "comps", _check(self.surface, self.comps, 2))


@dataclass(frozen=True, eq=False)
class SymTensorField:
    """Completely symmetric tensor of signed degree ``k`` in two dimensions.

    ``k > 0`` means covariant, ``k < 0`` contravariant. Component ``m`` of
    ``comps`` holds the entry with ``|k| - m`` first indices and ``m``
    second indices, e.g. (xxx, xxy, xyy, yyy) for a cubic form.
    """

    surface: object
    degree: int
    comps: np.ndarray
    name: str = "B"

    def __post_init__(self):
        if self.degree == 0:
            raise ValueError("degree must be nonzero")
        object.__setattr__(self, "comps",
                           _check(self.surface, self.comps, abs(self.degree) + 1))

    @property
    def rank(self) -> int:
        return abs(self.degree)

    def full(self) -> np.ndarray:
        """Expand to an array of shape ``(2,)*rank + grid``."""
        k = self.rank
        out = np.empty((2,) * k + self.surface.shape)
        for idx in np.ndindex(*(2,) * k):
            out[idx] = self.comps[sum(idx)]
        return out

    @classmethod
    def from_full(cls, surface, degree, arr, name="B"):
        k = abs(degree)
        comps = np.stack([arr[(0,) * (k - m) + (1,) * m] for m in range(k + 1)])
        return cls(surface, degree, comps, name)


def same_surface(*objs):
    surfaces = [o.surface for o in objs]
    for s in surfaces[1:]:
        if s != surfaces[0]:
            raise SurfaceMismatch("fields live on different surfaces")
    return surfaces[0]


# --------------------------------------------------------------------------
# conformal metrics
# --------------------------------------------------------------------------

def round_sphere_log_factor(chart: SphereChart) -> np.ndarray:
    """log of 4 rho^2 / (1 + rho^2)^2, the round metric in ``(s, r)``."""
    S = chart.log_polar()[0]
    return np.log(4.0) + 2.0 * S - 2.0 * np.logaddexp(0.0, 2.0 * S)


def _explicit_curvature(surface, bl: np.ndarray) -> np.ndarray:
    """Curvature of exp(bl) (du1^2 + du2^2) by differences.

    On a sphere chart the round factor is split off first: the remainder
    stays O(1) up to the caps, which keeps the roundoff in the second
    differences from being amplified by exp(-bl) there.
    """
    if surface.kind != "sphere":
        return -np.exp(-bl) * surface.lap0(bl)
    ref = round_sphere_log_factor(surface)
    u = bl - ref
    return np.exp(-u) * (2.0 - np.exp(-ref) * surface.lap0(u))


@dataclass(frozen=True, eq=False)
class ConformalMetric:
    """The metric ``exp(phi) * base`` on a chart.

    ``base`` is ``"flat-torus"``, ``"round-sphere"`` or ``"explicit"``. An
    explicit base carries its own log-factor relative to the chart
    coordinates and, optionally, its closed-form scalar curvature.
    """

    surface: object
    base: str
    phi: np.ndarray
    base_log: np.ndarray | None = None
    base_curvature: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        s = self.surface
        object.__setattr__(self, "phi", _check(s, np.broadcast_to(self.phi, s.shape)))
        if self.base == "flat-torus":
            if s.kind != "torus":
                raise SurfaceMismatch("flat base needs a torus")
            bl, bc = np.zeros(s.shape), np.zeros(s.shape)
        elif self.base == "round-sphere":
            if s.kind != "sphere":
                raise SurfaceMismatch("round base needs a sphere chart")
            bl, bc = round_sphere_log_factor(s), np.full(s.shape, 2.0)
        elif self.base == "explicit":
            if self.base_log is None:
                raise ValueError("explicit base needs base_log")
            bl = _check(s, np.broadcast_to(self.base_log, s.shape))
            bc = self.base_curvature
            if bc is None:
                bc = _explicit_curvature(s, bl)
            bc = _check(s, np.broadcast_to(bc, s.shape))
        else:
            raise ValueError(f"unknown base {self.base!r}")
        object.__setattr__(self, "base_log", bl)
        object.__setattr__(self, "base_curvature", bc)

    @classmethod
    def flat(cls, torus, phi=0.0):
        return cls(torus, "flat-torus", phi)

    @classmethod
    def round_sphere(cls, chart, phi=0.0):
        return cls(chart, "round-sphere", phi)

    @classmethod
    def explicit(cls, surface, base_log, curvature=None, phi=0.0):
        return cls(surface, "explicit", phi, base_log, curvature)

    @property
    def log_factor(self) -> np.ndarray:
        """Total ``L`` with the metric equal to ``exp(L) (du1^2 + du2^2)``."""
        return self.base_log + self.phi

    def rescaled(self, mu) -> "ConformalMetric":
        """The metric ``exp(mu) * self``."""
        mu = mu.values if isinstance(mu, ScalarField) else mu
        return ConformalMetric(self.surface, self.base, self.phi + mu,
                               self.base_log, self.base_curvature)

    def flattened(self) -> "ConformalMetric":
        """Same metric with everything folded into an explicit base."""
        return ConformalMetric.explicit(self.surface, self.log_factor)

    def volume(self) -> float:
        return integrate(np.ones(self.surface.shape), self)


def _vals(f, surface=None):
    if isinstance(f, ScalarField):
        if surface is not None and f.surface != surface:
            raise SurfaceMismatch("field and metric live on different surfaces")
        return f.values
    return np.asarray(f, dtype=float)


def laplacian(f, m: ConformalMetric) -> ScalarField:
    """Laplace-Beltrami operator of ``m`` applied to ``f``."""
    v = _vals(f, m.surface)
    return ScalarField(m.surface, np.exp(-m.log_factor) * m.surface.lap0(v), "lap")


def scalar_curvature(m: ConformalMetric) -> ScalarField:
    """Scalar curvature via f sR_{f h} = sR_h - Lap_h log f."""
    s = m.surface
    lap_base = np.exp(-m.base_log) * s.lap0(m.phi)
    return ScalarField(s, np.exp(-m.phi) * (m.base_curvature - lap_base), "sR")


def integrate(f, m: ConformalMetric, axisymmetric: bool = False) -> float:
    """Integral of ``f`` against the volume form of ``m``."""
    s = m.surface
    v = np.broadcast_to(_vals(f, s), s.shape)
    density = v * np.exp(m.log_factor)
    if axisymmetric:
        if s.kind != "sphere":
            raise ValueError("axisymmetric quadrature is a sphere-chart option")
        spread = np.max(np.abs(density - density[:, :1]))
        if spread > 1e-12 * max(1.0, np.max(np.abs(density))):
            raise ValueError("integrand is not axisymmetric")
        w = s.quadrature_weights()[:, 0] / s.dr
        return float(TWO_PI * np.sum(w * density[:, 0]))
    return float(np.sum(s.quadrature_weights() * density))


def hodge_star(alpha: OneFormField, m: ConformalMetric | None = None) -> OneFormField:
    """(*alpha)_i = -alpha_p J_i^p; in conformal coordinates *du1 = du2."""
    if m is not None:
        same_surface(alpha, m)
    a = alpha.comps
    return OneFormField(alpha.surface, np.stack([-a[1], a[0]]), "*" + alpha.name)


def one_form_norm2(alpha: OneFormField, m: ConformalMetric) -> np.ndarray:
    return np.exp(-m.log_factor) * (alpha.comps[0] ** 2 + alpha.comps[1] ** 2)


def tensor_norm2(B: SymTensorField, m: ConformalMetric) -> np.ndarray:
    """Full contraction |B|^2_h = exp(-k L) * sum binom(k, m) B_m^2."""
    from math import comb
    k = B.rank
    flat = sum(comb(k, j) * B.comps[j] ** 2 for j in range(k + 1))
    return np.exp(-B.degree * m.log_factor) * flat


def gauss_bonnet_defect(m: ConformalMetric, genus: int) -> float:
    """Integral of sR minus 4 pi chi; zero up to quadrature error."""
    if genus not in (0, 1):
        raise ValueError("only genus 0 and 1 surfaces are discretized")
    if genus != m.surface.genus:
        raise ValueError("genus does not match the surface")
    return integrate(scalar_curvature(m), m) - 4.0 * np.pi * (2 - 2 * genus)


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

def _components(field_):
    if isinstance(field_, ScalarField):
        return field_.values[None], [field_.name], {"kind": "scalar"}
    if isinstance(field_, OneFormField):
        return field_.comps, [f"{field_.name}_1", f"{field_.name}_2"], {"kind": "oneform"}
    if isinstance(field_, SymTensorField):
        names = [f"{field_.name}_{m}" for m in range(field_.rank + 1)]
        return field_.comps, names, {"kind": "symtensor", "degree": field_.degree}
    raise TypeError(f"cannot serialize {type(field_).__name__}")


def _rebuild(surface, meta, comps, name):
    kind = meta["kind"]
    if kind == "scalar":
        return ScalarField(surface, comps[0], name)
    if kind == "oneform":
        return OneFormField(surface, comps, name)
    return SymTensorField(surface, int(meta["degree"]), comps, name)


def write_csv(field_, path) -> None:
    """Row-major dump, one row per grid node, after a one-line header.

    The header is ``# key=value`` tokens: surface type and parameters,
    resolution, field kind and component names. Floats use 17 significant
    digits so the round trip is exact.
    """
    comps, names, meta = _components(field_)
    desc = field_.surface.describe()
    tokens = [f"surface={desc['type']}"]
    tokens += [f"{k}={json.dumps(v, separators=(',', ':'))}" for k, v in desc.items() if k != "type"]
    tokens += [f"{k}={v}" for k, v in meta.items()]
    tokens.append(f"name={field_.name}")
    tokens.append("component=" + ",".join(names))
    data = comps.reshape(len(names), -1).T
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=" ".join(tokens), comments="# ")


def read_csv(path):
    with open(path) as fh:
        header = fh.readline()[2:].split()
    kv = dict(t.split("=", 1) for t in header)
    surf = {"type": kv.pop("surface")}
    keys = ("generator1", "generator2", "nx", "ny") if surf["type"] == "torus" \
        else ("rho_min", "rho_max", "n_rho", "n_ang")
    for k in keys:
        surf[k] = json.loads(kv[k])
    surface = surface_from_dict(surf)
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    comps = data.T.reshape((-1,) + surface.shape)
    meta = {"kind": kv["kind"]}
    if "degree" in kv:
        meta["degree"] = int(kv["degree"])
    return _rebuild(surface, meta, comps, kv["name"])


def to_json(field_) -> str:
    comps, names, meta = _components(field_)
    payload = base64.b64encode(np.ascontiguousarray(comps, dtype="<f8").tobytes()).decode()
    env = {"schema": 1, "surface": field_.surface.describe(), "name": field_.name,
           "components": names, **meta, "encoding": "base64-f8-le", "data": payload}
    return json.dumps(env)


def from_json(text: str):
    env = json.loads(text)
    surface = surface_from_dict(env["surface"])
    raw = np.frombuffer(base64.b64decode(env["data"]), dtype="<f8")
    comps = raw.reshape((len(env["components"]),) + surface.shape).copy()
    return _rebuild(surface, env, comps, env["name"])
