"""Holomorphic k-differentials as real trace-free symmetric tensors.

A k-differential ``sigma = q(w) dw^k`` (``k > 0``) or ``q(w) d_w^{|k|}``
(``k < 0``) is stored through its real part ``B = 2 Re sigma``. With the
full-contraction norm on real tensors, ``|sigma|^2 = |B|^2 / 2``.
"""
from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .grids import (FD_ACCURACY, ConformalMetric, OneFormField, ScalarField, SymTensorField,
                    laplacian, same_surface, scalar_curvature, tensor_norm2)


class DifferentialError(ValueError):
    pass


# --------------------------------------------------------------------------
# realization
# --------------------------------------------------------------------------

def _components_from_q(q: np.ndarray, k: int) -> np.ndarray:
    """Real components of 2 Re(q dz^k) (or 2 Re(q d_z^|k|) for k < 0)."""
    n = abs(k)
    if k > 0:
        phases = [1j**m for m in range(n + 1)]
    else:
        # d_z = (d_x - i d_y) / 2
        phases = [0.5**n * (-1j) ** m for m in range(n + 1)]
    return np.stack([2.0 * np.real(q * p) for p in phases])


def _q_from_components(comps: np.ndarray, k: int) -> np.ndarray:
    if k > 0:
        return 0.5 * (comps[0] - 1j * comps[1])
    return (comps[0] + 1j * comps[1]) / (2.0 * 0.5 ** abs(k))


@dataclass(frozen=True, eq=False)
class KDifferential:
    """Real part of a holomorphic k-differential sampled on a surface.

    On a torus the coefficient is a constant ``c`` in the flat coordinate
    ``z = x + i y``. On a sphere chart it is a polynomial ``p(z)`` in the
    stereographic coordinate, given by ascending coefficients; it is
    converted to the chart coordinate via ``dz = z dw``.
    """

    degree: int
    coefficient: tuple
    field: SymTensorField

    @property
    def surface(self):
        return self.field.surface

    @property
    def B(self) -> SymTensorField:
        return self.field

    def describe(self) -> dict:
        return {"degree": self.degree,
                "coefficient": [[c.real, c.imag] for c in self.coefficient],
                "surface": self.surface.describe()}


def realize(k: int, coeff, surface) -> KDifferential:
    """Sample ``B = 2 Re(coeff dz^k)`` on ``surface``."""
    if k == 0:
        raise DifferentialError("degree must be nonzero")
    coeffs = np.atleast_1d(np.asarray(coeff, dtype=complex))
    if coeffs.ndim != 1:
        raise DifferentialError("coefficient must be a scalar or a 1-D list")
    if surface.kind == "torus":
        if coeffs.size != 1:
            raise DifferentialError("torus differentials must have constant coefficient")
        q = np.full(surface.shape, coeffs[0])
    else:
        S, R = surface.log_polar()
        z = np.exp(S + 1j * R)
        q = np.polynomial.polynomial.polyval(z, coeffs) * z**k
    comps = _components_from_q(q, k)
    name = "X" if k < 0 else "B"
    return KDifferential(k, tuple(complex(c) for c in coeffs),
                         SymTensorField(surface, k, comps, name))


def complex_structure(B: SymTensorField) -> SymTensorField:
    """The induced action J on a trace-free symmetric tensor: 2 Re(i sigma)."""
    q = _q_from_components(B.comps, B.degree)
    return SymTensorField(B.surface, B.degree, _components_from_q(1j * q, B.degree), "J" + B.name)


def sigma_norm2(B: SymTensorField, m: ConformalMetric) -> np.ndarray:
    return 0.5 * tensor_norm2(B, m)


def trace(B: SymTensorField) -> np.ndarray:
    """Coordinate trace over one pair of indices (conformally invariant zero set)."""
    return B.comps[:-2] + B.comps[2:]


# --------------------------------------------------------------------------
# covariant calculus in conformal coordinates
# --------------------------------------------------------------------------

def christoffel(m: ConformalMetric) -> np.ndarray:
    """Gamma[q, p, i] for the metric exp(L) delta."""
    Lx = m.surface.grad(m.log_factor)
    G = np.zeros((2, 2, 2) + m.surface.shape)
    for q in range(2):
        for p in range(2):
            for i in range(2):
                G[q, p, i] = 0.5 * ((p == q) * Lx[i] + (i == q) * Lx[p] - (p == i) * Lx[q])
    return G


def covariant_derivative(T: np.ndarray, m: ConformalMetric, contravariant: bool = False):
    """D T for a full tensor array of shape (2,)*r + grid; derivative index first."""
    s = m.surface
    r = T.ndim - 2
    G = christoffel(m)
    dT = np.stack(s.grad(T))  # (p, i1..ir, grid)
    letters = "abcdefgh"[:r]
    for slot in range(r):
        src = letters[:slot] + "q" + letters[slot + 1:]
        if contravariant:
            # + Gamma^{i_s}_{p q} T^{..q..}
            dT += np.einsum(f"{letters[slot]}pq...,{src}...->p{letters}...", G, T)
        else:
            # - Gamma^q_{p i_s} T_{..q..}
            dT -= np.einsum(f"qp{letters[slot]}...,{src}...->p{letters}...", G, T)
    return dT


def full_norm2(T: np.ndarray, m: ConformalMetric, covariant_rank: int) -> np.ndarray:
    """|T|^2_h for a full array; ``covariant_rank`` may be negative."""
    axes = tuple(range(T.ndim - 2))
    return np.exp(-covariant_rank * m.log_factor) * np.sum(T**2, axis=axes)


def divergence(B: SymTensorField, m: ConformalMetric) -> np.ndarray:
    """h^{pq} D_p B_{q i2 .. ik} as a full array of rank k-1."""
    if B.degree < 1:
        raise DifferentialError("divergence is taken of covariant tensors")
    DB = covariant_derivative(B.full(), m)
    return np.exp(-m.log_factor) * (DB[0, 0] + DB[1, 1])


def _interior_max(values: np.ndarray, surface, mask=None) -> float:
    sel = surface.interior()
    if mask is not None:
        sel = sel & mask
    if not sel.any():
        return 0.0
    return float(np.max(np.abs(values[sel])))


def _field(d):
    return d.field if isinstance(d, KDifferential) else d


# --------------------------------------------------------------------------
# residual checks
# --------------------------------------------------------------------------

def codazzi_residual(d, m: ConformalMetric) -> float:
    """Max h-norm of div_h B; zero iff B is the real part of a holomorphic differential."""
    B = _field(d)
    same_surface(B, m)
    if B.degree <= 1:
        raise DifferentialError("codazzi residual needs degree k > 1")
    div = divergence(B, m)
    return _interior_max(np.sqrt(full_norm2(div, m, B.degree - 1)), B.surface)


def killing_tensor(gamma: OneFormField, m: ConformalMetric) -> np.ndarray:
    """2 D_(i gamma_j) as a (2, 2) + grid array."""
    Dg = covariant_derivative(gamma.comps, m)
    return Dg + np.swapaxes(Dg, 0, 1)


def killing_residual(gamma: OneFormField, m: ConformalMetric) -> float:
    """Max h-norm of the symmetrized covariant derivative 2 D_(i gamma_j)."""
    same_surface(gamma, m)
    K = killing_tensor(gamma, m)
    return _interior_max(np.sqrt(full_norm2(K, m, 2)), gamma.surface)


def admissible_mask(d, m: ConformalMetric, eps_rel: float = 1e-6) -> np.ndarray:
    n2 = sigma_norm2(_field(d), m)
    return n2 > eps_rel * np.max(n2)


def _safe_log(n2):
    # zeros of sigma become large negative values instead of -inf
    return np.log(np.maximum(n2, np.finfo(float).tiny))


def _shrink(mask, reach=FD_ACCURACY // 2):
    """Points whose difference stencils stay inside ``mask``."""
    inner = mask.copy()
    for ax in (0, 1):
        for sh in range(1, reach + 1):
            inner &= np.roll(mask, sh, axis=ax) & np.roll(mask, -sh, axis=ax)
    return inner


def weitzenbock_residual(d, m: ConformalMetric, k: int | None = None,
                         eps_rel: float = 1e-6) -> tuple[float, float]:
    """Residuals of Lap|sigma|^2 = 2|D sigma|^2 + k sR |sigma|^2 and of
    Lap log|sigma|^2 = k sR on the admissible set.

    The first is scaled pointwise by the largest of its three terms so the
    number is comparable across the huge dynamic range of |sigma|^2 on a
    sphere chart. ``k`` defaults to the degree of ``d``; passing a wrong
    value is how the formula's linearity in k is probed.
    """
    B = _field(d)
    same_surface(B, m)
    if not np.any(B.comps):
        raise DifferentialError("differential vanishes identically")
    k = B.degree if k is None else k
    sR = scalar_curvature(m).values
    n2 = sigma_norm2(B, m)
    lap = laplacian(n2, m).values
    DB = covariant_derivative(B.full(), m, contravariant=B.degree < 0)
    # D sigma carries one more covariant index than sigma
    Dsig2 = 0.5 * full_norm2(DB, m, B.degree + 1)
    terms = (lap, 2.0 * Dsig2, k * sR * n2)
    scale = np.maximum.reduce([np.abs(t) for t in terms])
    scale = np.where(scale > 0, scale, 1.0)
    r1 = (terms[0] - terms[1] - terms[2]) / scale
    mask = admissible_mask(B, m, eps_rel)
    r2 = laplacian(_safe_log(n2), m).values - k * sR
    return _interior_max(r1, B.surface), _interior_max(r2, B.surface, _shrink(mask))


def singular_flat_metric(d, m: ConformalMetric, eps_rel: float = 1e-6,
                         min_fraction: float = 0.1):
    """The metric |sigma|^{2/k} h and its flatness defect on {|sigma|^2 > eps}."""
    B = _field(d)
    same_surface(B, m)
    mask = admissible_mask(B, m, eps_rel)
    if mask.mean() < min_fraction:
        raise DifferentialError("differential vanishes on too much of the grid")
    n2 = sigma_norm2(B, m)
    L = m.log_factor + _safe_log(n2) / B.degree
    flat = ConformalMetric.explicit(m.surface, L)
    defect = _interior_max(flat.base_curvature, m.surface, _shrink(mask))
    return flat, defect


def cone_angle(k: int, beta: int) -> float:
    """Cone angle 2 pi (beta/k + 1) of the flat metric at a zero of order beta."""
    if k == 0 or beta / k <= -1:
        raise DifferentialError("need beta/k > -1")
    return 2.0 * np.pi * (beta / k + 1.0)


def zero_order_budget(k: int, genus: int) -> int:
    """Total order of zeros of a holomorphic k-differential: 2k(g - 1)."""
    return 2 * k * (genus - 1)


def contract_vector(B: SymTensorField, X: np.ndarray) -> np.ndarray:
    """iota(X) B as a full array of rank k-1; X has components (2,) + grid."""
    rest = "jklmn"[:B.rank - 1]
    return np.einsum(f"i...,i{rest}...->{rest}...", X, B.full())
