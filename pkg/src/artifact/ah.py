"""AH structures on surfaces and their Einstein and vortex residuals.

An AH structure is represented by a distinguished metric ``h``, the cubic
torsion ``B`` lowered with ``h`` and the Faraday primitive ``gamma`` of
``h``. All curvature quantities follow from

    sR = uR + |B|^2 / 4 + 2 delta(gamma),   F = -d gamma,   2 F = f omega.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .differentials import (KDifferential, _components_from_q, covariant_derivative,
                            divergence, full_norm2, killing_residual, realize)
from .grids import (FD_ACCURACY, ConformalMetric, OneFormField, ScalarField, SymTensorField,
                    integrate, one_form_norm2, same_surface, scalar_curvature,
                    tensor_norm2)
from .solver import OperatorSpec


class NotEinstein(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AHStructure:
    metric: ConformalMetric
    B: SymTensorField | None = None
    gamma: OneFormField | None = None

    def __post_init__(self):
        B = self.B.field if isinstance(self.B, KDifferential) else self.B
        s = self.metric.surface
        if B is None:
            B = SymTensorField(s, 3, np.zeros((4,) + s.shape))
        if B.degree != 3:
            raise ValueError("cubic torsion must have degree 3")
        gamma = self.gamma
        if gamma is None:
            gamma = OneFormField(s, np.zeros((2,) + s.shape), "gamma")
        same_surface(self.metric, B, gamma)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "gamma", gamma)

    @property
    def surface(self):
        return self.metric.surface

    @property
    def is_exact(self) -> bool:
        return not np.any(self.gamma.comps)

    @property
    def is_weyl(self) -> bool:
        return not np.any(self.B.comps)

    @cached_property
    def _q(self) -> dict:
        m, s = self.metric, self.surface
        eL = np.exp(-m.log_factor)
        g = self.gamma.comps
        d1 = s.grad(g[0])
        d2 = s.grad(g[1])
        sR = scalar_curvature(m).values
        B2 = tensor_norm2(self.B, m)
        gamma2 = one_form_norm2(self.gamma, m)
        delta = -eL * (d1[0] + d2[1])
        f = -2.0 * eL * (d2[0] - d1[1])
        uR = sR - 0.25 * B2 - 2.0 * delta
        return {"sR": sR, "uR": uR, "f": f, "B2": B2, "gamma2": gamma2, "delta_gamma": delta}

    def curvature_quantities(self) -> dict:
        return {k: ScalarField(self.surface, v, k) for k, v in self._q.items()}


def curvature_quantities(a: AHStructure) -> dict:
    """sR, uR, f, |B|^2, |gamma|^2 and delta(gamma) as scalar fields."""
    return a.curvature_quantities()


def _imax(values, surface, margin=None):
    return float(np.max(np.abs(values[surface.interior(margin)])))


def einstein_residuals(a: AHStructure) -> dict:
    """Max-norms of the four Einstein equations.

    ``divB`` is the divergence of B, or 4E = div B - 2 iota(gamma) B when
    gamma is nonzero. ``Bgamma`` is |B|^2 gamma, ``killing`` is
    2 D_(i gamma_j) and ``const_defect`` is d(uR - 4|gamma|^2).
    """
    m, s = a.metric, a.surface
    q = a._q
    div = divergence(a.B, m)
    if not a.is_exact:
        # beta_ij^p gamma_p = h^{pq} B_ijq gamma_p
        div = div - 2.0 * np.exp(-m.log_factor) * np.einsum(
            "p...,ijp...->ij...", a.gamma.comps, a.B.full())
    res = {
        "divB": _imax(np.sqrt(full_norm2(div, m, 2)), s),
        "Bgamma": _imax(q["B2"] * np.sqrt(q["gamma2"]), s),
        "killing": killing_residual(a.gamma, m),
    }
    c = q["uR"] - 4.0 * q["gamma2"]
    dc = np.stack(s.grad(c))
    # a derivative of a curvature: keep clear of the one-sided edge stencils
    res["const_defect"] = _imax(np.sqrt(full_norm2(dc, m, 1)), s, margin=2 * (FD_ACCURACY // 2))
    return res


def vortex_constant(a: AHStructure, rel_spread: float = 1e-4):
    """Volume-weighted mean kappa of uR - 4|gamma|^2 and its relative spread."""
    q = a._q
    c = q["uR"] - 4.0 * q["gamma2"]
    vol = a.metric.volume()
    kappa = integrate(c, a.metric) / vol
    spread = _imax(c - kappa, a.surface) / max(1.0, abs(kappa))
    if spread > rel_spread:
        raise NotEinstein(f"uR - 4|gamma|^2 varies by {spread:.2e} (relative)")
    return kappa, spread, vol


def vortex_identity(a: AHStructure, genus: int, rel_spread: float = 1e-4) -> dict:
    """Vortex parameter nu = kappa vol and the defect of
    8 pi (1 - g) = ||B||^2 / 4 + 4 ||gamma||^2 + nu."""
    if genus not in (0, 1):
        raise ValueError("only genus 0 and 1 are discretized")
    kappa, spread, vol = vortex_constant(a, rel_spread)
    q = a._q
    nB = integrate(q["B2"], a.metric)
    ng = integrate(q["gamma2"], a.metric)
    nu = kappa * vol
    bound = 8.0 * np.pi * (1 - genus)
    return {"nu": nu, "kappa": kappa, "volume": vol, "B_norm2": nB, "gamma_norm2": ng,
            "defect": bound - 0.25 * nB - 4.0 * ng - nu,
            "nu_below_bound": bool(nu <= bound + 1e-9), "spread": spread}


def vortex_residual(a: AHStructure, tol: float = 1e-12) -> float:
    """Max-norm of i Lam(Omega) + sign(q) |s|^2 / 2 - tau / 2.

    Exact structures use the cube of the canonical bundle (q = 3,
    s = (3/2)^(1/2) B^(3,0), tau = -3 kappa); Weyl structures use its
    dual (q = -1, s = 2^(3/2) gamma^(1,0), tau = kappa). In both cases
    i Lam(Omega) = -(q/2) sR.
    """
    exact = np.max(np.abs(a.gamma.comps)) <= tol
    weyl = np.max(np.abs(a.B.comps)) <= tol
    if not (exact or weyl):
        raise ValueError("vortex residual needs an exact or a Weyl structure")
    q = a._q
    kappa, _, _ = vortex_constant(a, rel_spread=np.inf)
    if exact:
        r = -1.5 * q["sR"] + 0.5 * 0.75 * q["B2"] + 1.5 * kappa
    else:
        r = 0.5 * q["sR"] - 0.5 * 4.0 * q["gamma2"] - 0.5 * kappa
    return _imax(r, a.surface)


def complex_scalar_invariant(a: AHStructure) -> dict:
    """uR^2 + f^2: its mean, max deviation, and (max uR)^2 for comparison."""
    q = a._q
    v = q["uR"] ** 2 + q["f"] ** 2
    inner = a.surface.interior()
    mean = integrate(v, a.metric) / a.metric.volume()
    return {"value": mean, "spread": float(np.max(np.abs(v - mean)[inner])),
            "max_uR_squared": float(np.max(q["uR"][inner]) ** 2)}


def calabi_slack(a: AHStructure) -> float:
    """min of -4 uR - |B|^2; non-negative for exact negative structures."""
    q = a._q
    return float(np.min((-4.0 * q["uR"] - q["B2"])[a.surface.interior()]))


def gamma_flow_derivative(a: AHStructure) -> float:
    """Max of |d uR (gamma^sharp)|: uR is constant along the Killing flow."""
    q, m = a._q, a.metric
    du = a.surface.grad(q["uR"])
    v = np.exp(-m.log_factor) * (a.gamma.comps[0] * du[0] + a.gamma.comps[1] * du[1])
    return _imax(v, a.surface)


def normalized(a: AHStructure, mode: str, value: float):
    """Homothetic rescaling c h fixing the volume or the constant uR.

    Under h -> c h the lowered torsion scales by c and gamma is unchanged.
    Returns the new structure and the factor c.
    """
    if mode == "fix-volume":
        c = value / a.metric.volume()
    elif mode == "fix-uR":
        uR = a._q["uR"]
        mean = integrate(uR, a.metric) / a.metric.volume()
        if np.max(np.abs(uR - mean)) > 1e-8 * max(1.0, abs(mean)):
            raise ValueError("fix-uR needs constant uR")
        c = mean / value
        if c <= 0:
            raise ValueError("uR and target must have the same sign")
    else:
        raise ValueError("mode is 'fix-volume' or 'fix-uR'")
    m = a.metric.rescaled(np.log(c))
    B = SymTensorField(a.surface, 3, c * a.B.comps, a.B.name)
    return AHStructure(m, B, a.gamma), c


def exact_torus(torus, coeff=1.0 / np.sqrt(2.0)) -> AHStructure:
    """Flat metric with constant cubic torsion 2 Re(coeff dz^3)."""
    return AHStructure(ConformalMetric.flat(torus), realize(3, coeff, torus).field)


def perturbed(a: AHStructure, amplitude: float = 0.1) -> AHStructure:
    """Add 2 Re(amplitude sin(x) dz^3) to B; trace-free but not holomorphic."""
    s = a.surface
    X, _ = s.coordinates()
    extra = _components_from_q(amplitude * np.sin(X) + 0j, 3)
    return AHStructure(a.metric, SymTensorField(s, 3, a.B.comps + extra, "B"), a.gamma)


def covariant_B_derivative(a: AHStructure) -> np.ndarray:
    return covariant_derivative(a.B.full(), a.metric)


def operator_data(a: AHStructure, background: ConformalMetric | None = None):
    """Data (h0, kappa, term) of W and the phi with a.metric = e^phi h0.

    For an Einstein structure W(phi) vanishes: exact structures give the
    cubic term B, Weyl structures the vector field X = gamma^sharp (degree
    -1), whose h0-norm enters as 4 e^(2 phi) |X|^2. ``background`` defaults
    to a.metric with its conformal factor phi removed.
    """
    m = a.metric
    if background is None:
        background = ConformalMetric(m.surface, m.base, 0.0, m.base_log, m.base_curvature)
    same_surface(m, background)
    phi = m.log_factor - background.log_factor
    kappa, _, _ = vortex_constant(a, rel_spread=np.inf)
    if a.is_weyl and not a.is_exact:
        X = np.exp(-m.log_factor) * a.gamma.comps
        term = SymTensorField(a.surface, -1, X, "X")
    elif a.is_exact:
        term = a.B
    else:
        raise ValueError("an Einstein structure is exact or Weyl")
    return OperatorSpec(background, kappa, (term,)), phi
