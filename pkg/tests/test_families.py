import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artifact.ah import curvature_quantities
from artifact.families import (FamilyError, SphereFamily, TorusFamily, kappa_of_t,
                               magnetic_geodesic, nu_from_kappa, ricci_flow_residual, tau,
                               theta_conversions, theta_from_kappa)
from artifact.grids import (ConformalMetric, LatticeTorus, ScalarField, SphereChart,
                            gauss_bonnet_defect, scalar_curvature)


@pytest.fixture(scope="module")
def chart():
    return SphereChart()


# sphere closed forms ---------------------------------------------------------------

def test_sphere_eval_examples():
    e = SphereFamily(0.0).eval(1.0)
    assert e["sR"] == pytest.approx(4.0, abs=1e-14)
    assert e["f"] == 0 and e["h_coeff"] == pytest.approx(1.0, abs=1e-14)
    e = SphereFamily(0.0).eval(0.0)
    assert e["sR"] == 0 and e["f"] ** 2 == pytest.approx(16.0, abs=1e-14)
    assert SphereFamily(3.0).eval(1.0)["sR"] == pytest.approx(5.0, abs=1e-14)
    with pytest.raises(FamilyError):
        SphereFamily(0.0).eval(-1.0)


@settings(max_examples=50, deadline=None)
@given(kappa=st.floats(-50, 50), rho=st.floats(1e-3, 1e3))
def test_sphere_closed_form_invariants(kappa, rho):
    f = SphereFamily(kappa)
    assert abs(f.mu) < 2
    e = f.eval(rho)
    # uR - 4|gamma|^2 = kappa (gamma Killing, so uR = sR) and sR^2 + f^2 = kappa^2 + 16
    assert e["sR"] - 4 * e["gamma_norm2"] == pytest.approx(kappa, abs=1e-12 * (1 + abs(kappa)))
    assert e["sR"] ** 2 + e["f"] ** 2 == pytest.approx(kappa**2 + 16, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(kappa=st.floats(-20, 20), rho=st.floats(1e-2, 1e2))
def test_sphere_inversion_symmetry(kappa, rho):
    f = SphereFamily(kappa)
    a, b = f.eval(rho), f.eval(1 / rho)
    # h_coeff |dz|^2 pulls back under z -> 1/z with Jacobian rho^-4
    assert b["h_coeff"] / rho**4 == pytest.approx(a["h_coeff"], rel=1e-12)
    assert b["sR"] == pytest.approx(a["sR"], rel=1e-12, abs=1e-12)
    assert b["f"] == pytest.approx(-a["f"], rel=1e-12, abs=1e-12)
    assert b["gamma_norm2"] == pytest.approx(a["gamma_norm2"], rel=1e-12)


def test_sphere_f_vanishes_on_equator(chart):
    f = SphereFamily(3.0).eval(chart.rho()[:, 0])["f"]
    change = np.nonzero(np.diff(np.sign(f)))[0]
    assert len(change) == 1
    i = change[0]
    assert chart.s[i] < 0 < chart.s[i + 1]


# parameter conversions -------------------------------------------------------------

def test_tau_and_nu():
    assert tau(0.0) == 0 and nu_from_kappa(0.0) == 0
    ks = np.linspace(-100, 1e4, 2001)
    nu = nu_from_kappa(ks)
    assert np.all(np.diff(nu) > 0) and np.all(nu < 8 * np.pi)
    assert 8 * np.pi - nu_from_kappa(1e6) < 1e-4
    assert SphereFamily(3.0).nu == pytest.approx(17.47910306749686, abs=1e-12)


def test_theta_cross_check():
    th = SphereFamily(3.0).theta
    assert th == pytest.approx(0.5 * np.arctan(4 / 3), abs=1e-15)
    k, nu = theta_conversions(th)
    assert k == pytest.approx(3.0, abs=1e-12)
    assert nu == pytest.approx(SphereFamily(3.0).nu, abs=1e-12)
    with pytest.raises(FamilyError):
        theta_conversions(0.0)
    with pytest.raises(FamilyError):
        theta_conversions(np.pi / 2)


@settings(max_examples=50, deadline=None)
@given(kappa=st.floats(-30, 30))
def test_theta_round_trip(kappa):
    k, nu = theta_conversions(theta_from_kappa(kappa))
    assert k == pytest.approx(kappa, abs=1e-10)
    assert nu == pytest.approx(float(nu_from_kappa(kappa)), abs=1e-10)


# volumes and lengths -----------------------------------------------------------------

def test_sphere_volume():
    assert SphereFamily(0.0).volume() == pytest.approx(np.pi**2, abs=1e-14)
    ks = [-1e6, -10, 0, 10, 1e6]
    v = [SphereFamily(k).volume() for k in ks]
    # decreasing from 2 pi^2 (kappa -> -inf) to 0 (kappa -> +inf)
    assert np.all(np.diff(v) < 0) and v[-1] < 3e-5
    assert v[0] == pytest.approx(2 * np.pi**2, rel=1e-5) and max(v) < 2 * np.pi**2
    for k in (-4.0, 0.0, 3.0):
        f = SphereFamily(k)
        assert f.volume_quadrature() == pytest.approx(f.volume(), rel=1e-8)
        assert f.nu == pytest.approx(k * f.volume(), rel=1e-12, abs=1e-14)


def test_equator_lengths():
    Lh, Lhat = SphereFamily(3.0).equator_lengths()
    assert Lh == pytest.approx(np.pi * np.sqrt(2), abs=1e-14)
    assert Lhat == pytest.approx(np.pi * np.sqrt(5), abs=1e-14)
    Lh, Lhat = SphereFamily(0.0).equator_lengths()
    assert Lh == pytest.approx(2 * np.pi, abs=1e-14)
    assert Lhat == pytest.approx(2 * np.sqrt(2) * np.pi, abs=1e-14)
    for k in (-7.0, 0.0, 3.0, 11.0):
        f = SphereFamily(k)
        Lh, Lhat = f.equator_lengths()
        assert f.equator_length_quadrature() == pytest.approx(Lh, rel=1e-12)
        assert Lhat / Lh == pytest.approx(2 * np.sqrt(2) * (k**2 + 16) ** 0.25 / 4, rel=1e-12)


# grid realization ---------------------------------------------------------------------

@pytest.mark.parametrize("kappa", [-8.0, 0.0, 3.0, 8.0])
def test_sphere_fd_curvature(chart, kappa):
    f = SphereFamily(kappa)
    m = f.metric(chart)
    sR = scalar_curvature(m).values
    exact = f.eval(chart.rho())["sR"]
    assert np.max(np.abs(sR - exact)[chart.interior()]) <= 1e-5
    assert abs(gauss_bonnet_defect(m, 0)) <= 1e-6


def test_sphere_exact_curvature_option(chart):
    f = SphereFamily(3.0)
    m = f.metric(chart, exact_curvature=True)
    assert np.array_equal(scalar_curvature(m).values, f.eval(chart.rho())["sR"])


# torus family ------------------------------------------------------------------------------

def test_torus_eval_examples():
    f = TorusFamily(-5.0)
    e = f.eval(0.0)
    assert e["h_coeff"] == pytest.approx(0.5, abs=1e-15) and e["sR"] == pytest.approx(-3, abs=1e-14)
    e = f.eval(np.pi / 2)
    assert e["h_coeff"] == pytest.approx(2.0, abs=1e-14) and e["sR"] == pytest.approx(3, abs=1e-14)
    s = np.random.default_rng(3).uniform(0, np.pi, 100)
    e = f.eval(s)
    assert np.max(np.abs(e["sR"] ** 2 + e["f"] ** 2 - 9)) < 1e-12
    assert np.max(np.abs(e["sR"] - 4 * e["gamma_norm2"] + 5)) < 1e-12
    assert np.array_equal(e["gamma_norm2"], e["h_coeff"])


def test_torus_rejects_kappa():
    for k in (-4.0, 0.0, 2.0):
        with pytest.raises(FamilyError):
            TorusFamily(k)
    with pytest.raises(FamilyError):
        TorusFamily(-5.0, s_periods=0)


def test_torus_f_zero_pattern():
    s = np.linspace(0, np.pi, 1001)[:-1] + 1e-4
    f = TorusFamily(-6.0).eval(s)["f"]
    change = s[np.nonzero(np.diff(np.sign(f)))[0]]
    # located to the sample spacing pi / 1000
    assert len(change) == 1 and abs(change[0] - np.pi / 2) < np.pi / 1000 + 1e-4


@pytest.mark.parametrize("kappa,n", [(-4.5, 64), (-5.0, 64), (-9.0, 128)])
def test_torus_grid(kappa, n):
    # h_max / h_min = (|kappa| + T) / (|kappa| - T) sets the resolution needed
    fam = TorusFamily(kappa)
    t = fam.lattice(n)
    m = fam.metric(t)
    _, s = t.coordinates()
    exact = fam.eval(s)["sR"]
    assert np.max(np.abs(scalar_curvature(m).values - exact)) <= 1e-9
    assert m.volume() == pytest.approx(fam.volume(), rel=1e-12)
    assert fam.nu < 0 and fam.nu == pytest.approx(kappa * np.pi**2, rel=1e-14)
    assert abs(gauss_bonnet_defect(m, 1)) <= 1e-9


# magnetic geodesics -------------------------------------------------------------------

@pytest.fixture(scope="module")
def geom3():
    return SphereFamily(3.0).geometry()


def test_equator_orbit(geom3):
    tr = magnetic_geodesic(geom3, start=(1.0, 0.0), T=2 * np.pi, steps=10000)
    assert np.max(np.abs(np.hypot(*tr.points.T) - 1)) <= 1e-8
    assert np.nanmax(np.abs(tr.kappa_geo)) <= 1e-6
    assert np.nanmax(np.abs(tr.kappa_expected)) <= 1e-12
    # one full revolution
    assert np.allclose(tr.points[-1], [1.0, 0.0], atol=1e-8)


def test_off_equator_orbit(geom3):
    tr = magnetic_geodesic(geom3, start=(0.5, 0.0), T=2 * np.pi, steps=10000)
    assert np.max(np.abs(np.hypot(*tr.points.T) - 0.5)) <= 1e-8
    ok = np.isfinite(tr.kappa_geo)
    assert np.max(np.abs(tr.kappa_geo - tr.kappa_expected)[ok]) <= 1e-6
    assert np.ptp(tr.kappa_expected) <= 1e-6
    assert abs(tr.kappa_expected[0]) > 0.1


def test_plain_geodesic_energy(geom3):
    tr = magnetic_geodesic(geom3, start=(0.5, 0.0), v0=(0.3, 1.0), T=3.0, steps=10000, scale=0.0)
    assert tr.energy_drift <= 1e-10
    assert np.nanmax(np.abs(tr.kappa_geo)) <= 1e-6


def test_magnetic_scale_changes_orbit(geom3):
    a = magnetic_geodesic(geom3, start=(0.5, 0.0), T=1.0, steps=2000)
    b = magnetic_geodesic(geom3, start=(0.5, 0.0), T=1.0, steps=2000, scale=0.0)
    assert np.max(np.abs(a.points - b.points)) > 1e-2


def test_torus_closed_form_orbit():
    g = TorusFamily(-5.0).geometry()
    tr = magnetic_geodesic(g, start=(0.0, 0.4), T=np.pi, steps=4000)
    assert np.max(np.abs(tr.points[:, 1] - 0.4)) <= 1e-8
    ok = np.isfinite(tr.kappa_geo)
    assert np.max(np.abs(tr.kappa_geo - tr.kappa_expected)[ok]) <= 1e-6


def test_sampled_geometry_matches_closed_form():
    fam = TorusFamily(-5.0)
    t = fam.lattice(64)
    a = fam.structure(t)
    f_field = curvature_quantities(a)["f"]
    grid = magnetic_geodesic(a.metric, f_field, start=(0.1, 0.4), v0=(1.0, 0.3), T=1.0, steps=2000)
    exact = magnetic_geodesic(fam.geometry(), start=(0.1, 0.4), v0=(1.0, 0.3), T=1.0, steps=2000)
    assert np.max(np.abs(grid.points - exact.points)) <= 1e-6
    assert grid.kappa_expected is None


def test_geodesic_errors(geom3, tmp_path):
    t = LatticeTorus(nx=16, ny=16)
    with pytest.raises(FamilyError):
        magnetic_geodesic(ConformalMetric.flat(t), None)
    chart = SphereChart(np.exp(-1), np.exp(1), 64, 32)
    m = ConformalMetric.round_sphere(chart)
    with pytest.raises(FamilyError, match="left the chart"):
        magnetic_geodesic(m, ScalarField(chart, np.zeros(chart.shape)), start=(0.0, 0.0),
                          v0=(1.0, 0.0), T=5.0, steps=500)
    tr = magnetic_geodesic(geom3, T=0.1, steps=10)
    tr.to_csv(tmp_path / "tr.csv")
    assert (tmp_path / "tr.csv").read_text().splitlines()[0] == "t,x,y,energy,kappa_geo"


# Ricci flow -------------------------------------------------------------------------------

SPHERE_T = [-0.5, -0.45, -np.pi / 8, -0.3, -0.2]
TORUS_T = [0.35, 0.5, 0.75, 1.0, 1.5]


@pytest.mark.parametrize("t", SPHERE_T)
def test_ricci_sphere(t):
    assert ricci_flow_residual("sphere", t, 1e-4) <= 1e-6


def test_ricci_sphere_kappa0_point():
    # the flow passes kappa = 0 at t = -pi/8 on this branch
    assert kappa_of_t("sphere", -np.pi / 8) == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("t", TORUS_T)
def test_ricci_torus(t):
    assert ricci_flow_residual("torus", t, 1e-4) <= 1e-6


@pytest.mark.parametrize("branch,t", [("sphere", -0.45), ("torus", 0.5)])
def test_ricci_second_order(branch, t):
    r1 = ricci_flow_residual(branch, t, 2e-3)
    r2 = ricci_flow_residual(branch, t, 1e-3)
    assert r1 / r2 == pytest.approx(4.0, rel=0.05)


def test_ricci_literal_branch_fails():
    assert ricci_flow_residual("sphere-literal", -np.pi / 4) > 1.0


def test_ricci_errors():
    with pytest.raises(FamilyError):
        ricci_flow_residual("sphere", 0.1)
    with pytest.raises(FamilyError):
        ricci_flow_residual("torus", -0.1)
    with pytest.raises(FamilyError):
        ricci_flow_residual("torus", 5e-5)  # t - delta leaves the branch
    with pytest.raises(FamilyError):
        kappa_of_t("cylinder", 1.0)
