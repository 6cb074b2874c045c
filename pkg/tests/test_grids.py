import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artifact.families import SphereFamily
from artifact.grids import (ConformalMetric, LatticeTorus, OneFormField, ScalarField,
                            SphereChart, SurfaceMismatch, SymTensorField, from_json,
                            gauss_bonnet_defect, hodge_star, integrate, laplacian,
                            one_form_norm2, read_csv, scalar_curvature, to_json, write_csv)


@pytest.fixture(scope="module")
def torus():
    return LatticeTorus(nx=64, ny=64)


@pytest.fixture(scope="module")
def chart():
    return SphereChart()


def test_torus_invariants():
    with pytest.raises(ValueError):
        LatticeTorus((1.0, 0.0), (2.0, 0.0))
    with pytest.raises(ValueError):
        LatticeTorus(nx=63)
    with pytest.raises(ValueError):
        LatticeTorus(nx=6, ny=6)


def test_chart_invariants():
    with pytest.raises(ValueError):
        SphereChart(0.5, 3.0)
    with pytest.raises(ValueError):
        SphereChart(1.5, 1 / 1.5)


def test_laplacian_eigenfunction(torus):
    X, Y = torus.coordinates()
    m = ConformalMetric.flat(torus)
    assert np.max(np.abs(laplacian(np.cos(X), m).values + np.cos(X))) < 1e-12
    assert np.max(np.abs(laplacian(np.full(torus.shape, 3.0), m).values)) < 1e-12


def test_laplacian_scaled_metric(torus):
    X, Y = torus.coordinates()
    f = np.cos(X) * np.cos(2 * Y)
    m = ConformalMetric.flat(torus, 0.5)
    expect = -5 * np.exp(-0.5) * f
    assert np.max(np.abs(laplacian(f, m).values - expect)) < 1e-12


def test_spectral_derivative_up_to_quarter_band(torus):
    X, _ = torus.coordinates()
    m = ConformalMetric.flat(torus)
    for k in range(1, torus.nx // 4 + 1):
        err = np.max(np.abs(laplacian(np.cos(k * X), m).values + k * k * np.cos(k * X)))
        assert err < 1e-12 * k * k


def test_oblique_lattice_laplacian():
    t = LatticeTorus((2 * np.pi, 0.0), (np.pi, 2 * np.pi), 64, 64)
    X, Y = t.coordinates()
    # cos(y) is periodic on this lattice since the second generator shifts y by 2 pi
    m = ConformalMetric.flat(t)
    assert np.max(np.abs(laplacian(np.cos(Y), m).values + np.cos(Y))) < 1e-11


def test_scalar_curvature_examples(torus, chart):
    assert np.max(np.abs(scalar_curvature(ConformalMetric.flat(torus)).values)) == 0
    sR = scalar_curvature(ConformalMetric.round_sphere(chart)).values
    assert np.max(np.abs(sR - 2)) < 1e-12
    X, _ = torus.coordinates()
    m = ConformalMetric.flat(torus, 0.3 * np.cos(X))
    expect = np.exp(-0.3 * np.cos(X)) * 0.3 * np.cos(X)
    assert np.max(np.abs(scalar_curvature(m).values - expect)) < 1e-12


def test_scalar_curvature_conformal_covariance(torus):
    X, Y = torus.coordinates()
    a = 0.2 * np.sin(X + Y)
    b = 0.1 * np.cos(2 * X) - 0.3 * np.sin(Y)
    via_explicit = ConformalMetric.explicit(torus, a, phi=b)
    via_flat = ConformalMetric.flat(torus, a + b)
    diff = scalar_curvature(via_explicit).values - scalar_curvature(via_flat).values
    assert np.max(np.abs(diff)) < 1e-10


def test_integrate_examples(chart):
    unit = LatticeTorus((1.0, 0.0), (0.0, 1.0), 16, 16)
    assert integrate(1.0, ConformalMetric.flat(unit)) == pytest.approx(1.0, abs=1e-14)
    assert integrate(1.0, ConformalMetric.round_sphere(chart)) == pytest.approx(4 * np.pi, rel=1e-8)
    m = SphereFamily(0.0).metric(chart)
    assert integrate(scalar_curvature(m), m) == pytest.approx(8 * np.pi, rel=1e-8)


def test_integrate_axisymmetric(chart):
    m = ConformalMetric.round_sphere(chart)
    full = integrate(1.0, m)
    assert integrate(1.0, m, axisymmetric=True) == pytest.approx(full, rel=1e-12)
    _, R = chart.log_polar()
    with pytest.raises(ValueError):
        integrate(np.cos(R), m, axisymmetric=True)


def test_integral_of_laplacian_vanishes(torus, chart):
    X, Y = torus.coordinates()
    f = np.exp(np.sin(X) * np.cos(Y))
    m = ConformalMetric.flat(torus, 0.4 * np.cos(X))
    assert abs(integrate(laplacian(f, m), m)) < 1e-10 * integrate(np.abs(f), m)
    Xs, Ys = chart.coordinates()
    rho2 = Xs**2 + Ys**2
    g = Xs / (1 + rho2)  # smooth on the whole sphere
    ms = ConformalMetric.round_sphere(chart)
    assert abs(integrate(laplacian(g, ms), ms)) < 1e-7


def test_hodge_star(torus):
    dx = OneFormField(torus, np.stack([np.ones(torus.shape), np.zeros(torus.shape)]))
    star = hodge_star(dx)
    assert np.all(star.comps[0] == 0) and np.all(star.comps[1] == 1)
    assert np.all(hodge_star(star).comps == -dx.comps)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4))
def test_hodge_star_isometry(c):
    t = LatticeTorus(nx=8, ny=8)
    X, Y = t.coordinates()
    a = OneFormField(t, np.stack([c[0] + c[1] * np.sin(X), c[2] + c[3] * np.cos(Y)]))
    m = ConformalMetric.flat(t, 0.3 * np.cos(X))
    assert np.array_equal(one_form_norm2(hodge_star(a), m), one_form_norm2(a, m))
    assert np.array_equal(hodge_star(hodge_star(a)).comps, -a.comps)


def test_gauss_bonnet(torus, chart):
    X, _ = torus.coordinates()
    assert abs(gauss_bonnet_defect(ConformalMetric.flat(torus, np.sin(X)), 1)) < 1e-8
    assert abs(gauss_bonnet_defect(ConformalMetric.round_sphere(chart), 0)) < 1e-6
    assert abs(gauss_bonnet_defect(SphereFamily(3.0).metric(chart), 0)) < 1e-6
    with pytest.raises(ValueError):
        gauss_bonnet_defect(ConformalMetric.flat(torus), 2)


def test_surface_mismatch(torus, chart):
    with pytest.raises(SurfaceMismatch):
        ScalarField(torus, np.zeros((10, 10)))
    with pytest.raises(SurfaceMismatch):
        laplacian(ScalarField(chart, np.zeros(chart.shape)), ConformalMetric.flat(torus))
    with pytest.raises(SurfaceMismatch):
        ConformalMetric.flat(chart)


@pytest.mark.parametrize("make", ["scalar", "oneform", "tensor"])
@pytest.mark.parametrize("where", ["torus", "sphere"])
def test_round_trips(tmp_path, make, where):
    s = LatticeTorus((2.0, 0.0), (0.5, 3.0), 16, 8) if where == "torus" else \
        SphereChart(np.exp(-1), np.exp(1), 12, 8)
    rng = np.random.default_rng(1)
    if make == "scalar":
        f = ScalarField(s, rng.standard_normal(s.shape), "phi")
    elif make == "oneform":
        f = OneFormField(s, rng.standard_normal((2,) + s.shape), "gamma")
    else:
        f = SymTensorField(s, 3, rng.standard_normal((4,) + s.shape), "B")
    p = tmp_path / "f.csv"
    write_csv(f, p)
    header = p.read_text().splitlines()[0]
    assert header.startswith("# surface=" + s.kind) and "component=" in header
    for g in (read_csv(p), from_json(to_json(f))):
        assert type(g) is type(f) and g.name == f.name and g.surface == s
        a = f.values if make == "scalar" else f.comps
        b = g.values if make == "scalar" else g.comps
        assert np.array_equal(a, b)
    env = json.loads(to_json(f))
    assert env["schema"] == 1 and env["surface"]["type"] == s.kind
