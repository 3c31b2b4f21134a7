"""Domain, grid, quadrature, and boundary-forcing tests."""

import numpy as np
import pytest

from forchflow.expressions import FieldExpr
from forchflow.geometry import SIDES, BoundaryForcing, Grid, PorousDomain, materialize


def test_domain_validation_and_radius():
    with pytest.raises(ValueError):
        PorousDomain(1.0, 0.0, 0.0, 1.0)
    dom = PorousDomain(-1.0, 2.0, -3.0, 1.0)
    assert dom.max_radius == pytest.approx(np.hypot(2.0, 3.0))
    assert dom.bounds == (-1.0, 2.0, -3.0, 1.0)
    np.testing.assert_allclose(dom.normal("left"), [-1.0, 0.0])
    np.testing.assert_allclose(dom.normal("top"), [0.0, 1.0])


def test_grid_geometry():
    g = Grid(PorousDomain(0.0, 2.0, 0.0, 1.0), nx=4, ny=5)
    assert g.hx == pytest.approx(0.5)
    assert g.hy == pytest.approx(0.2)
    assert g.cell_area == pytest.approx(0.1)
    np.testing.assert_allclose(g.xc, [0.25, 0.75, 1.25, 1.75])
    assert g.yc[0] == pytest.approx(0.1)
    X, Y = g.cell_centers
    assert X.shape == (4, 5)
    assert X[2, 0] == pytest.approx(1.25)
    assert Y[0, 3] == pytest.approx(0.7)


def test_grid_refine():
    g = Grid(PorousDomain(), 8, 8).refine(2)
    assert (g.nx, g.ny) == (16, 16)
    assert g.hx == pytest.approx(1.0 / 16.0)


def test_integrate_midpoint_rule():
    g = Grid(PorousDomain(0.0, 2.0, 0.0, 1.0), 16, 16)
    assert g.integrate(np.ones((16, 16))) == pytest.approx(2.0)
    X, _ = g.cell_centers
    # midpoint rule is exact for linears
    assert g.integrate(X) == pytest.approx(2.0)  # int_0^2 x dx * 1 = 2


def test_boundary_midpoints_and_measure():
    g = Grid(PorousDomain(0.0, 2.0, -1.0, 1.0), 4, 6)
    bx, by = g.boundary_midpoints("left")
    assert bx.shape == (6,)
    np.testing.assert_allclose(bx, 0.0)
    np.testing.assert_allclose(by, g.yc)
    bx, by = g.boundary_midpoints("bottom")
    assert bx.shape == (4,)
    np.testing.assert_allclose(by, -1.0)
    assert g.boundary_measure("left") == pytest.approx(g.hy)
    assert g.boundary_measure("top") == pytest.approx(g.hx)
    with pytest.raises(ValueError):
        g.boundary_midpoints("middle")


def test_gradient_exact_for_quadratics():
    g = Grid(PorousDomain(), 32, 32)
    X, Y = g.cell_centers
    gx, gy = g.gradient(3.0 * X + 2.0 * Y)
    np.testing.assert_allclose(gx, 3.0, atol=1e-12)
    np.testing.assert_allclose(gy, 2.0, atol=1e-12)
    gx, gy = g.gradient(X**2)
    np.testing.assert_allclose(gx, 2.0 * X, atol=1e-10)


def test_materialize_variants():
    g = Grid(PorousDomain(), 8, 8)
    X, Y = g.cell_centers
    np.testing.assert_allclose(materialize(2.5, g), 2.5)
    np.testing.assert_allclose(materialize("x + y", g), X + Y)
    np.testing.assert_allclose(materialize(lambda x, y: x * y, g), X * Y)
    np.testing.assert_allclose(materialize(lambda x, y, t: x + t, g, t=3.0), X + 3.0)
    f = FieldExpr.parse("dist_boundary(x, y)")
    expected = np.minimum(np.minimum(X, 1.0 - X), np.minimum(Y, 1.0 - Y))
    np.testing.assert_allclose(materialize(f, g), expected)
    with pytest.raises(TypeError):
        materialize(object(), g)


def test_boundary_forcing_validation():
    with pytest.raises(ValueError):
        BoundaryForcing(gamma1_sides=("north",))
    with pytest.raises(ValueError):
        BoundaryForcing(gamma1_sides=("left",), gamma2_sides=("left",))


def test_boundary_forcing_zero_extension():
    bf = BoundaryForcing(psi1="t * y", psi2=1.5, gamma1_sides=("left",), gamma2_sides=("top",))
    g = Grid(PorousDomain(), 4, 4)
    np.testing.assert_allclose(bf.psi1_on(g, "left", t=2.0), 2.0 * g.yc)
    np.testing.assert_allclose(bf.psi1_on(g, "right", t=2.0), 0.0)
    np.testing.assert_allclose(bf.psi2_on(g, "top", t=0.0), 1.5)
    np.testing.assert_allclose(bf.psi2_on(g, "left", t=0.0), 0.0)
    for side in SIDES:
        assert bf.psi1_on(g, side, 0.0).shape == (4,)
