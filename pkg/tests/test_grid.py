import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cst.grid import GridSpec, ImageGrid, ScanGeometry, Sinogram, rasterize, sample_bilinear
from cst.phantom import Disk, Ellipse, PhantomSpec


def test_grid_spec_cell_centers():
    g = GridSpec(4, 2)
    assert g.dx == 0.5 and g.dy == 1.0
    np.testing.assert_allclose(g.x, [-0.75, -0.25, 0.25, 0.75])
    np.testing.assert_allclose(g.y, [-0.5, 0.5])
    assert g.shape == (2, 4)


@pytest.mark.parametrize("args", [(1, 4), (4, 1), (4, 4, 1.0, 1.0), (4, 4, -1, 1, 2, 2)])
def test_grid_spec_rejects_invalid(args):
    with pytest.raises(ValueError):
        GridSpec(*args)


def test_image_rejects_nonfinite_and_wrong_rank():
    with pytest.raises(ValueError):
        ImageGrid(np.array([[0.0, np.nan], [1.0, 1.0]]))
    with pytest.raises(ValueError):
        ImageGrid(np.zeros(4))


def test_scan_geometry_defaults():
    g = ScanGeometry()
    assert g.shape == (360, 282)
    assert g.smin == pytest.approx(-math.sqrt(2)) and g.smax == pytest.approx(math.sqrt(2))
    assert g.thetamin == 0.0 and g.thetamax == pytest.approx(2 * math.pi)
    np.testing.assert_allclose(g.s[[0, -1]], [g.smin, g.smax])


@pytest.mark.parametrize("kw", [dict(ns=1), dict(ntheta=1), dict(smin=1.0, smax=1.0),
                                dict(thetamin=1.0, thetamax=0.5)])
def test_scan_geometry_rejects_invalid(kw):
    with pytest.raises(ValueError):
        ScanGeometry(**kw)


def test_sinogram_shape_checked():
    g = ScanGeometry(ns=5, ntheta=3)
    with pytest.raises(ValueError):
        Sinogram(np.zeros((5, 3)), g)
    assert Sinogram(np.zeros((3, 5)), g).values.shape == (3, 5)


def test_bilinear_constant_interior():
    img = ImageGrid(np.ones((7, 9)))
    rng = np.random.default_rng(0)
    x, y = rng.uniform(-1, 1, (2, 100))
    np.testing.assert_allclose(sample_bilinear(img, x, y), 1.0)


def test_bilinear_outside_domain_is_zero():
    img = ImageGrid(np.ones((7, 9)))
    assert sample_bilinear(img, 10.0, 10.0) == 0.0
    assert sample_bilinear(img, -1.001, 0.0) == 0.0


def test_bilinear_hand_value():
    # cell centers at 0.25 and 0.75; columns alternate 0, 1
    img = ImageGrid(np.array([[0.0, 1.0], [0.0, 1.0]]), 0.0, 1.0, 0.0, 1.0)
    assert sample_bilinear(img, 0.5, 0.5) == pytest.approx(0.5)


def test_bilinear_exact_on_affine():
    spec = GridSpec(31, 23)
    X, Y = spec.mesh()
    img = ImageGrid.from_spec(spec, 2 * X - 3 * Y + 1)
    rng = np.random.default_rng(1)
    x = rng.uniform(spec.x[0], spec.x[-1], 500)
    y = rng.uniform(spec.y[0], spec.y[-1], 500)
    assert np.abs(sample_bilinear(img, x, y) - (2 * x - 3 * y + 1)).max() < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_bilinear_affine_property(a, b, c):
    spec = GridSpec(12, 9)
    X, Y = spec.mesh()
    img = ImageGrid.from_spec(spec, a * X + b * Y + c)
    x, y = np.meshgrid(np.linspace(spec.x[0], spec.x[-1], 13), np.linspace(spec.y[0], spec.y[-1], 11))
    np.testing.assert_allclose(sample_bilinear(img, x, y), a * x + b * y + c, atol=1e-11)


def test_rasterize_disk_area():
    spec = PhantomSpec((Disk(0, 0, 0.5),))
    exact = rasterize(spec, 200, supersample=1)
    assert np.mean(exact.values > 0) == pytest.approx(math.pi * 0.25 / 4, rel=0.01)
    # anti-aliased cells hold coverage fractions, so the mean is the area ratio
    assert np.mean(rasterize(spec, 200).values) == pytest.approx(math.pi * 0.25 / 4, rel=1e-3)


def test_rasterize_empty_spec():
    assert not rasterize(PhantomSpec(), 16).values.any()


def test_rasterize_custom_annulus_points():
    spec = PhantomSpec((Ellipse(0, 0, 0.7, 0.5), Ellipse(0, 0, 0.45, 0.25, sign=-1)))
    X = np.array([0.0, 0.55])
    Y = np.zeros(2)
    np.testing.assert_array_equal(spec.evaluate(X, Y), [0.0, 1.0])
    img = rasterize(spec, 101, supersample=1)
    assert img.values[50, 50] == 0.0
    assert img.values[50, int(round((0.55 + 1) / img.dx - 0.5))] == 1.0


def test_rasterize_rejects_invalid():
    with pytest.raises(ValueError):
        PhantomSpec((Disk(0, 0, -0.1),))
    with pytest.raises(ValueError):
        rasterize(PhantomSpec(), 8, supersample=0)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 0.4), st.floats(0.0, 0.4), st.floats(-0.2, 0.2), st.floats(-0.2, 0.2))
def test_rasterize_monotone(r, extra, cx, cy):
    small = PhantomSpec((Disk(cx, cy, r),))
    big = PhantomSpec((Disk(cx, cy, r + extra),))
    assert np.all(rasterize(small, 24).values <= rasterize(big, 24).values + 1e-15)
