import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from revct.image import (BoxConstraint, ShapeError, dot, project_box, rmsd,
                         shepp_logan, SHEPP_LOGAN_ELLIPSES)

# Frozen from _rasterize_loop(128) below; see test_shepp_logan_mass_matches_loop_rasterizer.
SHEPP_LOGAN_128_MASS = 2032.8


def _rasterize_loop(n):
    """Per-pixel ellipse membership, written independently of the vectorized path."""
    img = [[0.0] * n for _ in range(n)]
    for r in range(n):
        for c in range(n):
            px = (2 * c + 1) / n - 1
            py = 1 - (2 * r + 1) / n
            total = 0.0
            for value, a, b, x0, y0, phi in SHEPP_LOGAN_ELLIPSES:
                t = np.deg2rad(phi)
                u = (px - x0) * np.cos(t) + (py - y0) * np.sin(t)
                v = (py - y0) * np.cos(t) - (px - x0) * np.sin(t)
                if u * u / (a * a) + v * v / (b * b) <= 1:
                    total += value
            img[r][c] = max(total, 0.0)
    peak = max(max(row) for row in img)
    return np.array(img) / peak


def test_dot_trivial():
    ones = np.ones((4, 4))
    assert dot(ones, ones) == 16
    assert dot(ones, np.zeros((4, 4))) == 0


def test_dot_matches_scalar_loop():
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal((2, 8, 8))
    expected = 0.0
    for i in range(8):
        for j in range(8):
            expected += x[i, j] * y[i, j]
    assert dot(x, y) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("fn", [dot, rmsd])
def test_shape_mismatch_rejected(fn):
    with pytest.raises(ShapeError):
        fn(np.zeros((4, 4)), np.zeros((4, 5)))


def test_rmsd_trivial():
    x = np.random.default_rng(1).random((8, 8))
    assert rmsd(x, x) == 0
    assert rmsd(np.ones((8, 8)), np.zeros((8, 8))) == 1


def test_rmsd_matches_scalar_loop():
    rng = np.random.default_rng(2)
    x, ref = rng.random((2, 16, 16))
    acc = 0.0
    for i in range(16):
        for j in range(16):
            acc += (x[i, j] - ref[i, j]) ** 2
    assert rmsd(x, ref) == pytest.approx((acc / 256) ** 0.5, rel=1e-12)


def test_project_box_clamps():
    box = BoxConstraint(0.0, 1.0)
    out = project_box(np.array([[1.5, -0.2], [0.3, 1.0]]), box)
    assert out.tolist() == [[1.0, 0.0], [0.3, 1.0]]
    inside = np.random.default_rng(3).random((5, 5))
    assert np.array_equal(project_box(inside, box), inside)


@pytest.mark.parametrize("lo, hi", [(1.0, 1.0), (2.0, 1.0), (0.0, np.inf)])
def test_invalid_box(lo, hi):
    with pytest.raises(ValueError):
        BoxConstraint(lo, hi)


images = arrays(np.float64, (6, 6), elements=st.floats(-3, 3, allow_nan=False))


@settings(max_examples=50, deadline=None)
@given(images, images)
def test_rmsd_symmetric(x, y):
    assert rmsd(x, y) == rmsd(y, x)


@settings(max_examples=50, deadline=None)
@given(images)
def test_project_box_idempotent(x):
    once = project_box(x)
    assert np.array_equal(project_box(once), once)


@settings(max_examples=50, deadline=None)
@given(images, images)
def test_project_box_nonexpansive(x, y):
    lhs = np.linalg.norm(project_box(x) - project_box(y))
    assert lhs <= np.linalg.norm(x - y) + 1e-12


def test_dot_symmetric_bilinear():
    rng = np.random.default_rng(4)
    for _ in range(10):
        x, y, z = rng.standard_normal((3, 7, 7))
        a, b = rng.standard_normal(2)
        assert dot(x, y) == pytest.approx(dot(y, x), rel=1e-10)
        lhs = dot(a * x + b * y, z)
        assert lhs == pytest.approx(a * dot(x, z) + b * dot(y, z), rel=1e-10, abs=1e-12)


def test_shepp_logan_layout():
    p = shepp_logan(256)
    assert p.shape == (256, 256) and p.dtype == np.float64
    assert p.min() == 0.0 and p.max() == 1.0
    assert 0.0 < p[128, 128] < 1.0
    for r, c in [(0, 0), (0, -1), (-1, 0), (-1, -1)]:
        assert p[r, c] == 0.0


def test_shepp_logan_mass_matches_loop_rasterizer():
    ref = _rasterize_loop(128)
    assert ref.sum() == pytest.approx(SHEPP_LOGAN_128_MASS, rel=1e-12)
    assert shepp_logan(128).sum() == pytest.approx(SHEPP_LOGAN_128_MASS, rel=1e-12)
    np.testing.assert_allclose(shepp_logan(128), ref, atol=1e-15)


@pytest.mark.parametrize("n", [0, 7, 12.5])
def test_shepp_logan_rejects_small(n):
    with pytest.raises(ValueError):
        shepp_logan(n)
