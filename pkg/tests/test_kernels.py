"""Backend equivalence: the numba kernels must reproduce the numpy reference
implementations bit for bit."""

import numpy as np
import pytest

from poreflow.kernels import _numba, _numpy

BACKENDS = {"numpy": _numpy, "numba": _numba}


@pytest.fixture(scope="module")
def rng():
    return np.random.default_rng(20240811)


def _c(a):
    return np.ascontiguousarray(a)


def test_im2col_col2im_bitwise(rng):
    x = rng.normal(size=(3, 4, 5, 6, 7))
    xp = np.zeros((3, 4, 7, 8, 9))
    xp[:, :, 1:6, 1:7, 1:8] = x
    c_ref = _numpy.im2col3d(xp, 3, 5, 6, 7)
    assert np.array_equal(c_ref, _numba.im2col3d(_c(xp), 3, 5, 6, 7))
    d_ref = _numpy.col2im3d(c_ref, 3, 5, 6, 7)
    assert np.array_equal(d_ref, _numba.col2im3d(_c(c_ref), 3, 5, 6, 7))


def test_maxabs_pool_bitwise(rng):
    x = rng.normal(size=(3, 8, 12, 4))
    assert np.array_equal(_numpy.maxabs_pool3d(x, 2), _numba.maxabs_pool3d(_c(x), 2))
    assert np.array_equal(_numpy.maxabs_pool3d(x, 4), _numba.maxabs_pool3d(_c(x), 4))


def test_sqedt_pass_bitwise(rng):
    for frac in (0.05, 0.5, 0.95):
        seeds = rng.random((40, 33)) < frac
        f = np.where(seeds, 0.0, 1e18)
        assert np.array_equal(_numpy.sqedt_pass(f), _numba.sqedt_pass(_c(f)))


def test_sqedt_pass_no_seed_row():
    f = np.full((2, 9), 1e18)
    f[1, 3] = 0.0
    for impl in BACKENDS.values():
        out = impl.sqedt_pass(_c(f))
        assert np.all(out[0] == 1e18)
        assert out[1, 3] == 0.0 and out[1, 0] == 9.0


def test_radius_edges_same_sets(rng):
    for n in (1, 2, 17, 120):
        pos = rng.uniform(0, 25, (n, 3))
        e1 = _numpy.radius_edges(pos, 6.0, 7)
        e2 = _numba.radius_edges(_c(pos), 6.0, 7)
        assert set(map(tuple, e1)) == set(map(tuple, e2))


def test_trilinear_splat_gather_bitwise(rng):
    pts = rng.uniform(0, 9, (64, 3))
    vals = rng.normal(size=(64, 3))
    a1, w1 = _numpy.trilinear_splat(pts, vals, 10, 11, 12)
    a2, w2 = _numba.trilinear_splat(_c(pts), _c(vals), 10, 11, 12)
    assert np.array_equal(a1, a2) and np.array_equal(w1, w2)
    grid = rng.normal(size=(4, 12, 11, 10))
    g1 = _numpy.trilinear_gather(grid, pts)
    g2 = _numba.trilinear_gather(_c(grid), _c(pts))
    assert np.array_equal(g1, g2)


def test_nearest_fill_bitwise(rng):
    pts = rng.uniform(0, 9, (33, 3))
    vals = rng.normal(size=(33, 2))
    targets = rng.integers(0, 10, (101, 3))
    r1 = _numpy.nearest_fill(pts, vals, targets)
    r2 = _numba.nearest_fill(_c(pts), _c(vals), _c(targets.astype(np.int64)))
    assert np.array_equal(r1, r2)


def test_redblack_sor_bitwise(rng):
    shape = (11, 10, 9)
    fluid = (rng.random(shape) < 0.85).astype(np.float64)
    fluid[0] = fluid[-1] = 0
    fluid[:, 0] = fluid[:, -1] = 0
    fluid[:, :, 0] = fluid[:, :, -1] = 0
    psi = rng.normal(size=shape) * fluid
    update = fluid.copy()
    inv = np.full(shape, 1.0 / 6.0)
    p1, p2 = psi.copy(), psi.copy()
    _numpy.redblack_sor(p1, fluid, update, inv, 1.6, 5)
    _numba.redblack_sor(p2, _c(fluid), _c(update), _c(inv), 1.6, 5)
    assert np.array_equal(p1, p2)


def test_flood_fill_bitwise(rng):
    mask = rng.random((9, 8, 7)) < 0.65
    mask[0, 0, 0] = True
    seeds = np.array([[0, 0, 0]], dtype=np.int64)
    assert np.array_equal(_numpy.flood_fill6(mask, seeds),
                          _numba.flood_fill6(_c(mask), seeds))
