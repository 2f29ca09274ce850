import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from viewclust.errors import InputError, ShapeError
from viewclust.features import (
    CropGeometry, attention_marginal, image_diagonal, join, make_view_pair, patch_positions,
    split_assignments,
)


def test_join_small():
    j = join(np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]]))
    np.testing.assert_array_equal(j.z_cat, [[1, 2], [3, 4]])
    assert j.n_per_view == 1


def test_join_empty_rejected():
    with pytest.raises(ShapeError):
        join(np.zeros((0, 3)), np.zeros((0, 3)))


def test_join_mismatch_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 4\)"):
        join(np.zeros((2, 3)), np.zeros((2, 4)))


def test_join_rejects_nonfinite():
    z = np.ones((2, 2))
    z[0, 0] = np.nan
    with pytest.raises(InputError):
        join(z, np.ones((2, 2)))


def test_join_rows_exact():
    rng = np.random.default_rng(0)
    z1, z2 = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    j = join(z1, z2)
    for k in range(6):
        expect = z1[k] if k < 3 else z2[k - 3]
        assert np.array_equal(j.z_cat[k], expect)
    assert np.array_equal(j.view1, z1) and np.array_equal(j.view2, z2)


def test_joint_is_immutable():
    j = join(np.ones((1, 2)), np.ones((1, 2)))
    with pytest.raises(ValueError):
        j.z_cat[0, 0] = 5.0


def test_patch_positions_unit():
    g = CropGeometry(0, 0, 2, 2, 2)
    np.testing.assert_array_equal(patch_positions(g), [[0.5, 0.5], [1.5, 0.5], [0.5, 1.5], [1.5, 1.5]])


def test_patch_positions_flip():
    g = CropGeometry(0, 0, 2, 2, 2, hflip=True)
    np.testing.assert_array_equal(patch_positions(g), [[1.5, 0.5], [0.5, 0.5], [1.5, 1.5], [0.5, 1.5]])


def test_patch_positions_offset():
    p = patch_positions(CropGeometry(10, 20, 100, 50, 4))
    assert p.shape == (16, 2)
    assert tuple(p[0]) == (22.5, 26.25)
    # direct formula for every patch
    for idx, (x, y) in enumerate(p):
        i, j = divmod(idx, 4)
        assert x == 10 + (j + 0.5) * 25 and y == 20 + (i + 0.5) * 12.5


@pytest.mark.parametrize("kw", [dict(width=0), dict(height=-1), dict(grid_n=0), dict(grid_n=1.5)])
def test_geometry_invalid(kw):
    args = dict(x0=0, y0=0, width=1, height=1, grid_n=2)
    args.update(kw)
    with pytest.raises(InputError):
        CropGeometry(**args)


def test_split_blocks():
    q = np.arange(8.0).reshape(4, 2)
    a, b = split_assignments(q, 2)
    np.testing.assert_array_equal(a, q[:2])
    np.testing.assert_array_equal(b, q[2:])


@pytest.mark.parametrize("n", [0, 3])
def test_split_bad_count(n):
    with pytest.raises(ShapeError):
        split_assignments(np.zeros((4, 2)), n)


def test_split_round_trip():
    q = np.random.default_rng(1).random((6, 3))
    a, b = split_assignments(q, 3)
    assert np.array_equal(np.concatenate([a, b]), q)


def test_attention_marginal_normalized():
    r = attention_marginal([1.0, 3.0], [2.0, 2.0])
    np.testing.assert_allclose(r, [0.125, 0.375, 0.25, 0.25])
    with pytest.raises(InputError):
        attention_marginal([0.0], [0.0])
    with pytest.raises(InputError):
        attention_marginal([-1.0, 2.0], [1.0, 1.0])


def test_view_pair_defaults_and_bounds():
    z = np.ones((4, 3))
    vp = make_view_pair(z, z)
    assert vp.positions.shape == (8, 2) and vp.diag_s > 0
    np.testing.assert_allclose(vp.marginal, np.full(8, 1 / 8))
    g1, g2 = CropGeometry(0, 0, 10, 10, 2), CropGeometry(5, 0, 10, 10, 2)
    vp = make_view_pair(z, z, geom1=g1, geom2=g2)
    assert vp.diag_s == pytest.approx(image_diagonal(15, 10))
    with pytest.raises(InputError):
        make_view_pair(z, z, geom1=g1, geom2=g2, image_size=(12, 10))
    with pytest.raises(ShapeError):
        make_view_pair(z, z, geom1=CropGeometry(0, 0, 1, 1, 3), geom2=g2)


def test_diagonal_bounds_positional_range():
    assert image_diagonal(3, 4) == 5.0


geoms = st.builds(
    CropGeometry,
    x0=st.floats(0, 500), y0=st.floats(0, 500),
    width=st.floats(1, 300), height=st.floats(1, 300),
    grid_n=st.integers(1, 8), hflip=st.booleans(),
)


@settings(max_examples=60, deadline=None)
@given(geoms)
def test_positions_inside_crop(g):
    p = patch_positions(g)
    assert p.shape == (g.grid_n**2, 2)
    assert np.all(p[:, 0] > g.x0) and np.all(p[:, 0] < g.x1)
    assert np.all(p[:, 1] > g.y0) and np.all(p[:, 1] < g.y1)


@settings(max_examples=60, deadline=None)
@given(geoms, st.floats(-100, 100), st.floats(-100, 100))
def test_positions_translate(g, dx, dy):
    moved = CropGeometry(g.x0 + dx, g.y0 + dy, g.width, g.height, g.grid_n, g.hflip)
    np.testing.assert_allclose(patch_positions(moved), patch_positions(g) + [dx, dy], atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(geoms.filter(lambda g: not g.hflip and g.grid_n > 1))
def test_positions_increase_along_rows(g):
    x = patch_positions(g)[:, 0].reshape(g.grid_n, g.grid_n)
    assert np.all(np.diff(x, axis=1) > 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**31))
def test_join_split_identity(n, d, seed):
    rng = np.random.default_rng(seed)
    z1, z2 = rng.standard_normal((n, d)), rng.standard_normal((n, d))
    a, b = split_assignments(join(z1, z2).z_cat, n)
    assert np.array_equal(a, z1) and np.array_equal(b, z2)

