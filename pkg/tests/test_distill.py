import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from viewclust import distill
from viewclust.distill import (
    ProjectionParams, cross_entropy_rows, dense_loss, distillation_losses, global_loss,
    pool_centroids, project_softmax, softmax, total_loss,
)
from viewclust.errors import InputError, ShapeError


def rand_rows(rng, k, l):
    a = rng.random((k, l)) + 1e-3
    return a / a.sum(1, keepdims=True)


def identity_head(d, tau=1.0):
    return ProjectionParams(np.eye(d), np.zeros(d), tau)


def test_pool_centroids_examples():
    z = np.random.default_rng(0).standard_normal((4, 3))
    np.testing.assert_array_equal(pool_centroids(z, np.eye(4)), z)
    q = np.zeros((4, 1))
    q[[1, 3], 0] = 0.5
    np.testing.assert_allclose(pool_centroids(z, q)[0], z[[1, 3]].mean(0))
    with pytest.raises(ShapeError):
        pool_centroids(z, np.ones((3, 2)))


def test_pool_centroids_loop_oracle():
    rng = np.random.default_rng(1)
    z, q = rng.standard_normal((5, 3)), rng.random((5, 2))
    c = pool_centroids(z, q)
    for k in range(2):
        acc = np.zeros(3)
        for n in range(5):
            acc += q[n, k] * z[n]
        np.testing.assert_allclose(c[k], acc, atol=1e-12, rtol=0)


def test_project_softmax_examples():
    p = project_softmax(np.zeros((2, 3)), ProjectionParams(np.ones((4, 3)), np.zeros(4), 0.07))
    np.testing.assert_allclose(p, np.full((2, 4), 0.25))
    p = project_softmax(np.array([[1.0, 0.0]]), identity_head(2))
    np.testing.assert_allclose(p[0], [math.e / (math.e + 1), 1 / (math.e + 1)], atol=1e-15)
    np.testing.assert_allclose(p[0], [0.7311, 0.2689], atol=1e-4)


def test_defaults():
    assert (distill.TAU_TEACHER, distill.TAU_STUDENT, distill.ALPHA) == (0.07, 0.1, 1.0)
    assert (distill.DENSE_DIM, distill.GLOBAL_DIM) == (8192, 65536)


def test_projection_validation():
    with pytest.raises(InputError):
        ProjectionParams(np.eye(2), np.zeros(2), 0.0)
    with pytest.raises(ShapeError):
        ProjectionParams(np.eye(2), np.zeros(3), 1.0)
    with pytest.raises(InputError):
        ProjectionParams(np.full((2, 2), np.nan), np.zeros(2), 1.0)
    with pytest.raises(ShapeError):
        project_softmax(np.ones((1, 3)), identity_head(2))


def test_cross_entropy_examples():
    one_hot = np.eye(3)
    assert cross_entropy_rows(one_hot, one_hot) == 0.0
    a = rand_rows(np.random.default_rng(0), 2, 4)
    assert cross_entropy_rows(a, np.full((2, 4), 0.25)) == pytest.approx(math.log(4), abs=1e-12)
    with pytest.raises(ShapeError):
        cross_entropy_rows(np.ones((2, 2)) / 2, np.ones((2, 3)) / 3)


def test_cross_entropy_loop_oracle():
    rng = np.random.default_rng(2)
    a, b = rand_rows(rng, 3, 5), rand_rows(rng, 3, 5)
    terms = [-a[k, l] * math.log(b[k, l]) for k in range(3) for l in range(5)]
    assert abs(cross_entropy_rows(a, b) - math.fsum(terms) / 3) <= 1e-10


def test_cross_entropy_clamps_zero():
    val = cross_entropy_rows(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
    assert val == pytest.approx(-math.log(1e-12))


def test_dense_loss_examples():
    one_hot = np.eye(3)
    assert dense_loss(one_hot, one_hot, one_hot, one_hot) == 0.0
    rng = np.random.default_rng(3)
    pt1, ps2, pt2, ps1 = (rand_rows(rng, 3, 6) for _ in range(4))
    v = dense_loss(pt1, ps2, pt2, ps1)
    assert v == dense_loss(pt2, ps1, pt1, ps2)
    assert v == pytest.approx(0.5 * (cross_entropy_rows(pt1, ps2) + cross_entropy_rows(pt2, ps1)), abs=1e-15)
    with pytest.raises(ShapeError):
        dense_loss(pt1, ps2[:2], pt2, ps1)


def test_global_loss_examples():
    e = np.eye(4)[1]
    assert global_loss(e, e, e, e) == 0.0
    l_bar = distill.GLOBAL_DIM
    u = np.full(l_bar, 1.0 / l_bar)
    a = np.zeros(l_bar)
    a[7] = 1.0
    assert global_loss(a, u, a, u) == pytest.approx(math.log(65536), abs=1e-9)
    assert global_loss(a, u, a, u) == pytest.approx(11.0904, abs=1e-4)
    rng = np.random.default_rng(5)
    v = [rand_rows(rng, 1, 7)[0] for _ in range(4)]
    manual = 0.5 * (-np.sum(v[0] * np.log(v[1])) - np.sum(v[2] * np.log(v[3])))
    assert global_loss(*v) == pytest.approx(manual, abs=1e-10)
    with pytest.raises(ShapeError):
        global_loss(np.eye(2), np.eye(2), np.eye(2), np.eye(2))


def test_total_loss_examples():
    assert total_loss(2.0, 3.0, 0.0) == 3.0
    assert total_loss(2.0, 3.0, 1.0) == 5.0
    assert total_loss(2.0, 3.0) == 5.0
    with pytest.raises(InputError):
        total_loss(1.0, 1.0, -1.0)


def test_distillation_losses_end_to_end():
    rng = np.random.default_rng(6)
    z1, z2 = rng.standard_normal((9, 4)), rng.standard_normal((9, 4))
    q1, q2 = rand_rows(rng, 9, 3), rand_rows(rng, 9, 3)
    head = ProjectionParams(rng.standard_normal((5, 4)), rng.standard_normal(5), 1.0)
    dense, glob, total = distillation_losses(z1, z2, q1, q2, head)
    assert total == dense + glob
    t = head.with_temperature(0.07)
    s = head.with_temperature(0.1)
    expect = 0.5 * (
        cross_entropy_rows(project_softmax(q1.T @ z1, t), project_softmax(q2.T @ z2, s))
        + cross_entropy_rows(project_softmax(q2.T @ z2, t), project_softmax(q1.T @ z1, s))
    )
    assert dense == pytest.approx(expect, abs=1e-12)
    _, g0, t0 = distillation_losses(z1, z2, q1, q2, head, alpha=0.0)
    assert t0 == g0


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(2, 8), st.floats(1e-3, 1e4), st.integers(0, 2**31))
def test_softmax_rows_stable(k, l, scale, seed):
    logits = np.random.default_rng(seed).uniform(-1, 1, (k, l)) * scale
    p = softmax(logits)
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p.sum(1), 1.0, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(2, 8), st.integers(0, 2**31))
def test_gibbs(k, l, seed):
    rng = np.random.default_rng(seed)
    a, b = rand_rows(rng, k, l), rand_rows(rng, k, l)
    h_aa = cross_entropy_rows(a, a)
    entropy = float(np.mean(-np.sum(a * np.log(a), axis=1)))
    assert h_aa == pytest.approx(entropy, abs=1e-9)
    assert cross_entropy_rows(a, b) >= h_aa - 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.floats(0.2, 5.0), st.floats(1.01, 4.0), st.integers(0, 2**31))
def test_lower_temperature_sharpens(l, tau, factor, seed):
    logits = np.random.default_rng(seed).uniform(-1, 1, l)
    top = int(np.argmax(logits))

    def rest_mass(temp):
        # 1/max_prob - 1: avoids max_prob rounding to exactly 1.0
        return np.sum(np.exp((np.delete(logits, top) - logits[top]) / temp))

    assert softmax(logits / (tau / factor)).max() >= softmax(logits / tau).max()
    assert rest_mass(tau / factor) < rest_mass(tau)
