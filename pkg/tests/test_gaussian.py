import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import random_spd, sample_moments
from urs.errors import NumericalError, ShapeError
from urs.gaussian import (Gaussian, JointGaussian, affine_transform, cholesky, condition, expect_quadratic_form,
                          logdet_psd, repair_cov, solve_psd)

seeds = st.integers(0, 2**31 - 1)
dims = st.integers(1, 6)


@given(seeds, dims)
@settings(max_examples=40, deadline=None)
def test_repair_cov_is_psd_and_symmetric(seed, n):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    out = repair_cov(a)
    assert np.array_equal(out, out.T)
    w = np.linalg.eigvalsh(out)
    assert w[0] >= -1e-12 * max(abs(w[-1]), 1.0)


@given(seeds, dims)
@settings(max_examples=40, deadline=None)
def test_repair_cov_leaves_well_conditioned_matrices_alone(seed, n):
    a = random_spd(np.random.default_rng(seed), n)
    sym = 0.5 * (a + a.T)
    assert np.array_equal(repair_cov(a), sym)


def test_repair_cov_keeps_deterministic_coordinates_exactly_zero():
    c = np.zeros((3, 3))
    c[0, 0], c[2, 2], c[0, 2] = 2.0, 1.0, 3.0  # indefinite live block
    out = repair_cov(c)
    assert np.all(out[1] == 0.0) and np.all(out[:, 1] == 0.0)
    assert np.linalg.eigvalsh(out[np.ix_([0, 2], [0, 2])])[0] > 0


def test_cholesky_reproduces_matrix():
    a = random_spd(np.random.default_rng(1), 5)
    lower = cholesky(a)
    np.testing.assert_allclose(lower @ lower.T, a, rtol=1e-12, atol=1e-12)
    assert np.allclose(lower, np.tril(lower))


def test_cholesky_jitter_handles_rank_deficient_psd():
    v = np.array([[1.0], [2.0], [3.0]])
    a = v @ v.T
    lower = cholesky(a)
    np.testing.assert_allclose(lower @ lower.T, a, atol=1e-5)


def test_cholesky_raises_with_condition_number_for_indefinite():
    with pytest.raises(NumericalError, match="condition number"):
        cholesky(-np.eye(3))


def test_solve_and_logdet_match_dense_algebra():
    rng = np.random.default_rng(2)
    a = random_spd(rng, 4)
    b = rng.standard_normal((4, 2))
    np.testing.assert_allclose(solve_psd(a, b), np.linalg.solve(a, b), rtol=1e-10)
    assert logdet_psd(a) == pytest.approx(np.linalg.slogdet(a)[1], rel=1e-12)


def test_affine_transform_matches_sampling():
    rng = np.random.default_rng(3)
    g = Gaussian(rng.standard_normal(3), random_spd(rng, 3))
    A = rng.standard_normal((2, 3))
    c = rng.standard_normal(2)
    out = affine_transform(g, A, c)
    x = g.sample(rng, 400_000) @ A.T + c
    m, P = sample_moments(x)
    se = np.sqrt(np.diag(out.cov) / x.shape[0])
    assert np.all(np.abs(m - out.mean) < 5 * se)
    np.testing.assert_allclose(P, out.cov, rtol=0.02, atol=0.02 * np.abs(out.cov).max())


def test_affine_transform_shape_checks():
    g = Gaussian(np.zeros(2), np.eye(2))
    with pytest.raises(ShapeError):
        affine_transform(g, np.eye(3))
    with pytest.raises(ShapeError):
        affine_transform(g, np.eye(2), np.zeros(3))


@given(seeds, st.integers(1, 4), st.integers(1, 4))
@settings(max_examples=40, deadline=None)
def test_condition_matches_precision_form(seed, d1, d2):
    rng = np.random.default_rng(seed)
    full = Gaussian(rng.standard_normal(d1 + d2), random_spd(rng, d1 + d2))
    j = JointGaussian.from_full(full, d1)
    x2 = rng.standard_normal(d2)
    out = condition(j, x2)
    Lam = np.linalg.inv(full.cov)
    cov = np.linalg.inv(Lam[:d1, :d1])
    mean = full.mean[:d1] - cov @ Lam[:d1, d1:] @ (x2 - full.mean[d1:])
    np.testing.assert_allclose(out.mean, mean, rtol=1e-8, atol=1e-8)
    np.testing.assert_allclose(out.cov, cov, rtol=1e-7, atol=1e-9)


def test_condition_rejects_wrong_shape():
    j = JointGaussian.from_full(Gaussian(np.zeros(3), np.eye(3)), 1)
    with pytest.raises(ShapeError):
        condition(j, np.zeros(3))


def test_joint_round_trip():
    rng = np.random.default_rng(4)
    full = Gaussian(rng.standard_normal(5), random_spd(rng, 5))
    j = JointGaussian.from_full(full, 2)
    np.testing.assert_array_equal(j.mean, full.mean)
    np.testing.assert_array_equal(j.cov, full.cov)


def test_expect_quadratic_form_matches_sampling():
    rng = np.random.default_rng(5)
    g = Gaussian(rng.standard_normal(3), random_spd(rng, 3))
    M = random_spd(rng, 3)
    x = g.sample(rng, 400_000)
    q = np.einsum("ni,ij,nj->n", x, M, x)
    assert abs(expect_quadratic_form(g, M) - q.mean()) < 5 * q.std() / np.sqrt(q.size)


def test_gaussian_validates_shapes_and_symmetrizes():
    with pytest.raises(ShapeError):
        Gaussian(np.zeros(2), np.eye(3))
    g = Gaussian([0.0, 0.0], [[1.0, 0.2], [0.0, 1.0]])
    assert np.array_equal(g.cov, g.cov.T)
    assert g.is_psd()
    assert not Gaussian([0.0, 0.0], [[1.0, 0.0], [0.0, -1.0]]).is_psd()
