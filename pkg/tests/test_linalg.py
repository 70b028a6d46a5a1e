import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentaxes.errors import LinearDependenceError, ValidationError
from latentaxes.linalg import (
    as_vec, check_orthonormal, cosine_similarity, gram_schmidt, residual_perp, solve_ols,
)


def normal_residual(X, y, w, intercept=True):
    A = np.column_stack([np.ones(len(y)), X]) if intercept else X
    return np.max(np.abs(A.T @ (y - A @ w))), np.max(np.abs(A.T @ y))


def test_ols_exact_line():
    res = solve_ols([[1.0], [2.0], [3.0]], [3.0, 5.0, 7.0])
    np.testing.assert_allclose(res.weights, [1.0, 2.0], atol=1e-12)
    assert res.residual_sum_squares == pytest.approx(0.0, abs=1e-20)
    assert not res.rank_deficient


def test_ols_identity_design():
    res = solve_ols(np.eye(3), [4.0, 5.0, 6.0], add_intercept=False)
    np.testing.assert_allclose(res.weights, [4.0, 5.0, 6.0], atol=1e-14)


def test_ols_normal_equations_on_noisy_data():
    rng = np.random.default_rng(3)
    X = rng.uniform(size=(100, 8))
    w_star = rng.standard_normal(8)
    y = X @ w_star + 0.01 * rng.standard_normal(100)
    res = solve_ols(X, y, add_intercept=False)
    r, scale = normal_residual(X, y, res.weights, intercept=False)
    assert r <= 1e-8 * max(1.0, scale)
    # independent oracle
    ref, *_ = np.linalg.lstsq(X, y, rcond=None)
    np.testing.assert_allclose(res.weights, ref, atol=1e-10)


def test_ols_rank_deficient_gives_min_norm():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(20)
    X = np.column_stack([x, x, rng.standard_normal(20)])
    y = rng.standard_normal(20)
    res = solve_ols(X, y, add_intercept=False)
    assert res.rank_deficient
    np.testing.assert_allclose(res.weights, np.linalg.pinv(X) @ y, atol=1e-10)


def test_ols_more_features_than_samples():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((5, 12))
    y = rng.standard_normal(5)
    res = solve_ols(X, y)
    assert res.rank_deficient
    r, scale = normal_residual(X, y, res.weights)
    assert r <= 1e-8 * max(1.0, scale)


@pytest.mark.parametrize("X,y", [
    (np.ones((3, 2)), np.ones(4)),
    (np.ones((0, 2)), np.ones(0)),
    ([[1.0], [np.nan]], [1.0, 2.0]),
    ([[1.0], [2.0]], [1.0, np.inf]),
])
def test_ols_errors(X, y):
    with pytest.raises(ValidationError):
        solve_ols(X, y)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 40), q=st.integers(1, 10), seed=st.integers(0, 2**32 - 1))
def test_ols_optimality_property(n, q, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, q))
    y = rng.standard_normal(n)
    res = solve_ols(X, y)
    r, scale = normal_residual(X, y, res.weights)
    assert r <= 1e-8 * max(1.0, scale)


def test_gram_schmidt_three_d():
    out = gram_schmidt([[1, 0, 0], [1, 1, 0], [1, 1, 1]])
    np.testing.assert_allclose(np.vstack(out), np.eye(3), atol=1e-15)


def test_gram_schmidt_orthonormal_input_unchanged():
    Q, _ = np.linalg.qr(np.random.default_rng(2).standard_normal((6, 4)))
    out = gram_schmidt(list(Q.T))
    np.testing.assert_allclose(np.vstack(out), Q.T, atol=1e-12)


def test_gram_schmidt_near_dependent_pair():
    rng = np.random.default_rng(4)
    v, u = rng.standard_normal(5), rng.standard_normal(5)
    with pytest.raises(LinearDependenceError) as exc:
        gram_schmidt([v, v + 1e-14 * u], tol=1e-9)
    assert exc.value.index == 1
    assert "1" in str(exc.value)


def test_gram_schmidt_first_vector_exact():
    v = np.array([3.0, 4.0, 12.0])
    out = gram_schmidt([v, [1.0, 0.0, 0.0]])
    assert np.array_equal(out[0], v / np.linalg.norm(v))


@settings(max_examples=30, deadline=None)
@given(k=st.integers(1, 8), extra=st.integers(0, 20), seed=st.integers(0, 2**32 - 1))
def test_gram_schmidt_orthonormal_and_span(k, extra, seed):
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((k, k + extra))
    E = np.vstack(gram_schmidt(list(V)))
    assert np.max(np.abs(E @ E.T - np.eye(k))) <= 1e-10
    # span preserved: each input is reproduced by its projection onto the output basis
    np.testing.assert_allclose((V @ E.T) @ E, V, atol=1e-9)
    # order sensitivity: output i lies in span of inputs 0..i
    for i in range(k):
        coef, *_ = np.linalg.lstsq(V[:i + 1].T, E[i], rcond=None)
        np.testing.assert_allclose(V[:i + 1].T @ coef, E[i], atol=1e-9)


def test_gram_schmidt_high_dimension_ill_conditioned():
    rng = np.random.default_rng(5)
    base = rng.standard_normal(9216)
    V = [base + 1e-3 * rng.standard_normal(9216) for _ in range(10)]
    E = np.vstack(gram_schmidt(V))
    assert np.max(np.abs(E @ E.T - np.eye(10))) <= 1e-10


def test_residual_perp_examples():
    np.testing.assert_allclose(residual_perp([1, 1, 0], [[1, 0, 0]]), [0, 1, 0], atol=1e-15)
    B = [np.array([1.0, 0, 0]), np.array([0, 1.0, 0])]
    np.testing.assert_allclose(residual_perp([2.0, -3.0, 0.0], B), 0.0, atol=1e-15)


def test_residual_perp_matches_least_squares():
    rng = np.random.default_rng(6)
    Q, _ = np.linalg.qr(rng.standard_normal((8, 3)))
    v = rng.standard_normal(8)
    coef, *_ = np.linalg.lstsq(Q, v, rcond=None)
    r = residual_perp(v, list(Q.T))
    np.testing.assert_allclose(r, v - Q @ coef, atol=1e-12)
    assert np.max(np.abs(Q.T @ r)) <= 1e-12 * np.linalg.norm(v)


@settings(max_examples=30, deadline=None)
@given(p=st.integers(3, 30), seed=st.integers(0, 2**32 - 1), data=st.data())
def test_residual_perp_idempotent_and_order_free(p, seed, data):
    k = data.draw(st.integers(1, p - 1))
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((p, k)))
    B = list(Q.T)
    v = rng.standard_normal(p)
    r = residual_perp(v, B)
    np.testing.assert_allclose(residual_perp(r, B), r, atol=1e-12)
    perm = rng.permutation(k)
    np.testing.assert_allclose(residual_perp(v, [B[i] for i in perm]), r, atol=1e-12)


def test_residual_perp_errors():
    with pytest.raises(ValidationError):
        residual_perp([1, 0, 0], [[1, 1, 0]])
    with pytest.raises(ValidationError):
        residual_perp([1, 0], [[1, 0, 0]])


def test_check_orthonormal_reports_deviation():
    assert check_orthonormal(np.eye(3)) == 0.0
    with pytest.raises(ValidationError):
        check_orthonormal([[1.0, 0.0], [0.5, 1.0]])


def test_cosine_similarity_examples():
    assert cosine_similarity([1, 0], [1, 0]) == 1.0
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 1], [1, 0]) == pytest.approx(0.7071067811865475, abs=1e-16)
    a, b = [0.3, -2.0, 1.5], [4.0, 0.1, -0.7]
    assert cosine_similarity(a, b) == cosine_similarity(b, a)
    with pytest.raises(ValidationError):
        cosine_similarity([0, 0], [1, 0])


def test_vec_rejects_non_finite_and_empty():
    with pytest.raises(ValidationError):
        as_vec([1.0, np.nan])
    with pytest.raises(ValidationError):
        as_vec([])
