"""Dense linear algebra used throughout the package.

Vectors and matrices are plain float64 numpy arrays; the ``as_vec`` and
``as_mat`` helpers validate them on the way in.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import LinearDependenceError, ValidationError

RANK_RTOL = 1e-10
DEFAULT_DEPENDENCE_TOL = 1e-9
ORTHONORMAL_CHECK_TOL = 1e-8


def as_vec(values, name="vector") -> np.ndarray:
    v = np.array(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValidationError(f"{name} must be a non-empty 1-D array, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{name} contains non-finite values")
    return v


def as_mat(values, name="matrix") -> np.ndarray:
    m = np.array(values, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] == 0:
        raise ValidationError(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError(f"{name} contains non-finite values")
    return m


@dataclass(frozen=True)
class OLSResult:
    weights: np.ndarray
    residual_sum_squares: float
    rank_deficient: bool
    rank: int


def solve_ols(X, y, add_intercept=True) -> OLSResult:
    """Least-squares fit of ``y`` on the columns of ``X``.

    Uses a column-pivoted QR factorization.  Columns whose pivot falls below
    ``RANK_RTOL`` times the largest pivot are treated as dependent, in which
    case the minimum-norm solution is returned via a complete orthogonal
    decomposition.  With ``add_intercept`` a leading column of ones is added,
    so ``weights[0]`` is the intercept.
    """
    X = as_mat(X, "design matrix")
    y = as_vec(y, "targets")
    n = X.shape[0]
    if y.shape[0] != n:
        raise ValidationError(f"design matrix has {n} rows but targets have {y.shape[0]}")
    if add_intercept:
        X = np.hstack([np.ones((n, 1)), X])
    q = X.shape[1]

    Q, R, perm = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.count_nonzero(diag > RANK_RTOL * diag[0])) if diag[0] > 0 else 0
    qty = Q[:, :rank].T @ y

    w_perm = np.zeros(q)
    if rank == q:
        w_perm = scipy.linalg.solve_triangular(R, qty)
    elif rank > 0:
        # R[:rank] w = Q1^T y is underdetermined; factor R[:rank]^T = Z T and
        # take w in range(Z), which is the minimum-norm solution.
        Z, T = np.linalg.qr(R[:rank, :].T)
        u = scipy.linalg.solve_triangular(T, qty, trans="T")
        w_perm = Z @ u
    weights = np.empty(q)
    weights[perm] = w_perm

    resid = y - X @ weights
    return OLSResult(
        weights=weights,
        residual_sum_squares=float(resid @ resid),
        rank_deficient=rank < q,
        rank=rank,
    )


def gram_schmidt(vectors, tol=DEFAULT_DEPENDENCE_TOL) -> list[np.ndarray]:
    """Orthonormalize ``vectors`` in order (modified Gram-Schmidt, two passes).

    Each vector keeps only its component perpendicular to the ones before it,
    then gets normalized, so earlier outputs never depend on later inputs.
    A vector whose residual norm drops below ``tol`` times its own norm
    raises :class:`LinearDependenceError` naming its index.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    vecs = [as_vec(v, f"vector {i}") for i, v in enumerate(vectors)]
    if not vecs:
        return []
    dim = vecs[0].shape[0]
    for i, v in enumerate(vecs):
        if v.shape[0] != dim:
            raise ValidationError(f"vector {i} has dim {v.shape[0]}, expected {dim}")

    basis: list[np.ndarray] = []
    for i, v in enumerate(vecs):
        norm_in = np.linalg.norm(v)
        if norm_in == 0:
            raise LinearDependenceError(i, 0.0)
        if not basis:
            basis.append(v / norm_in)
            continue
        w = v.copy()
        for _ in range(2):
            for e in basis:
                w -= (e @ w) * e
        norm_out = np.linalg.norm(w)
        if norm_out < tol * norm_in:
            raise LinearDependenceError(i, norm_out / norm_in)
        basis.append(w / norm_out)
    return basis


def _basis_matrix(basis, dim) -> np.ndarray:
    if len(basis) == 0:
        return np.zeros((0, dim))
    B = as_mat(np.vstack([np.asarray(b, dtype=np.float64) for b in basis]), "basis")
    if B.shape[1] != dim:
        raise ValidationError(f"basis vectors have dim {B.shape[1]}, expected {dim}")
    return B


def check_orthonormal(basis, tol=ORTHONORMAL_CHECK_TOL) -> float:
    """Return max |G - I| for the Gram matrix of ``basis``; raise above ``tol``."""
    B = np.atleast_2d(np.asarray(basis, dtype=np.float64))
    if B.shape[0] == 0:
        return 0.0
    dev = float(np.max(np.abs(B @ B.T - np.eye(B.shape[0]))))
    if dev > tol:
        raise ValidationError(f"basis is not orthonormal (max Gram deviation {dev:.3e})")
    return dev


def residual_perp(v, basis) -> np.ndarray:
    """Component of ``v`` perpendicular to the span of an orthonormal basis."""
    v = as_vec(v)
    B = _basis_matrix(basis, v.shape[0])
    if B.shape[0] == 0:
        return v.copy()
    check_orthonormal(B)
    r = v - B.T @ (B @ v)
    # second pass removes the rounding left by the first
    return r - B.T @ (B @ r)


def cosine_similarity(a, b) -> float:
    a = as_vec(a, "a")
    b = as_vec(b, "b")
    if a.shape != b.shape:
        raise ValidationError(f"dim mismatch: {a.shape[0]} vs {b.shape[0]}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValidationError("cosine similarity undefined for a zero vector")
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


def normalize(v) -> np.ndarray:
    v = as_vec(v)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValidationError("cannot normalize a zero vector")
    return v / n
