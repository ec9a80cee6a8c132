"""Small dense kernels shared by the solvers and the recycle-space builder.

All arithmetic is carried out in complex double precision.  Real inputs are
promoted on entry so that conjugations and adjoints need no special casing.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

logger = logging.getLogger(__name__)

#: relative pivot threshold for the pivotless LDU of a tridiagonal matrix
LDU_PIVOT_TOL = 1e-14
#: relative singular-value threshold below which a pencil's Q is treated as singular
PENCIL_RANK_TOL = 1e-12


class BreakdownError(ArithmeticError):
    """Pivotless elimination hit a (numerically) zero pivot.

    This is the breakdown of the second kind of the bi-Lanczos two-term
    recurrence.  ``index`` is the zero-based position of the failing pivot.
    """

    def __init__(self, index: int, pivot: complex):
        super().__init__(f"zero pivot {pivot!r} at position {index}")
        self.index = index
        self.pivot = pivot


def as_complex_vector(x) -> np.ndarray:
    x = np.asarray(x, dtype=complex).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise ValueError("vector has non-finite entries")
    return x


def as_sparse(A) -> sp.csr_matrix:
    """Return ``A`` as canonical CSR (sorted, duplicate-free column indices)."""
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.sort_indices()
    return A


def as_operator(op):
    """Anything with ``matvec``/``rmatvec``; arrays and sparse matrices are wrapped."""
    if hasattr(op, "matvec") and hasattr(op, "rmatvec"):
        return op
    return scipy.sparse.linalg.aslinearoperator(op)


def spmv(A, x, adjoint: bool = False) -> np.ndarray:
    """Sparse matrix-vector product ``A x`` or ``A^* x``."""
    x = as_complex_vector(x)
    n_rows, n_cols = A.shape
    if (n_rows if adjoint else n_cols) != x.shape[0]:
        raise ValueError(f"dimension mismatch: {A.shape} vs vector of length {x.shape[0]}")
    if adjoint:
        return np.asarray(A.conj().T @ x).reshape(-1)
    return np.asarray(A @ x).reshape(-1)


def svd_small(M):
    """Full SVD of a small dense matrix.

    Returns ``(left, sigma, right)`` with ``M = left @ diag(sigma) @ right^*``
    and ``sigma`` nonincreasing.
    """
    M = np.atleast_2d(np.asarray(M, dtype=complex))
    if M.size == 0:
        m, n = M.shape
        return np.eye(m, 0, dtype=complex), np.zeros(0), np.eye(n, 0, dtype=complex)
    left, sigma, right_h = scipy.linalg.svd(M, full_matrices=False, lapack_driver="gesvd")
    return left, sigma, right_h.conj().T


@dataclass
class PencilEig:
    """Eigen-decomposition of a small pencil ``(P, Q)``.

    ``right[:, i]`` solves ``P w = values[i] Q w`` and ``left[:, i]`` solves
    ``w^* P = values[i] w^* Q``.  Infinite eigenvalues are reported as ``inf``.
    ``singular`` is set when ``Q`` has relative rank below ``rank_tol``; its
    null space is then deflated and reported as infinite eigenvalues.
    ``rank_tol = 0`` always uses QZ.
    """

    values: np.ndarray
    right: np.ndarray
    left: np.ndarray
    singular: bool = False


def generalized_eig_small(P, Q, rank_tol: float = PENCIL_RANK_TOL) -> PencilEig:
    P = np.atleast_2d(np.asarray(P, dtype=complex))
    Q = np.atleast_2d(np.asarray(Q, dtype=complex))
    if P.shape != Q.shape or P.shape[0] != P.shape[1]:
        raise ValueError(f"pencil matrices must be square and equal-sized, got {P.shape}, {Q.shape}")
    m = P.shape[0]
    if m == 0:
        empty = np.zeros((0, 0), dtype=complex)
        return PencilEig(np.zeros(0, dtype=complex), empty, empty)

    L, q_sigma, Rh = scipy.linalg.svd(Q)
    R = Rh.conj().T
    rank = int(np.count_nonzero(q_sigma > rank_tol * max(q_sigma[0], np.finfo(float).tiny)))
    if rank < m:
        # deflate the null space of Q: solve on range(R_r) tested against range(L_r)
        warnings.warn("pencil is numerically singular; deflating the null space of Q", RuntimeWarning)
        logger.warning("singular pencil (rank %d of %d)", rank, m)
        Lr, Rr = L[:, :rank], R[:, :rank]
        vals_r, y, z = scipy.linalg.eig(Lr.conj().T @ P @ Rr, np.diag(q_sigma[:rank]), left=True, right=True)
        right = np.hstack([Rr @ z, R[:, rank:]])
        left = np.hstack([Lr @ y, L[:, rank:]])
        values = np.concatenate([vals_r, np.full(m - rank, np.inf)])
        right = right / np.linalg.norm(right, axis=0)
        left = left / np.linalg.norm(left, axis=0)
        return PencilEig(values, right, left, singular=True)

    (alpha, beta), left, right = scipy.linalg.eig(P, Q, left=True, right=True, homogeneous_eigvals=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(np.abs(beta) > 0, alpha / np.where(beta == 0, 1, beta), np.inf)
    # unit-norm columns
    right = right / np.linalg.norm(right, axis=0)
    left = left / np.linalg.norm(left, axis=0)
    return PencilEig(values, right, left)


@dataclass
class Tridiagonal:
    """Tridiagonal matrix held by its three diagonals."""

    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray

    def __post_init__(self):
        self.sub = np.asarray(self.sub, dtype=complex)
        self.diag = np.asarray(self.diag, dtype=complex)
        self.sup = np.asarray(self.sup, dtype=complex)
        m = self.diag.shape[0]
        if self.sub.shape != (max(m - 1, 0),) or self.sup.shape != (max(m - 1, 0),):
            raise ValueError("off-diagonals must have length order-1")

    @property
    def order(self) -> int:
        return self.diag.shape[0]

    def to_dense(self) -> np.ndarray:
        T = np.diag(self.diag)
        if self.order > 1:
            T += np.diag(self.sub, -1) + np.diag(self.sup, 1)
        return T

    def adjoint(self) -> "Tridiagonal":
        return Tridiagonal(self.sup.conj(), self.diag.conj(), self.sub.conj())

    @classmethod
    def from_dense(cls, T) -> "Tridiagonal":
        T = np.asarray(T, dtype=complex)
        return cls(np.diag(T, -1), np.diag(T), np.diag(T, 1))


def ldu_tridiag(T: Tridiagonal):
    """Pivotless ``T = L D R`` factorization of a tridiagonal matrix.

    Returns ``(l, d, u)``: the subdiagonal of the unit lower bidiagonal ``L``,
    the diagonal ``D`` and the superdiagonal of the unit upper bidiagonal ``R``.
    Raises :class:`BreakdownError` when a pivot falls below
    ``LDU_PIVOT_TOL * ||T||_inf``.
    """
    m = T.order
    norm_inf = 0.0
    if m:
        row_sums = np.abs(T.diag).copy()
        row_sums[1:] += np.abs(T.sub)
        row_sums[:-1] += np.abs(T.sup)
        norm_inf = row_sums.max()
    threshold = LDU_PIVOT_TOL * norm_inf
    d = np.empty(m, dtype=complex)
    l = np.empty(max(m - 1, 0), dtype=complex)
    u = np.empty(max(m - 1, 0), dtype=complex)
    for i in range(m):
        d[i] = T.diag[i] - (l[i - 1] * d[i - 1] * u[i - 1] if i else 0.0)
        if abs(d[i]) <= threshold:
            raise BreakdownError(i, d[i])
        if i < m - 1:
            l[i] = T.sub[i] / d[i]
            u[i] = T.sup[i] / d[i]
    return l, d, u


def ldu_solve(l, d, u, rhs) -> np.ndarray:
    """Solve ``L D R y = rhs`` given the factors from :func:`ldu_tridiag`."""
    y = np.array(rhs, dtype=complex)
    m = y.shape[0]
    for i in range(1, m):
        y[i] -= l[i - 1] * y[i - 1]
    y /= d
    for i in range(m - 2, -1, -1):
        y[i] -= u[i] * y[i + 1]
    return y


def orthonormal_basis(X, rtol: float = 1e-12) -> np.ndarray:
    """Orthonormal basis of ``range(X)`` via a rank-revealing SVD."""
    X = np.asarray(X, dtype=complex)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] == 0:
        raise ValueError("rank-zero input")
    left, sigma, _ = scipy.linalg.svd(X, full_matrices=False)
    rank = int(np.sum(sigma > rtol * sigma[0])) if sigma[0] > 0 else 0
    if rank == 0:
        raise ValueError("rank-zero input")
    return left[:, :rank]


def principal_angle_cosines(X, Y) -> np.ndarray:
    """Cosines of the principal angles between ``range(X)`` and ``range(Y)``."""
    X = np.asarray(X)
    Y = np.asarray(Y)
    if X.shape[0] != Y.shape[0]:
        raise ValueError("bases must have equal row counts")
    QX = orthonormal_basis(X)
    QY = orthonormal_basis(Y)
    cosines = scipy.linalg.svdvals(QX.conj().T @ QY)
    return np.clip(cosines, 0.0, 1.0)
