"""Crout-form incomplete LU with threshold dropping, and split preconditioning.

The factorization follows the Crout ordering: at step ``k`` row ``k`` of the
upper factor and column ``k`` of the unit lower factor are formed from the
already finished rows/columns, then sparsified.  No pivoting is performed.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .numerics import as_complex_vector, as_sparse

PIVOT_TOL = 1e-14


class FactorizationError(ArithmeticError):
    def __init__(self, row: int, pivot: complex):
        super().__init__(f"ILUT zero pivot {pivot!r} in row {row}")
        self.row = row
        self.pivot = pivot


@dataclass(frozen=True)
class IlutFactors:
    L: sp.csr_matrix  # unit lower triangular, diagonal stored
    U: sp.csr_matrix  # upper triangular
    drop_tol: float
    fill_cap: int

    @property
    def n(self) -> int:
        return self.L.shape[0]


def default_fill_cap(A) -> int:
    A = sp.csr_matrix(A)
    return 10 + int(math.ceil(A.nnz / max(A.shape[0], 1)))


def _sparsify(entries: dict, keep: int, tol: float, protect: int | None = None) -> dict:
    """Drop entries below ``tol * ||entries||_2`` and keep the ``keep`` largest."""
    if not entries:
        return entries
    norm = math.sqrt(sum(abs(v) ** 2 for v in entries.values()))
    thresh = tol * norm
    kept = {j: v for j, v in entries.items() if j == protect or (v != 0 and abs(v) >= thresh)}
    off = [j for j in kept if j != protect]
    if len(off) > keep:
        largest = set(heapq.nlargest(keep, off, key=lambda j: abs(kept[j])))
        kept = {j: v for j, v in kept.items() if j == protect or j in largest}
    return kept


def ilut_factor(A, drop_tol: float = 0.05, fill_cap: int | None = None) -> IlutFactors:
    """Crout ILUT of a square sparse matrix.

    Entries of the working row of ``U`` (column of ``L``) whose magnitude is
    below ``drop_tol`` times the 2-norm of that working row (column) are
    discarded; afterwards at most ``fill_cap`` off-diagonal entries are kept
    per row of ``U`` and per column of ``L``.  ``drop_tol = 0`` with
    ``fill_cap >= n`` gives the exact LU factorization without pivoting.

    Raises
    ------
    FactorizationError
        if a pivot has magnitude below ``1e-14`` times the norm of its row.
    """
    A = as_sparse(A)
    n, m = A.shape
    if n != m:
        raise ValueError("ILUT needs a square matrix")
    if drop_tol < 0:
        raise ValueError("drop_tol must be nonnegative")
    if fill_cap is None:
        fill_cap = default_fill_cap(A)
    dtype = complex if np.iscomplexobj(A.data) else float
    Acsc = A.tocsc()
    Acsc.sort_indices()

    u_rows: list[dict] = [None] * n  # u_rows[i] = {j: U[i, j]} for j > i
    u_diag = np.zeros(n, dtype=dtype)
    l_cols: list[dict] = [None] * n  # l_cols[i] = {j: L[j, i]} for j > i
    l_row_refs: list[list] = [[] for _ in range(n)]  # (i, L[k, i]) for i < k
    u_col_refs: list[list] = [[] for _ in range(n)]  # (i, U[i, k]) for i < k

    indptr, indices, data = A.indptr, A.indices, A.data
    cptr, cind, cdata = Acsc.indptr, Acsc.indices, Acsc.data
    for k in range(n):
        # row k of U (columns >= k)
        lo, hi = indptr[k], indptr[k + 1]
        row_norm = math.sqrt(sum(abs(v) ** 2 for v in data[lo:hi]))
        z = {int(j): v for j, v in zip(indices[lo:hi], data[lo:hi]) if j >= k}
        for i, lki in l_row_refs[k]:
            for j, uij in u_rows[i].items():
                if j >= k:
                    z[j] = z.get(j, 0.0) - lki * uij
        # column k of L (rows > k)
        clo, chi = cptr[k], cptr[k + 1]
        w = {int(j): v for j, v in zip(cind[clo:chi], cdata[clo:chi]) if j > k}
        for i, uik in u_col_refs[k]:
            for j, lji in l_cols[i].items():
                if j > k:
                    w[j] = w.get(j, 0.0) - uik * lji

        pivot = z.get(k, 0.0)
        if abs(pivot) <= PIVOT_TOL * max(row_norm, np.finfo(float).tiny):
            raise FactorizationError(k, pivot)
        z = _sparsify(z, fill_cap, drop_tol, protect=k)
        w = _sparsify(w, fill_cap, drop_tol)

        u_diag[k] = pivot
        del z[k]
        u_rows[k] = z
        for j, v in z.items():
            u_col_refs[j].append((k, v))
        lcol = {j: v / pivot for j, v in w.items()}
        l_cols[k] = lcol
        for j, v in lcol.items():
            l_row_refs[j].append((k, v))

    L = _assemble(n, l_cols, np.ones(n, dtype=dtype), lower=True)
    U = _assemble(n, u_rows, u_diag, lower=False)
    return IlutFactors(L=L, U=U, drop_tol=drop_tol, fill_cap=fill_cap)


def _assemble(n, parts, diag, lower: bool) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for i, entries in enumerate(parts):
        rows.append(i)
        cols.append(i)
        vals.append(diag[i])
        for j, v in entries.items():
            # lower: parts[i] is column i with row indices j; upper: row i, columns j
            if lower:
                rows.append(j)
                cols.append(i)
            else:
                rows.append(i)
                cols.append(j)
            vals.append(v)
    return as_sparse(sp.coo_matrix((vals, (rows, cols)), shape=(n, n)))


class TriangularSolver:
    """Repeated solves with a fixed sparse triangular matrix.

    SuperLU with natural ordering and pivoting disabled performs no
    elimination on a triangular input, so its solve is a compiled triangular
    sweep.  If SuperLU permutes anyway, ``spsolve_triangular`` is used.
    """

    def __init__(self, T: sp.csr_matrix, lower: bool):
        self.T = T.astype(complex).tocsr()
        self.lower = lower
        self._lu = None
        try:
            lu = spla.splu(self.T.tocsc(), permc_spec="NATURAL", diag_pivot_thresh=0.0,
                           options=dict(SymmetricMode=True))
            ident = np.arange(T.shape[0])
            if np.array_equal(lu.perm_r, ident) and np.array_equal(lu.perm_c, ident):
                self._lu = lu
        except RuntimeError as exc:  # exactly singular
            raise FactorizationError(-1, 0.0) from exc
        if self._lu is None:
            self._adj = self.T.conj().T.tocsr()

    def solve(self, b, adjoint: bool = False) -> np.ndarray:
        if self._lu is not None:
            return self._lu.solve(np.asarray(b, dtype=complex), trans="H" if adjoint else "N")
        if adjoint:
            return spla.spsolve_triangular(self._adj, b, lower=not self.lower)
        return spla.spsolve_triangular(self.T, b, lower=self.lower)


class SplitOperator(spla.LinearOperator):
    """The split-preconditioned operator ``L^{-1} A U^{-1}``.

    Parameters
    ----------
    A
        square sparse matrix.
    factors
        incomplete factors of ``A``; ``None`` means no preconditioning.
    """

    def __init__(self, A, factors: IlutFactors | None = None):
        self.A = as_sparse(A).astype(complex)
        self.AH = self.A.conj().T.tocsr()
        n = self.A.shape[0]
        super().__init__(dtype=complex, shape=(n, n))
        self.factors = factors
        if factors is not None:
            self._L = TriangularSolver(factors.L, lower=True)
            self._U = TriangularSolver(factors.U, lower=False)
        else:
            self._L = self._U = None

    @classmethod
    def build(cls, A, drop_tol: float | None = 0.05, fill_cap: int | None = None) -> "SplitOperator":
        """Factor ``A`` with ILUT (skipped when ``drop_tol`` is ``None``)."""
        if drop_tol is None:
            return cls(A)
        return cls(A, ilut_factor(A, drop_tol, fill_cap))

    def _matvec(self, x):
        x = np.asarray(x, dtype=complex).reshape(-1)
        if self.factors is None:
            return self.A @ x
        return self._L.solve(self.A @ self._U.solve(x))

    def _rmatvec(self, x):
        x = np.asarray(x, dtype=complex).reshape(-1)
        if self.factors is None:
            return self.AH @ x
        return self._U.solve(self.AH @ self._L.solve(x, adjoint=True), adjoint=True)

    # maps between original and preconditioned variables
    def precondition_rhs(self, b, adjoint: bool = False) -> np.ndarray:
        """``L^{-1} b`` (primal) or ``U^{-*} b`` (dual)."""
        b = as_complex_vector(b)
        if self.factors is None:
            return b
        return self._U.solve(b, adjoint=True) if adjoint else self._L.solve(b)

    def recover(self, y, adjoint: bool = False) -> np.ndarray:
        """``U^{-1} y`` (primal) or ``L^{-*} y`` (dual)."""
        y = as_complex_vector(y)
        if self.factors is None:
            return y
        return self._L.solve(y, adjoint=True) if adjoint else self._U.solve(y)

    def to_preconditioned(self, x, adjoint: bool = False) -> np.ndarray:
        """``U x`` (primal) or ``L^* x`` (dual); inverse of :meth:`recover`."""
        x = as_complex_vector(x)
        if self.factors is None:
            return x
        if adjoint:
            return self.factors.L.conj().T @ x
        return self.factors.U @ x


def split_apply(op: SplitOperator, x, adjoint: bool = False) -> np.ndarray:
    x = as_complex_vector(x)
    if x.shape[0] != op.shape[1]:
        raise ValueError("dimension mismatch")
    return op.rmatvec(x) if adjoint else op.matvec(x)
