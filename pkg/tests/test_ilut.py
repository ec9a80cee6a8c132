import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st

from rbicg.bicg import DualSystem, solve_bicg
from rbicg.ilut import FactorizationError, SplitOperator, default_fill_cap, ilut_factor, split_apply
from rbicg.problems import ConvDiffConfig, gen_convdiff

from conftest import crandn


def tridiag(n):
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


def test_identity_any_drop():
    for tol in (0.0, 0.05, 0.9):
        f = ilut_factor(sp.identity(4, format="csr"), tol)
        np.testing.assert_array_equal(f.L.toarray(), np.eye(4))
        np.testing.assert_array_equal(f.U.toarray(), np.eye(4))


def test_tridiagonal_exact():
    A = tridiag(4)
    f = ilut_factor(A, 0.0)
    np.testing.assert_allclose((f.L @ f.U).toarray(), A.toarray(), atol=1e-15)
    assert np.allclose(np.diag(f.L.toarray()), 1)


def test_exact_lu_without_dropping(rng):
    n = 30
    A = sp.csr_matrix(rng.standard_normal((n, n)) * (rng.random((n, n)) < 0.3) + 5 * np.eye(n))
    f = ilut_factor(A, 0.0, fill_cap=n)
    assert np.linalg.norm((f.L @ f.U - A).toarray()) <= 1e-12 * np.linalg.norm(A.toarray())


def test_dense_lu_oracle(rng):
    # no pivoting: compare with a hand-rolled Doolittle elimination
    n = 12
    A = rng.standard_normal((n, n)) + 6 * np.eye(n)
    L, U = np.eye(n), A.copy()
    for k in range(n - 1):
        L[k + 1:, k] = U[k + 1:, k] / U[k, k]
        U[k + 1:] -= np.outer(L[k + 1:, k], U[k])
    f = ilut_factor(sp.csr_matrix(A), 0.0, fill_cap=n)
    np.testing.assert_allclose(f.L.toarray(), L, atol=1e-12)
    np.testing.assert_allclose(f.U.toarray(), np.triu(U), atol=1e-12)


def test_fill_cap_respected(rng):
    n = 40
    A = sp.csr_matrix(rng.standard_normal((n, n)) + 10 * np.eye(n))
    f = ilut_factor(A, 0.0, fill_cap=3)
    U = f.U.tocsr()
    L = f.L.tocsc()
    assert max(np.diff(U.indptr)) <= 4  # 3 off-diagonal + pivot
    assert max(np.diff(L.indptr)) <= 4


def test_default_fill_cap():
    assert default_fill_cap(tridiag(10)) == 10 + 3


def test_zero_pivot_reports_row():
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(FactorizationError) as info:
        ilut_factor(A, 0.0)
    assert info.value.row == 1


def test_negative_drop_rejected():
    with pytest.raises(ValueError):
        ilut_factor(tridiag(3), -1.0)


def test_split_apply_without_factors_is_spmv(rng):
    A = sp.random(20, 20, density=0.3, random_state=3) + sp.identity(20)
    op = SplitOperator(A)
    x = crandn(rng, 20)
    np.testing.assert_allclose(split_apply(op, x), A @ x)
    np.testing.assert_allclose(split_apply(op, x, adjoint=True), A.conj().T @ x)


def test_split_apply_matches_explicit(rng):
    A, _ = gen_convdiff(ConvDiffConfig(h=1 / 8))
    op = SplitOperator.build(A, 0.05)
    L, U = op.factors.L.toarray(), op.factors.U.toarray()
    P = np.linalg.solve(L, A.toarray()) @ np.linalg.inv(U)
    x = crandn(rng, A.shape[0])
    np.testing.assert_allclose(split_apply(op, x), P @ x, atol=1e-12)
    np.testing.assert_allclose(split_apply(op, x, adjoint=True), P.conj().T @ x, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(5, 60), st.sampled_from([0.0, 0.01, 0.1, 0.3]), st.integers(0, 2**31 - 1))
def test_split_adjoint_identity(n, tol, seed):
    r = np.random.default_rng(seed)
    A = sp.random(n, n, density=0.2, random_state=seed) + 4 * sp.identity(n)
    op = SplitOperator.build(A, tol)
    x, y = crandn(r, n), crandn(r, n)
    lhs = np.vdot(y, op.matvec(x))
    rhs = np.vdot(op.rmatvec(y), x)
    assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(op.matvec(x)) * np.linalg.norm(y)


def test_unpreconditioned_solution_recovered(rng):
    n = 150
    A = sp.csr_matrix(rng.standard_normal((n, n)) / np.sqrt(n) + 3 * np.eye(n))
    b, c = crandn(rng, n), crandn(rng, n)
    op = SplitOperator.build(A, 0.05)
    res = solve_bicg(DualSystem(op, op.precondition_rhs(b), op.precondition_rhs(c, adjoint=True)), tol=1e-10)
    assert res.history.converged
    x = op.recover(res.x)
    xt = op.recover(res.x_dual, adjoint=True)
    np.testing.assert_allclose(x, np.linalg.solve(A.toarray(), b), atol=1e-8 * np.linalg.norm(x))
    np.testing.assert_allclose(xt, np.linalg.solve(A.toarray().conj().T, c), atol=1e-8 * np.linalg.norm(xt))
    np.testing.assert_allclose(op.to_preconditioned(x), res.x, atol=1e-10)


def test_convdiff_factorization_and_convergence():
    A, b = gen_convdiff(ConvDiffConfig())
    op = SplitOperator.build(A, 0.05)
    d = np.abs(op.factors.U.diagonal())
    assert d.min() > 1e-14
    res = solve_bicg(DualSystem(op, op.precondition_rhs(b), op.precondition_rhs(b, adjoint=True)), tol=1e-8)
    assert res.history.converged
    x = op.recover(res.x)
    assert np.linalg.norm(A @ x - b) <= 1e-6 * np.linalg.norm(b)
    # fewer iterations than the unpreconditioned solve
    plain = solve_bicg(DualSystem(A, b, b), tol=1e-8, max_itn=2000)
    assert res.history.iterations < plain.history.iterations


def test_preconditioner_quality_improves_with_smaller_drop():
    A, _ = gen_convdiff(ConvDiffConfig(h=1 / 16))
    errs = []
    for tol in (0.2, 0.05, 0.0):
        f = ilut_factor(A, tol, fill_cap=A.shape[0])
        errs.append(spla.norm(f.L @ f.U - A))
    assert errs[0] >= errs[1] >= errs[2]
    assert errs[2] <= 1e-10 * spla.norm(A)
