import numpy as np
import pytest

from rbicg.basis import CycleState, RecycleBasis
from rbicg.bicg import ConvergenceHistory, DualSystem
from rbicg.numerics import as_operator, principal_angle_cosines
from rbicg.recycle_space import (TRUNC_TOL, PencilBlocks, PencilCase, RecycleSpaceBuilder,
                                 assemble_pencil, biorthogonalize, build_tridiagonal,
                                 cycle_gamma, harmonic_ritz_select, refresh_for_new_system,
                                 select_case)
from rbicg.recycling import solve_rbicg

from conftest import crandn, near_hermitian, rel, shifted_nonsymmetric
from pencil_cases import compare_fast_naive, pencil_instance


def exact_basis(A, k, which="small"):
    """Bi-orthogonal recycle space from the exact eigenvectors of ``A``."""
    lam, X = np.linalg.eig(A)
    order = np.argsort(np.abs(lam))[:k]
    Y = np.linalg.inv(X).conj().T  # left eigenvectors
    return biorthogonalize(X[:, order], Y[:, order], A).basis


def test_single_iteration_window():
    h = ConvergenceHistory(alpha=[2.0], beta=[0.3], resid=[1.0, 0.5])
    T = build_tridiagonal(h, 1, 1)
    np.testing.assert_allclose(T.to_dense(), [[0.5]])


def test_window_errors():
    h = ConvergenceHistory(alpha=[2.0, 0.0], beta=[0.3, 0.1], resid=[1.0, 0.5, 0.2])
    with pytest.raises(ValueError):
        build_tridiagonal(h, 1, 3)
    with pytest.raises(ZeroDivisionError):
        build_tridiagonal(h, 1, 2)


@pytest.mark.parametrize("seed", range(4))
def test_tridiagonal_rebuild_with_recycling(seed):
    r = np.random.default_rng(seed)
    n = 60
    A = shifted_nonsymmetric(r, n, shift=2.0)
    b, bt = crandn(r, n), crandn(r, n)
    basis = exact_basis(A, 3)
    res = solve_rbicg(DualSystem(A, b, bt), basis, tol=1e-14, max_itn=12, s=50, keep_basis=True)
    V, Vt = res.V, res.V_dual
    A1 = A - basis.C @ (basis.C_hat.conj().T @ A)
    for first, last in ((1, 3), (2, 9), (1, 11)):
        T = build_tridiagonal(res.history, first, last).to_dense()
        sl = slice(first - 1, last)
        np.testing.assert_allclose(T, Vt[:, sl].conj().T @ A1 @ V[:, sl], atol=1e-10 * np.abs(T).max())
    # Gamma reproduces the three-term recurrences in both directions
    m = 8
    G, Gt = cycle_gamma(res.history, 2, m)
    Ups = np.column_stack([V[:, 0], V[:, 1:m + 1], V[:, m + 1]])
    Upst = np.column_stack([Vt[:, 0], Vt[:, 1:m + 1], Vt[:, m + 1]])
    A1h = A.conj().T - basis.C_dual @ (basis.C_check.conj().T @ A.conj().T)
    assert rel(Ups @ G, A1 @ V[:, 1:m + 1]) <= 1e-10
    assert rel(Upst @ Gt, A1h @ Vt[:, 1:m + 1]) <= 1e-10
    np.testing.assert_allclose(Gt[1:-1], G[1:-1].conj().T, atol=1e-14)


def test_first_cycle_pencil_is_t1(rng):
    n, s = 30, 6
    A = shifted_nonsymmetric(rng, n)
    res = solve_rbicg(DualSystem(A, crandn(rng, n), crandn(rng, n)), tol=1e-14, s=s, k=2,
                      max_itn=s + 1, keep_cycles=True)
    cyc = res.cycles[0]
    blocks = assemble_pencil(RecycleBasis.empty(n), cyc, PencilCase.FIRST_SYSTEM_FIRST_CYCLE)
    np.testing.assert_array_equal(blocks.psi_gram, np.eye(s))
    np.testing.assert_array_equal(blocks.phi_gram, np.eye(s))
    np.testing.assert_array_equal(blocks.H, cyc.T)
    vals = harmonic_ritz_select(blocks, s).values
    ev = np.linalg.eigvals(cyc.T)
    np.testing.assert_allclose(np.sort_complex(vals), np.sort_complex(ev), rtol=1e-10)


def test_select_2x2_closed_form():
    T = np.array([[2.0, 1.0], [1.0, 2.0]])
    eye = np.eye(2)
    cand = harmonic_ritz_select(PencilBlocks(PencilCase.FIRST_SYSTEM_FIRST_CYCLE, eye, eye, T, eye), 1)
    np.testing.assert_allclose(cand.values, [1.0])
    w = cand.W[:, 0]
    assert abs(abs(np.vdot(w, [1, -1])) / np.linalg.norm(w) - np.sqrt(2)) < 1e-12


def test_select_magnitude_order():
    P = np.diag([5.0, 0.1, 3.0])
    eye = np.eye(3)
    cand = harmonic_ritz_select(PencilBlocks(PencilCase.GENERAL, eye, eye, P, eye), 2)
    np.testing.assert_allclose(cand.values, [0.1, 3.0])


def test_select_tie_break_by_argument():
    P = np.diag([1j, -1.0, 1.0, 2.0])
    eye = np.eye(4)
    cand = harmonic_ritz_select(PencilBlocks(PencilCase.GENERAL, eye, eye, P, eye), 3)
    np.testing.assert_allclose(cand.values, [1.0, 1j, -1.0])


def test_select_too_few_finite():
    eye = np.eye(2)
    with pytest.raises(ValueError):
        harmonic_ritz_select(PencilBlocks(PencilCase.GENERAL, eye, eye, eye, eye), 3)


def test_case_selection():
    empty, full = RecycleBasis.empty(5), exact_basis(np.diag([1.0, 2, 3, 4, 5]), 2)
    assert select_case(empty, True) is PencilCase.FIRST_SYSTEM_FIRST_CYCLE
    assert select_case(empty, False) is PencilCase.FIRST_SYSTEM_LATER_CYCLE
    assert select_case(full, True) is PencilCase.LATER_SYSTEM_FIRST_CYCLE
    assert select_case(full, False) is PencilCase.GENERAL


@pytest.mark.parametrize("seed", range(6))
def test_fast_assembly_matches_naive(seed):
    seen = set()
    for case, err, dist in compare_fast_naive(pencil_instance(seed)):
        seen.add(case)
        assert err <= 1e-10, case
        assert dist <= 1e-8, case
    assert len(seen) == 4


def test_general_case_structural_blocks():
    inst = pencil_instance(3)
    basis, cycles = inst["runs"][1]
    builder = RecycleSpaceBuilder(inst["sys"].op, basis, inst["k"])
    builder.add_cycle(cycles[0])
    blocks = builder.add_cycle(cycles[1])
    k, p, s = basis.k, builder.pencils[0].order, cycles[1].s
    p = builder.carry.sigma.shape[0]
    G, F = blocks.psi_gram, blocks.phi_gram
    # C~^* Upsilon and Upsilon~^* C blocks are exact zeros; the Upsilon block is the identity
    assert np.all(G[:k, k + p:] == 0) and np.all(G[k + p:, :k] == 0)
    np.testing.assert_array_equal(G[k + p:, k + p:], np.eye(s + 2))
    np.testing.assert_array_equal(F[k + p:, k:], np.eye(s + 2, s, k=-1))
    assert np.all(F[:k, p:] == 0)


def test_missing_carry_rejected():
    inst = pencil_instance(0)
    basis, cycles = inst["runs"][1]
    with pytest.raises(ValueError):
        assemble_pencil(basis, cycles[1], PencilCase.GENERAL, carry=None, prev=basis)
    with pytest.raises(ValueError):
        assemble_pencil(basis, cycles[1], PencilCase.GENERAL, carry=None, prev=None)


@pytest.mark.parametrize("seed", range(3))
def test_harmonic_ritz_residual(seed):
    r = np.random.default_rng(seed)
    n, s, k = 80, 10, 4
    A = near_hermitian(r, n)
    b = crandn(r, n)
    sys = DualSystem(A, b, b.copy())
    res = solve_rbicg(sys, tol=1e-12, s=s, k=k, max_itn=2 * s, keep_cycles=True)
    builder = RecycleSpaceBuilder(sys.op, RecycleBasis.empty(n), k)
    norm_a = np.linalg.norm(A, 2)
    for cyc in res.cycles:
        prev = builder.current
        blocks = builder.add_cycle(cyc)
        cand = builder.selections[-1]
        if prev is None:
            # first cycle of the first system: plain Ritz pairs of T, test space V~
            Phi = cyc.V
            Q = np.linalg.qr(cyc.V_dual)[0]
        else:
            Phi, Phit = np.hstack([prev.U, cyc.V]), np.hstack([prev.U_dual, cyc.V_dual])
            Q = np.linalg.qr(A.conj().T @ Phit)[0]
        for lam, w in zip(cand.values, cand.W.T):
            u = Phi @ w
            assert np.linalg.norm(Q.conj().T @ (A @ u - lam * u)) <= 1e-8 * norm_a * np.linalg.norm(u)
        del blocks


def test_biorthogonalize_already_biorthogonal():
    n = 6
    A = np.eye(n)
    U = np.eye(n)[:, :2] * np.array([np.sqrt(2), 1.0])
    res = biorthogonalize(U, U, A)
    assert res.basis.k == 2
    np.testing.assert_allclose(sorted(res.basis.d_c), [1, 1])
    np.testing.assert_allclose(principal_angle_cosines(res.basis.U, U), [1, 1])


def test_biorthogonalize_rank_one():
    n = 6
    A = np.eye(n)
    U = np.eye(n)[:, :2]
    Ut = np.column_stack([np.eye(n)[:, 0], np.eye(n)[:, 3]])  # U~^* U = diag(1, 0)
    res = biorthogonalize(U, Ut, A)
    assert res.basis.k == 1


def test_biorthogonalize_empty_warns():
    n = 4
    U = np.eye(n)[:, :1]
    with pytest.warns(RuntimeWarning):
        res = biorthogonalize(U, np.eye(n)[:, 1:2], np.eye(n))
    assert res.basis.k == 0


def test_biorthogonalize_random(rng):
    n, k = 60, 5
    A = shifted_nonsymmetric(rng, n) + 0j
    U, Ut = crandn(rng, n, k), crandn(rng, n, k)
    res = biorthogonalize(U, Ut, A)
    B = res.basis
    S = B.C_dual.conj().T @ B.C
    assert np.abs(S - np.diag(np.diag(S))).max() <= 1e-10 * np.abs(S).max()
    assert np.all(B.d_c > 0) and np.all(B.d_c >= TRUNC_TOL)
    np.testing.assert_allclose(np.diag(S).real, B.d_c, rtol=1e-10)
    np.testing.assert_allclose(principal_angle_cosines(B.U, U), np.ones(k), atol=1e-10)
    np.testing.assert_allclose(B.C_hat.conj().T @ B.C, np.eye(k), atol=1e-10)
    np.testing.assert_allclose(B.C_check.conj().T @ B.C_dual, np.eye(k), atol=1e-10)
    B.check(A)


def test_refresh_same_operator(rng):
    n = 40
    A = shifted_nonsymmetric(rng, n)
    basis = biorthogonalize(crandn(rng, n, 3), crandn(rng, n, 3), A).basis
    new = refresh_for_new_system(basis, A)
    assert new.k == basis.k
    np.testing.assert_allclose(principal_angle_cosines(new.U, basis.U), np.ones(3), atol=1e-10)


def test_refresh_small_shift_change():
    from rbicg.ilut import SplitOperator
    from rbicg.problems import gen_heat_model

    m = gen_heat_model(400, dim=2)
    op1 = SplitOperator.build(m.shifted(10.0), 0.05)
    op2 = SplitOperator.build(m.shifted(10.5), 0.05)
    lam = len(m.b)
    rng = np.random.default_rng(0)
    basis = biorthogonalize(crandn(rng, lam, 4), crandn(rng, lam, 4), op1).basis
    new = refresh_for_new_system(basis, op2)
    assert new.k == 4
    cos = principal_angle_cosines(new.U, basis.U)
    assert cos.min() >= 1 - 1e-10
    new.check(op2)
    with pytest.raises(ValueError):
        basis.check(op2, tol=1e-12)


@pytest.mark.parametrize("seed", range(2))
def test_fast_assembly_survives_truncation(seed):
    # a loose tolerance forces truncated spaces; the recurrences keep running
    r = np.random.default_rng(seed)
    n, s, k, tt = 120, 12, 5, 0.05
    A = near_hermitian(r, n)
    b, c = crandn(r, n), crandn(r, n)
    first = solve_rbicg(DualSystem(A, b, c), RecycleBasis.empty(n), tol=1e-10, s=s, k=k,
                        trunc_tol=tt, max_itn=3 * s, update=False, keep_cycles=True)
    builder = RecycleSpaceBuilder(A, RecycleBasis.empty(n), k, tt)
    dims = []
    for cyc in first.cycles:
        case = select_case(builder.basis, builder.current is None)
        ref = assemble_pencil(builder.basis, cyc, case, prev=builder.current, op=as_operator(A), naive=True)
        got = builder.add_cycle(cyc)
        assert rel(got.lhs, ref.lhs) <= 1e-9 and rel(got.rhs, ref.rhs) <= 1e-9
        dims.append(builder.current.k)
    assert min(dims) < k
