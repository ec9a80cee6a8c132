import numpy as np
import pytest
import scipy.sparse as sp

from rbicg.irka import (ReducedModel, SingularShiftError, SolverOptions, _Slot, backward_error_report,
                        build_reduced, eval_transfer, irka_run, solve_shifted_pair, sort_shifts)
from rbicg.problems import StateSpaceModel, gen_heat_model

from conftest import rel


def scalar_model(a):
    return StateSpaceModel(sp.csr_matrix([[1.0]]), sp.csr_matrix([[-a]]), [1.0], [1.0])


def random_stable(r, n):
    """Real model with SPD E and a stable, mildly nonsymmetric A."""
    M = r.standard_normal((n, n)) / np.sqrt(n)
    E = np.eye(n) + 0.1 * M @ M.T
    S = r.standard_normal((n, n)) / np.sqrt(n)
    A = -(np.diag(np.linspace(1, 20, n)) + 0.5 * (S - S.T) + 0.1 * S @ S.T)
    return StateSpaceModel(sp.csr_matrix(E), sp.csr_matrix(A), r.standard_normal(n), r.standard_normal(n))


def direct_projection(model, shifts):
    V, W = [], []
    for s in shifts:
        M = model.shifted(s).toarray()
        V.append(np.linalg.solve(M, model.b))
        W.append(np.linalg.solve(M.conj().T, model.c))
    return np.column_stack(V), np.column_stack(W)


# ---------------------------------------------------------------------------
# transfer functions


def test_scalar_transfer_and_derivative():
    g, dg = eval_transfer(scalar_model(1.0), 1.0, with_derivative=True)
    assert g == pytest.approx(0.5) and dg == pytest.approx(-0.25)
    red = ReducedModel(np.eye(1), -np.eye(1), np.ones(1), np.ones(1))
    g, dg = eval_transfer(red, 1.0, with_derivative=True)
    assert g == pytest.approx(0.5) and dg == pytest.approx(-0.25)


def test_reduced_pole_is_singular():
    r = np.random.default_rng(3)
    m = random_stable(r, 12)
    V, W = direct_projection(m, [1.0, 2.0, 5.0])
    red = build_reduced(m, V, W)
    for p in red.poles():
        with pytest.raises(SingularShiftError):
            eval_transfer(red, p)


def test_full_model_pole_is_singular():
    with pytest.raises(SingularShiftError):
        eval_transfer(scalar_model(2.0), -2.0)


@pytest.mark.parametrize("s", [0.3, 2.0, 1.0 + 3.0j, 15.0])
def test_derivative_matches_finite_difference(s):
    m = random_stable(np.random.default_rng(11), 20)
    _, dg = eval_transfer(m, s, with_derivative=True)
    h = 1e-6 * abs(s)
    fd = (eval_transfer(m, s + h) - eval_transfer(m, s - h)) / (2 * h)
    assert abs(dg - fd) <= 1e-5 * abs(dg)


@pytest.mark.parametrize("seed", range(3))
def test_hermite_interpolation(seed):
    r = np.random.default_rng(seed)
    m = random_stable(r, 30)
    shifts = [0.5, 1.5, 4.0 + 1.0j, 4.0 - 1.0j]
    red = build_reduced(m, *direct_projection(m, shifts))
    for s in shifts:
        g, dg = eval_transfer(m, s, with_derivative=True)
        gr, dgr = eval_transfer(red, s, with_derivative=True)
        assert abs(g - gr) <= 1e-8 * abs(g)
        assert abs(dg - dgr) <= 1e-8 * abs(dg)


# ---------------------------------------------------------------------------
# projection


def test_selector_projection_is_principal_submodel():
    m = random_stable(np.random.default_rng(5), 10)
    S = np.eye(10)[:, :4]
    red = build_reduced(m, S, S)
    np.testing.assert_allclose(red.E, m.E.toarray()[:4, :4])
    np.testing.assert_allclose(red.A, m.A.toarray()[:4, :4])
    np.testing.assert_allclose(red.b, m.b[:4])
    np.testing.assert_allclose(red.c, m.c[:4])
    assert red.wv_cond == pytest.approx(1.0)


def test_identity_projection_keeps_transfer():
    m = random_stable(np.random.default_rng(6), 8)
    red = build_reduced(m, np.eye(8), np.eye(8))
    for s in (0.1, 1.0, 2.0 + 5.0j):
        assert abs(eval_transfer(red, s) - eval_transfer(m, s)) <= 1e-12 * abs(eval_transfer(m, s))


def test_rank_deficient_projection():
    m = random_stable(np.random.default_rng(7), 6)
    V = np.eye(6)[:, :2]
    W = np.eye(6)[:, 2:4]
    with pytest.raises(np.linalg.LinAlgError):
        build_reduced(m, V, W)
    with pytest.raises(ValueError):
        build_reduced(m, V, np.eye(6)[:, :3])


def test_sort_shifts_deterministic():
    s = sort_shifts([2.0, 1 - 1j, 1 + 1j, -0.5])
    np.testing.assert_array_equal(s, [-0.5, 1 - 1j, 1 + 1j, 2.0])


# ---------------------------------------------------------------------------
# IRKA


@pytest.mark.parametrize("solver", ["direct", "bicg", "rbicg"])
def test_scalar_fixed_point(solver):
    res = irka_run(scalar_model(3.0), 1, [0.7], solver=solver, opts=SolverOptions(tol=1e-12, k=0))
    assert res.converged and len(res.steps) <= 2
    assert res.shifts[0] == pytest.approx(3.0)


def test_fixed_point_and_interpolation_at_convergence():
    m = gen_heat_model(60, dim=1)
    res = irka_run(m, 4, [1e-2, 1.0, 10.0, 100.0], solver="direct", shift_tol=1e-10)
    assert res.converged
    np.testing.assert_allclose(sort_shifts(-res.reduced.poles()), res.shifts, rtol=1e-8)
    for s in res.shifts:
        g, dg = eval_transfer(m, s, with_derivative=True)
        gr, dgr = eval_transfer(res.reduced, s, with_derivative=True)
        assert abs(g - gr) <= 1e-8 * abs(g)
        assert abs(dg - dgr) <= 1e-6 * abs(dg)


def test_real_model_shifts_conjugate_closed():
    m = random_stable(np.random.default_rng(2), 40)
    res = irka_run(m, 4, [0.5, 1.0, 3.0 + 2.0j, 3.0 - 2.0j], solver="direct", max_steps=30)
    for st in res.steps:
        s = np.asarray(st.shifts)
        gap = np.abs(s[:, None] - s.conj()[None, :]).min(axis=1)
        assert np.all(gap <= 1e-8 * np.abs(s))


def test_bicg_and_rbicg_trajectories_agree():
    m = gen_heat_model(400, dim=2)
    opts = SolverOptions(tol=1e-12, s=20, k=8)
    a = irka_run(m, 3, [1e-5, 7.08e-3, 5.01], solver="bicg", opts=opts, max_steps=15)
    b = irka_run(m, 3, [1e-5, 7.08e-3, 5.01], solver="rbicg", opts=opts, max_steps=15)
    assert len(a.steps) == len(b.steps)
    for sa, sb in zip(a.steps, b.steps):
        assert rel(sb.shifts, sa.shifts) <= 1e-6
    assert any(s.recycled for st in b.steps for s in st.solves)


def test_rbicg_without_recycling_is_bicg():
    m = gen_heat_model(100, dim=2)
    a = irka_run(m, 2, [0.1, 10.0], solver="bicg", max_steps=3)
    b = irka_run(m, 2, [0.1, 10.0], solver="rbicg", opts=SolverOptions(k=0), max_steps=3)
    assert [st.shifts for st in a.steps] == [st.shifts for st in b.steps]
    assert a.total_iterations == b.total_iterations


def test_irka_bad_input():
    m = scalar_model(1.0)
    with pytest.raises(ValueError):
        irka_run(m, 1, [0.0])
    with pytest.raises(ValueError):
        irka_run(m, 2, [1.0])
    with pytest.raises(ValueError):
        irka_run(m, 1, [1.0], solver="gmres")


def test_step_cap_keeps_partial_result():
    m = gen_heat_model(50, dim=1)
    res = irka_run(m, 3, [1e-5, 7.08e-3, 5.01], solver="direct", max_steps=2)
    assert not res.converged and len(res.steps) == 2 and res.reduced.r == 3


# ---------------------------------------------------------------------------
# backward error


def test_backward_error_direct_is_zero():
    m = gen_heat_model(40, dim=1)
    shifts = [0.5, 5.0]
    solves = [solve_shifted_pair(m, s, "direct", SolverOptions())[0] for s in shifts]
    rep = backward_error_report(m, shifts, solves)
    assert max(rep.resid_b + rep.resid_c) <= 1e-12 * np.linalg.norm(m.b)
    assert rep.bound <= 1e-10


def test_backward_error_stopping_contract_and_orthogonality():
    m = gen_heat_model(50, dim=1)
    shifts = [1e-2, 1.0, 10.0]
    opts = SolverOptions(tol=1e-6, drop_tol=None)
    pairs = [solve_shifted_pair(m, s, "bicg", opts, keep_basis=True) for s in shifts]
    solves = [p[0] for p in pairs]
    rep = backward_error_report(m, shifts, solves)
    for info, rb, rc in zip([p[1] for p in pairs], rep.resid_b, rep.resid_c):
        assert info.primary_curve[-1] <= 1e-6 and info.dual_curve[-1] <= 1e-6
        # true residuals track the recursive ones at this scale
        assert rb <= 1.01e-6 * np.linalg.norm(m.b) and rc <= 1.01e-6 * np.linalg.norm(m.c)
    assert len(rep.primal_orth) == 3
    assert rep.max_orth <= 1e-6


def test_backward_error_orthogonality_preconditioned_rbicg():
    m = gen_heat_model(64, dim=2)
    opts = SolverOptions(tol=1e-8, s=6, k=3, drop_tol=None)
    slot_solves = []

    slot = _Slot()
    for sigma in (1.0, 1.1):
        slot_solves.append(solve_shifted_pair(m, sigma, "rbicg", opts, slot, update_basis=True,
                                              recycle=True, keep_basis=True))
    ds, info = slot_solves[-1]
    assert slot_solves[0][1].basis_updated
    assert info.recycled and info.basis_dim > 0
    rep = backward_error_report(m, [1.1], [ds])
    assert rep.max_orth <= 1e-6


def test_second_kind_breakdown_after_closed_cycles():
    # unpreconditioned heat grid: the recycled space is badly paired and the
    # third solve ends in a breakdown of the second kind mid-cycle
    m = gen_heat_model(100, dim=2)
    opts = SolverOptions(tol=1e-8, s=10, k=4, drop_tol=None)
    slot = _Slot()
    for sigma in (0.5, 0.55, 2.0):
        ds, info = solve_shifted_pair(m, sigma, "rbicg", opts, slot, update_basis=True,
                                      recycle=True, keep_basis=True)
    assert info.reason == "second_kind_breakdown"
    assert ds.result.V.shape[1] == info.iterations
    assert slot.basis.k == 4
