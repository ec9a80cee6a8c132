"""Interpolatory model reduction with the iterative rational Krylov algorithm.

Each IRKA step solves, for every shift ``sigma_i``, the dual pair
``(sigma_i E - A) v_i = b`` and ``(sigma_i E - A)^* w_i = c``.  With an
ILUT split preconditioner ``L U ~ sigma_i E - A`` the iterative solvers work
on ``L^{-1} (sigma_i E - A) U^{-1}`` with right-hand sides ``L^{-1} b`` and
``U^{-*} c``; the solutions are mapped back by ``U^{-1}`` and ``L^{-*}``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from .basis import RecycleBasis
from .bicg import DualSystem, Termination, solve_bicg
from .ilut import SplitOperator
from .numerics import generalized_eig_small, orthonormal_basis
from .problems import StateSpaceModel
from .recycle_space import TRUNC_TOL, refresh_for_new_system
from .recycling import solve_rbicg

logger = logging.getLogger(__name__)

SOLVERS = ("bicg", "rbicg", "direct")
#: reciprocal condition number below which an evaluation point counts as a pole
SINGULAR_RCOND = 1e-13


class SingularShiftError(ArithmeticError):
    pass


@dataclass
class ReducedModel:
    """``E_r = W^* E V``, ``A_r = W^* A V``, ``b_r = W^* b``, ``c_r = V^* c``."""

    E: np.ndarray
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    wv_cond: float = float("nan")

    @property
    def r(self) -> int:
        return self.A.shape[0]

    def poles(self) -> np.ndarray:
        return generalized_eig_small(self.A, self.E, rank_tol=0.0).values


def build_reduced(model: StateSpaceModel, V, W) -> ReducedModel:
    """Petrov-Galerkin projection of ``model`` onto ``range(V)`` along ``range(W)``."""
    V = np.asarray(V, dtype=complex)
    W = np.asarray(W, dtype=complex)
    if V.ndim != 2 or V.shape != W.shape or V.shape[0] != model.n:
        raise ValueError("V and W must both be n x r")
    WV = W.conj().T @ V
    sv = scipy.linalg.svdvals(WV)
    if sv.size == 0 or sv[-1] <= 1e-14 * sv[0]:
        raise np.linalg.LinAlgError("W^* V is rank deficient")
    Wh = W.conj().T
    return ReducedModel(Wh @ (model.E @ V), Wh @ (model.A @ V), Wh @ model.b,
                        V.conj().T @ model.c, wv_cond=float(sv[0] / sv[-1]))


def eval_transfer(model, s: complex, with_derivative: bool = False):
    """``G(s) = c^* (s E - A)^{-1} b`` and optionally ``G'(s)``.

    ``G'(s) = -c^* (sE - A)^{-1} E (sE - A)^{-1} b`` costs one extra solve.
    """
    if isinstance(model, ReducedModel):
        M = s * model.E - model.A
        lu, piv = scipy.linalg.lu_factor(M, check_finite=True)
        diag = np.abs(np.diag(lu))
        if diag.min() <= SINGULAR_RCOND * max(diag.max(), np.finfo(float).tiny) or \
                1.0 / np.linalg.cond(M) <= SINGULAR_RCOND:
            raise SingularShiftError(f"s = {s} is (numerically) a pole of the reduced model")
        x = scipy.linalg.lu_solve((lu, piv), model.b)
        g = np.vdot(model.c, x)
        if not with_derivative:
            return g
        y = scipy.linalg.lu_solve((lu, piv), model.E @ x)
        return g, -np.vdot(model.c, y)
    try:
        lu = spla.splu(model.shifted(s).astype(complex).tocsc())
    except RuntimeError as exc:
        raise SingularShiftError(f"s E - A is singular at s = {s}") from exc
    x = lu.solve(model.b)
    g = np.vdot(model.c, x)
    if not with_derivative:
        return g
    y = lu.solve(model.E @ x)
    return g, -np.vdot(model.c, y)


def sort_shifts(shifts) -> np.ndarray:
    """Ascending magnitude, ties by argument (deterministic slot pairing)."""
    shifts = np.asarray(shifts, dtype=complex)
    order = np.lexsort((np.angle(shifts), np.round(np.abs(shifts), 12)))
    return shifts[order]


def _clean_shifts(shifts, real_model: bool):
    shifts = np.asarray(shifts, dtype=complex)
    if real_model:
        # a real model has conjugate-closed poles; drop round-off imaginary parts
        tiny = np.abs(shifts.imag) <= 1e-10 * np.abs(shifts)
        shifts = np.where(tiny, shifts.real + 0j, shifts)
    return sort_shifts(shifts)


@dataclass
class SlotSolve:
    shift: complex
    iterations: int
    reason: str
    recycled: bool
    basis_dim: int
    basis_updated: bool
    resid_primal: float
    resid_dual: float
    # relative residual norms per iteration (preconditioned system)
    primary_curve: list = field(default_factory=list)
    dual_curve: list = field(default_factory=list)


@dataclass
class StepReport:
    step: int
    shifts: list
    solves: list
    rel_change: float
    time: float = 0.0


@dataclass
class IrkaResult:
    reduced: ReducedModel
    shifts: np.ndarray
    steps: list = field(default_factory=list)
    converged: bool = False
    V: np.ndarray | None = None
    W: np.ndarray | None = None
    # per-slot data of the final step for backward-error analysis
    final_solves: list = field(default_factory=list)

    @property
    def total_iterations(self) -> int:
        return sum(s.iterations for st in self.steps for s in st.solves)

    def slot_iterations(self, slot: int) -> list:
        return [st.solves[slot].iterations for st in self.steps]


@dataclass
class SolverOptions:
    """Settings of the inner dual solves."""

    tol: float = 1e-6
    max_itn: int | None = None
    drop_tol: float | None = 0.05
    fill_cap: int | None = None
    s: int = 40
    k: int = 10
    trunc_tol: float = TRUNC_TOL
    recycle_every: int = 1
    # restrict recycling to this many smallest shifts (None: all eligible)
    recycle_slots: int | None = None
    seed: int = 0
    keep_bases: bool = False


@dataclass
class _Slot:
    basis: RecycleBasis | None = None
    v: np.ndarray | None = None
    w: np.ndarray | None = None
    last_iterations: int = 0


@dataclass
class DualSolve:
    """One dual pair in original variables, with the Krylov data from the solve."""

    v: np.ndarray
    w: np.ndarray
    op: SplitOperator | None
    result: object


def solve_shifted_pair(model: StateSpaceModel, sigma, solver: str, opts: SolverOptions,
                       slot: _Slot | None = None, update_basis: bool = False,
                       recycle: bool = False, keep_basis: bool = False) -> tuple[DualSolve, SlotSolve]:
    """Solve one shifted dual pair; ``slot`` carries guesses and the recycle space."""
    M = model.shifted(sigma)
    if solver == "direct":
        try:
            lu = spla.splu(M.astype(complex).tocsc())
        except RuntimeError as exc:
            raise SingularShiftError(f"sigma E - A singular at sigma = {sigma}") from exc
        v = lu.solve(model.b)
        w = lu.solve(model.c, trans="H")
        info = SlotSolve(sigma, 0, Termination.CONVERGED.value, False, 0, False,
                         float(np.linalg.norm(M @ v - model.b)),
                         float(np.linalg.norm(M.conj().T @ w - model.c)))
        return DualSolve(v, w, None, None), info

    slot = slot or _Slot()
    op = SplitOperator.build(M, opts.drop_tol, opts.fill_cap)
    sys = DualSystem(op, op.precondition_rhs(model.b), op.precondition_rhs(model.c, adjoint=True))
    # previous solutions, mapped into the variables of the new preconditioner
    x0 = None if slot.v is None else op.to_preconditioned(slot.v)
    x0d = None if slot.w is None else op.to_preconditioned(slot.w, adjoint=True)
    if solver == "bicg" or not recycle:
        res = solve_bicg(sys, x0, x0d, tol=opts.tol, max_itn=opts.max_itn, seed=opts.seed,
                         keep_basis=keep_basis)
        basis_dim, updated, recycled = 0, False, False
    else:
        basis = None
        if slot.basis is not None and slot.basis.k:
            basis = refresh_for_new_system(slot.basis, op, opts.trunc_tol)
        res = solve_rbicg(sys, basis, x0, x0d, tol=opts.tol, max_itn=opts.max_itn, s=opts.s,
                          k=opts.k, update=update_basis or basis is None, trunc_tol=opts.trunc_tol,
                          seed=opts.seed, keep_basis=keep_basis, check_basis=False)
        if res.new_basis is not None and res.new_basis.k:
            slot.basis = res.new_basis
        basis_dim = 0 if basis is None else basis.k
        updated, recycled = res.basis_updated, basis is not None
    v = op.recover(res.x)
    w = op.recover(res.x_dual, adjoint=True)
    slot.v, slot.w = v, w
    slot.last_iterations = res.history.iterations
    h = res.history
    bn, cn = np.linalg.norm(sys.b) or 1.0, np.linalg.norm(sys.b_dual) or 1.0
    info = SlotSolve(sigma, h.iterations, h.reason.value, recycled, basis_dim,
                     updated, float(np.linalg.norm(M @ v - model.b)),
                     float(np.linalg.norm(M.conj().T @ w - model.c)),
                     [float(x) / bn for x in h.resid], [float(x) / cn for x in h.dual_resid])
    return DualSolve(v, w, op, res), info


def irka_run(model: StateSpaceModel, r: int, shifts, solver: str = "bicg", shift_tol: float = 1e-6,
             max_steps: int = 100, opts: SolverOptions | None = None,
             keep_krylov: bool = False) -> IrkaResult:
    """Run IRKA from the given initial shifts.

    Shifts are kept sorted by magnitude; slot ``i`` (the ``i``-th smallest
    shift) carries its own recycle space, initial guesses and iteration
    count from step to step.  Recycle spaces are rebuilt on steps
    ``1, 1 + recycle_every, ...`` and otherwise reused; a solve that ends
    before closing a cycle of ``s`` iterations leaves its space unchanged.
    """
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}")
    opts = opts or SolverOptions()
    shifts = sort_shifts(shifts)
    if shifts.shape != (r,):
        raise ValueError(f"need exactly r = {r} initial shifts")
    if np.any(shifts == 0) or len(set(np.round(shifts, 14))) != r:
        raise ValueError("initial shifts must be distinct and nonzero")
    real_model = not (np.iscomplexobj(model.A.data) and np.any(model.A.data.imag)) and \
        not (np.iscomplexobj(model.E.data) and np.any(model.E.data.imag))
    n_recycle = r if opts.recycle_slots is None else min(opts.recycle_slots, r)
    slots = [_Slot() for _ in range(r)]
    steps: list[StepReport] = []
    converged = False
    reduced = None
    V = W = None
    last_solves = []
    for step in range(1, max_steps + 1):
        t0 = time.perf_counter()
        update = (step - 1) % max(opts.recycle_every, 1) == 0
        cols_v, cols_w, infos, last_solves = [], [], [], []
        for i, sigma in enumerate(shifts):
            slot = slots[i]
            recycle = solver == "rbicg" and opts.k > 0 and i < n_recycle
            ds, info = solve_shifted_pair(model, sigma, solver, opts, slot,
                                          update_basis=update, recycle=recycle,
                                          keep_basis=keep_krylov)
            cols_v.append(ds.v)
            cols_w.append(ds.w)
            infos.append(info)
            last_solves.append(ds)
        V, W = np.column_stack(cols_v), np.column_stack(cols_w)
        reduced = build_reduced(model, V, W)
        new = _clean_shifts(-reduced.poles(), real_model)
        if not np.all(np.isfinite(new)):
            raise SingularShiftError("reduced model has infinite poles")
        change = float(np.max(np.abs(new - shifts) / np.abs(new)))
        steps.append(StepReport(step, [complex(s) for s in shifts], infos, change,
                                time.perf_counter() - t0))
        logger.info("IRKA step %d: rel. shift change %.3e", step, change)
        shifts = new
        if change < shift_tol:
            converged = True
            break
    if not converged:
        logger.warning("IRKA did not converge in %d steps", max_steps)
    return IrkaResult(reduced, shifts, steps, converged, V, W, last_solves)


# ---------------------------------------------------------------------------
# backward error of inexact solves


@dataclass
class BackwardErrorReport:
    """Residual-based bound on the perturbation the inexact model interpolates.

    ``bound`` surrogates ``||F_2r||`` by
    ``||R_b|| ||(W^* V)^{-1}|| ||W|| + ||V|| ||(W^* V)^{-1}|| ||R_c||``.
    ``primal_orth[j]`` is ``||Q_j^* eta_j|| / ||b||`` with ``Q_j`` an orthonormal
    basis of the dual search space of solve ``j`` (and ``dual_orth`` likewise).
    """

    resid_b: list
    resid_c: list
    inv_wv_norm: float
    bound: float
    primal_orth: list = field(default_factory=list)
    dual_orth: list = field(default_factory=list)

    @property
    def max_orth(self) -> float:
        vals = list(self.primal_orth) + list(self.dual_orth)
        return max(vals) if vals else 0.0


def _search_spaces(ds: DualSolve):
    """Test spaces of the solve mapped to original variables.

    The preconditioned residuals are orthogonal to ``[C~ V~]`` (primal) and
    ``[C V]`` (dual); in original variables ``eta = -L r`` and ``xi = -U^* r~``,
    so the matching spaces are ``L^{-*} [C~ V~]`` and ``U^{-1} [C V]``.
    """
    res = ds.result
    if res is None or getattr(res, "V", None) is None:
        return None, None
    Vt = res.V_dual
    Vp = res.V
    used = getattr(res, "used_basis", None)
    if used is not None and used.k:
        Vt = np.hstack([used.C_dual, Vt])
        Vp = np.hstack([used.C, Vp])
    op = ds.op
    Q = np.column_stack([op.recover(col, adjoint=True) for col in Vt.T])
    P = np.column_stack([op.recover(col) for col in Vp.T])
    return orthonormal_basis(Q), orthonormal_basis(P)


def backward_error_report(model: StateSpaceModel, shifts, solves: list) -> BackwardErrorReport:
    """Residual matrices, the ``F_2r`` bound and Petrov-Galerkin checks.

    ``solves`` are :class:`DualSolve` records (see :func:`solve_shifted_pair`);
    orthogonality is checked only for solves that stored their Krylov bases.
    """
    V = np.column_stack([ds.v for ds in solves])
    W = np.column_stack([ds.w for ds in solves])
    Rb, Rc = [], []
    for sigma, ds in zip(shifts, solves):
        M = model.shifted(sigma)
        Rb.append(M @ ds.v - model.b)
        Rc.append(M.conj().T @ ds.w - model.c)
    Rb, Rc = np.column_stack(Rb), np.column_stack(Rc)
    inv_wv = np.linalg.norm(np.linalg.inv(W.conj().T @ V), 2)
    bound = (np.linalg.norm(Rb, 2) * inv_wv * np.linalg.norm(W, 2)
             + np.linalg.norm(V, 2) * inv_wv * np.linalg.norm(Rc, 2))
    rep = BackwardErrorReport([float(np.linalg.norm(c)) for c in Rb.T],
                              [float(np.linalg.norm(c)) for c in Rc.T], float(inv_wv), float(bound))
    bnorm, cnorm = np.linalg.norm(model.b), np.linalg.norm(model.c)
    for j, ds in enumerate(solves):
        Q, P = _search_spaces(ds)
        if Q is None:
            continue
        rep.primal_orth.append(float(np.linalg.norm(Q.conj().T @ Rb[:, j]) / bnorm))
        rep.dual_orth.append(float(np.linalg.norm(P.conj().T @ Rc[:, j]) / cnorm))
    return rep
