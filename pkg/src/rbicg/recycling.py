"""Recycling BiCG for a sequence of dual systems."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .basis import CycleState, RecycleBasis
from .bicg import BREAKDOWN_TOL, ConvergenceHistory, DualSystem, Termination, _rng, _targets
from .numerics import as_complex_vector
from .recycle_space import TRUNC_TOL, CandidateSpace, RecycleSpaceBuilder, cycle_gamma

logger = logging.getLogger(__name__)


def project_initial(basis: RecycleBasis, x_init, x_init_dual, r_init, r_init_dual):
    """Shift the initial guesses so that ``C~^* r_0 = 0`` and ``C^* r~_0 = 0``.

    ``x_0 = x_{-1} + U C^^* r_{-1}`` and ``r_0 = (I - C C^^*) r_{-1}``,
    with ``C^ = C~ D_c^{-1}``; the dual uses ``C' = C D_c^{-1}``.
    """
    x_init, x_init_dual = as_complex_vector(x_init), as_complex_vector(x_init_dual)
    r_init, r_init_dual = as_complex_vector(r_init), as_complex_vector(r_init_dual)
    if any(v.shape[0] != basis.n for v in (x_init, x_init_dual, r_init, r_init_dual)):
        raise ValueError("vector length does not match the recycle basis")
    if basis.k == 0:
        return x_init.copy(), x_init_dual.copy(), r_init.copy(), r_init_dual.copy()
    coef = basis.C_hat.conj().T @ r_init
    coef_d = basis.C_check.conj().T @ r_init_dual
    return (x_init + basis.U @ coef, x_init_dual + basis.U_dual @ coef_d,
            r_init - basis.C @ coef, r_init_dual - basis.C_dual @ coef_d)


@dataclass
class RecycleResult:
    x: np.ndarray
    x_dual: np.ndarray
    history: ConvergenceHistory
    # closed cycles; vectors are dropped unless keep_cycles was requested
    cycles: list = field(default_factory=list)
    new_basis: RecycleBasis | None = None
    basis_updated: bool = False
    pencils: list = field(default_factory=list)
    selections: list = field(default_factory=list)
    V: np.ndarray | None = None
    V_dual: np.ndarray | None = None
    # the recycle space the solve ran with
    used_basis: RecycleBasis | None = None

    @property
    def harmonic_ritz_values(self) -> np.ndarray:
        sel: list[CandidateSpace] = self.selections
        return sel[-1].values if sel else np.zeros(0, dtype=complex)


class _CycleRecorder:
    """Lanczos vectors and ``zeta`` history of the open cycle."""

    def __init__(self, k: int):
        self.k = k
        self.reset(1, None, None)

    def reset(self, start, v_prev, v_prev_dual):
        self.start = start
        self.v_prev, self.v_prev_dual = v_prev, v_prev_dual
        self.V, self.Vt, self.Bc, self.Btc = [], [], [], []

    def __len__(self):
        return len(self.V)


def solve_rbicg(sys: DualSystem, basis: RecycleBasis | None = None, x_init=None, x_init_dual=None,
                tol: float = 1e-8, max_itn: int | None = None, s: int = 40, k: int | None = None,
                update: bool = True, trunc_tol: float = TRUNC_TOL, assembly: str = "fast",
                seed=0, check_basis: bool = True, keep_cycles: bool = False,
                keep_basis: bool = False) -> RecycleResult:
    """Recycling BiCG.

    Parameters
    ----------
    sys
        the dual pair; ``basis`` must satisfy ``C = A U`` for ``sys.op``.
    basis
        recycle space, ``None`` or empty for plain BiCG iterates.
    s
        cycle length; a new recycle space is built from every closed cycle.
    k
        dimension of the new recycle space (default: that of ``basis``, or 10).
    update
        build ``new_basis``; otherwise ``basis`` is returned unchanged.
    keep_basis
        store all Lanczos vectors (for tests).

    Returns
    -------
    RecycleResult
        ``new_basis`` is the space for the *next* system; it is bi-orthogonal
        for the current operator and must be refreshed when the operator changes.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if s < 2:
        raise ValueError("cycle length s must be at least 2")
    A = sys.op
    n = sys.n
    basis = RecycleBasis.empty(n) if basis is None else basis
    if basis.n != n:
        raise ValueError("recycle basis does not match the system dimension")
    if check_basis:
        basis.check(A)
    k_new = (basis.k or 10) if k is None else k
    max_itn = 10 * n if max_itn is None else max_itn
    C, Ct, U, Ut = basis.C, basis.C_dual, basis.U, basis.U_dual
    Chat, Ccheck = basis.C_hat, basis.C_check

    x = np.zeros(n, dtype=complex) if x_init is None else as_complex_vector(x_init)
    xt = np.zeros(n, dtype=complex) if x_init_dual is None else as_complex_vector(x_init_dual)
    hist = ConvergenceHistory()
    r = sys.b - A.matvec(x)
    rt = sys.b_dual - A.rmatvec(xt)
    x, xt, r, rt = project_initial(basis, x, xt, r, rt)
    rho = np.vdot(rt, r)
    if rho == 0 and np.linalg.norm(r) > 0:
        xt = _rng(seed).standard_normal(n) + 0j
        rt = sys.b_dual - A.rmatvec(xt)
        _, xt, _, rt = project_initial(basis, x, xt, r, rt)
        rho = np.vdot(rt, r)
        hist.rerandomized = True
    t_primal, t_dual, hist.dual_waived = _targets(sys.b, sys.b_dual, xt, tol)

    nr, nrt = np.linalg.norm(r), np.linalg.norm(rt)
    hist.resid.append(nr)
    hist.dual_resid.append(nrt)
    hist.rho.append(rho)
    result = RecycleResult(x, xt, hist, new_basis=basis, used_basis=basis)
    if nr <= t_primal and nrt <= t_dual:
        hist.reason = Termination.CONVERGED
        return result

    builder = RecycleSpaceBuilder(A, basis, k_new, trunc_tol, assembly) if update and k_new > 0 else None
    rec = _CycleRecorder(basis.k)
    all_V, all_Vt = [], []
    zeta_c = np.zeros(basis.k, dtype=complex)
    zeta_ct = np.zeros(basis.k, dtype=complex)
    zeta_prev = np.zeros(basis.k, dtype=complex)
    zeta_prev_t = np.zeros(basis.k, dtype=complex)
    p = np.zeros(n, dtype=complex)
    pt = np.zeros(n, dtype=complex)
    beta = 0.0
    cycles_closed = 0

    def close_cycle(v_next, v_next_t):
        nonlocal cycles_closed
        m = len(rec)
        G, Gt = cycle_gamma(hist, rec.start, m)
        cyc = CycleState(cycles_closed + 1, rec.start, np.column_stack(rec.V), np.column_stack(rec.Vt),
                         rec.v_prev, rec.v_prev_dual, v_next, v_next_t, G, Gt,
                         _cols(rec.Bc, basis.k, m), _cols(rec.Btc, basis.k, m))
        if builder is not None:
            builder.add_cycle(cyc)
        result.cycles.append(cyc if keep_cycles else cyc.strip())
        cycles_closed += 1
        rec.reset(rec.start + m, cyc.V[:, -1], cyc.V_dual[:, -1])

    for i in range(1, max_itn + 1):
        if abs(rho) <= BREAKDOWN_TOL * nr * nrt:
            hist.reason = Termination.SERIOUS_BREAKDOWN
            break
        d = rho / nr
        v, vt = r / nr, rt / np.conj(d)
        rec.V.append(v)
        rec.Vt.append(vt)
        if keep_basis:
            all_V.append(v)
            all_Vt.append(vt)
        p = r + beta * p
        pt = rt + np.conj(beta) * pt
        z = A.matvec(p)
        zt = A.rmatvec(pt)
        zeta = Chat.conj().T @ z
        zeta_t = Ccheck.conj().T @ zt
        q = z - C @ zeta
        qt = zt - Ct @ zeta_t
        # column of B = C^^* A V from the zeta recurrence
        rec.Bc.append((zeta - beta * zeta_prev) / nr)
        rec.Btc.append((zeta_t - np.conj(beta) * zeta_prev_t) / np.conj(d))
        zeta_prev, zeta_prev_t = zeta, zeta_t
        sigma = np.vdot(pt, q)
        if abs(sigma) <= BREAKDOWN_TOL * np.linalg.norm(pt) * np.linalg.norm(q):
            hist.reason = Termination.SECOND_KIND_BREAKDOWN
            for lst in (rec.V, rec.Vt, rec.Bc, rec.Btc):
                lst.pop()
            if keep_basis:
                all_V.pop()
                all_Vt.pop()
            break
        alpha = rho / sigma
        x += alpha * p
        xt += np.conj(alpha) * pt
        r -= alpha * q
        rt -= np.conj(alpha) * qt
        zeta_c += alpha * zeta
        zeta_ct += np.conj(alpha) * zeta_t
        nr, nrt = np.linalg.norm(r), np.linalg.norm(rt)
        rho_new = np.vdot(rt, r)
        beta = rho_new / rho
        rho = rho_new
        hist.alpha.append(alpha)
        hist.beta.append(beta)
        hist.rho.append(rho)
        hist.resid.append(nr)
        hist.dual_resid.append(nrt)
        hist.iterations = i
        done = nr <= t_primal and nrt <= t_dual
        if len(rec) == s and rho != 0:
            close_cycle(r / nr, rt / np.conj(rho / nr))
        if done:
            hist.reason = Termination.CONVERGED
            break

    # trailing partial cycle, if it can still carry k vectors
    m = len(rec)
    if (builder is not None and cycles_closed > 0 and m >= k_new and m > 0
            and hist.reason is not Termination.SERIOUS_BREAKDOWN and len(hist.alpha) >= rec.start + m - 1
            and rho != 0):
        close_cycle(r / nr, rt / np.conj(rho / nr))

    x -= U @ zeta_c
    xt -= Ut @ zeta_ct
    result.x, result.x_dual = x, xt
    if builder is not None and builder.result is not None:
        result.new_basis = builder.result
        result.basis_updated = True
        result.pencils = builder.pencils
        result.selections = builder.selections
    if keep_basis and all_V:
        result.V = np.column_stack(all_V)
        result.V_dual = np.column_stack(all_Vt)
    return result


def _cols(cols, k, m):
    return np.column_stack(cols) if k else np.zeros((0, m), dtype=complex)
