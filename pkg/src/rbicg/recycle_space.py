"""Construction and update of the recycle space.

Each closed cycle ``j`` of a recycling BiCG solve yields a candidate space
``Phi_j = [U_{j-1} V_j]`` whose image is ``A Phi_j = Psi_j H_j``.  Harmonic
Ritz vectors of ``A`` with respect to ``Phi_j`` solve the small pencil::

    H~^* (Psi~^* Psi) H w = lambda H~^* (Psi~^* Phi) w

The two Gram blocks are assembled from quantities cached from the previous
cycle (``assembly="fast"``) so that the only product with length-``n``
vectors per cycle is ``Upsilon~_j^* U_{j-1}``.  ``assembly="naive"`` forms
every block explicitly and serves as the test oracle.
"""
from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .basis import CycleState, RecycleBasis
from .numerics import Tridiagonal, as_operator, generalized_eig_small, svd_small

logger = logging.getLogger(__name__)

TRUNC_TOL = 1e-6


class PencilCase(str, enum.Enum):
    FIRST_SYSTEM_FIRST_CYCLE = "first_system_first_cycle"
    FIRST_SYSTEM_LATER_CYCLE = "first_system_later_cycle"
    LATER_SYSTEM_FIRST_CYCLE = "later_system_first_cycle"
    GENERAL = "general"


def select_case(basis: RecycleBasis, first_cycle: bool) -> PencilCase:
    if basis.k == 0:
        return (PencilCase.FIRST_SYSTEM_FIRST_CYCLE if first_cycle
                else PencilCase.FIRST_SYSTEM_LATER_CYCLE)
    return PencilCase.LATER_SYSTEM_FIRST_CYCLE if first_cycle else PencilCase.GENERAL


# ---------------------------------------------------------------------------
# tridiagonal blocks from iteration scalars


def _check_window(hist, first: int, last: int):
    if first < 1 or last < first or last > len(hist.alpha):
        raise ValueError(f"iteration window [{first}, {last}] outside history of "
                         f"{len(hist.alpha)} iterations")
    if any(hist.alpha[i - 1] == 0 for i in range(first, last + 1)):
        raise ZeroDivisionError("alpha = 0 inside window")


def _t_entries(hist, i: int):
    """``(T[i-1, i], T[i, i], T[i+1, i])`` of the (infinite) Lanczos matrix, 1-based."""
    a, b, nr = hist.alpha, hist.beta, hist.resid
    alpha = a[i - 1]
    sub = -(nr[i] / nr[i - 1]) / alpha
    if i == 1:
        return 0.0, 1.0 / alpha, sub
    diag = 1.0 / alpha + b[i - 2] / a[i - 2]
    sup = -(nr[i - 2] / nr[i - 1]) * b[i - 2] / a[i - 2]
    return sup, diag, sub


def build_tridiagonal(hist, first: int, last: int) -> Tridiagonal:
    """Rows/columns ``first..last`` (1-based) of ``T`` rebuilt from the scalars.

    ``diag_i = 1/alpha_i + beta_{i-1}/alpha_{i-1}``,
    ``sup_i = -(||r_{i-1}||/||r_i||) beta_i/alpha_i``,
    ``sub_i = -(||r_i||/||r_{i-1}||)/alpha_i``.
    """
    _check_window(hist, first, last)
    cols = [_t_entries(hist, i) for i in range(first, last + 1)]
    diag = [c[1] for c in cols]
    sub = [c[2] for c in cols[:-1]]
    sup = [c[0] for c in cols[1:]]
    return Tridiagonal(sub, diag, sup)


def cycle_gamma(hist, start: int, length: int):
    """``(Gamma, Gamma~)`` of shape ``(length+2) x length`` for iterations
    ``start .. start+length-1``.

    Needs the scalars of iteration ``start+length-1`` including its ``beta``
    and ``||r||``.  Under the Lanczos scaling ``T~ = T^*``.
    """
    last = start + length - 1
    _check_window(hist, start, last)
    G = np.zeros((length + 2, length), dtype=complex)
    Gt = np.zeros_like(G)
    for m in range(length):
        i = start + m
        sup, diag, sub = _t_entries(hist, i)
        G[m, m], G[m + 1, m], G[m + 2, m] = sup, diag, sub
        # T~[i-1, i] = conj(T[i, i-1]); T~[i+1, i] = conj(T[i, i+1])
        Gt[m, m] = np.conj(_t_entries(hist, i - 1)[2]) if i > 1 else 0.0
        Gt[m + 1, m] = np.conj(diag)
        Gt[m + 2, m] = np.conj(-(hist.resid[i - 1] / hist.resid[i]) * hist.beta[i - 1] / hist.alpha[i - 1])
    return G, Gt


# ---------------------------------------------------------------------------
# pencils


@dataclass
class PencilBlocks:
    """``psi_gram = Psi~^* Psi``, ``phi_gram = Psi~^* Phi`` and ``H``, ``H~``.

    The pencil is ``(H~^* psi_gram H, H~^* phi_gram)``.  In the first cycle of
    the first system ``psi_gram = phi_gram = H~ = I`` and ``H = T_1``.
    """

    case: PencilCase
    psi_gram: np.ndarray
    phi_gram: np.ndarray
    H: np.ndarray
    H_dual: np.ndarray

    @property
    def lhs(self) -> np.ndarray:
        return self.H_dual.conj().T @ self.psi_gram @ self.H

    @property
    def rhs(self) -> np.ndarray:
        return self.H_dual.conj().T @ self.phi_gram

    @property
    def order(self) -> int:
        return self.H.shape[1]


@dataclass
class CycleCarry:
    """Small blocks from cycle ``j-1`` needed to assemble cycle ``j``.

    Notation: ``C, C~`` is the basis of the current system, ``U_p`` (``C_p``)
    the recycle space built at the end of the previous cycle, ``U_q`` the
    one before it.  ``XN = W N`` and ``XM = W~ M`` map the previous candidate
    space onto ``U_p`` and ``U~_p``.
    """

    ct_cq: np.ndarray  # C~^* C_q
    cqt_c: np.ndarray  # C_q~^* C
    ct_uq: np.ndarray  # C~^* U_q
    cqt_uq: np.ndarray  # C_q~^* U_q
    cqt_v: np.ndarray  # C_q~^* V_{j-1}
    vt_cq: np.ndarray  # V_{j-1}~^* C_q
    B: np.ndarray
    B_dual: np.ndarray
    gamma: np.ndarray
    gamma_dual: np.ndarray
    XN: np.ndarray
    XM: np.ndarray
    sigma: np.ndarray  # diagonal of C_p~^* C_p


def _ibar(s: int) -> np.ndarray:
    """``s x s`` identity with a zero row on top and at the bottom."""
    return np.eye(s + 2, s, k=-1, dtype=complex)


def _boundary(s_prev: int, s: int) -> np.ndarray:
    """Picks rows ``v_{last}``, ``v_next`` of the previous cycle into the
    first two slots of the current ``Upsilon``."""
    E = np.zeros((s_prev + 2, s + 2), dtype=complex)
    E[s_prev, 0] = 1.0
    E[s_prev + 1, 1] = 1.0
    return E


def _h_matrices(case: PencilCase, k: int, p: int, cycle: CycleState):
    s = cycle.s
    if case is PencilCase.LATER_SYSTEM_FIRST_CYCLE:
        H = np.block([[np.eye(k), cycle.B], [np.zeros((s + 1, k)), cycle.gamma[1:]]])
        Ht = np.block([[np.eye(k), cycle.B_dual], [np.zeros((s + 1, k)), cycle.gamma_dual[1:]]])
        return H.astype(complex), Ht.astype(complex)
    top = [np.eye(p), np.zeros((p, s))]
    bot = [np.zeros((s + 2, p))]
    if case is PencilCase.FIRST_SYSTEM_LATER_CYCLE:
        H = np.block([top, bot + [cycle.gamma]])
        Ht = np.block([top, bot + [cycle.gamma_dual]])
    else:
        H = np.block([[np.zeros((k, p)), cycle.B], top, bot + [cycle.gamma]])
        Ht = np.block([[np.zeros((k, p)), cycle.B_dual], top, bot + [cycle.gamma_dual]])
    return H.astype(complex), Ht.astype(complex)


def _recurrence_blocks(basis: RecycleBasis, carry: CycleCarry, cycle: CycleState):
    """Blocks involving the previous recycle space ``U_p`` from the cache.

    Returns ``(ct_cp, cpt_c, cpt_ups, upst_cp, ct_up, cpt_up)``.
    """
    k = basis.k
    kq = carry.cqt_uq.shape[0]
    s_prev = carry.gamma.shape[1]
    dc = np.diag(basis.d_c).astype(complex)
    XN, XM = carry.XN, carry.XM
    E = _boundary(s_prev, cycle.s)
    ct_cp = np.hstack([carry.ct_cq, dc @ carry.B]) @ XN
    cpt_c = XM.conj().T @ np.vstack([carry.cqt_c, carry.B_dual.conj().T @ dc])
    cpt_ups = XM.conj().T @ np.vstack([np.zeros((kq, cycle.s + 2)), carry.gamma_dual.conj().T @ E])
    upst_cp = np.hstack([np.zeros((cycle.s + 2, kq)), E.T @ carry.gamma]) @ XN
    ct_up = np.hstack([carry.ct_uq, np.zeros((k, s_prev))]) @ XN
    inner = np.block([[carry.cqt_uq, carry.cqt_v], [carry.vt_cq, carry.gamma[1:-1]]])
    cpt_up = XM.conj().T @ inner @ XN
    return ct_cp, cpt_c, cpt_ups, upst_cp, ct_up, cpt_up


def assemble_pencil(basis: RecycleBasis, cycle: CycleState, case: PencilCase,
                    carry: CycleCarry | None = None, prev: RecycleBasis | None = None,
                    op=None, naive: bool = False) -> PencilBlocks:
    """Gram blocks and ``H`` matrices of the harmonic Ritz pencil.

    ``basis`` is the recycle space of the current system (empty in the first
    system) and ``prev`` the space ``(U_{j-1}, U~_{j-1}, A U_{j-1}, ...)`` built
    after the previous cycle.  The fast path needs ``carry``; the naive path
    needs ``op`` and forms every Gram block explicitly.
    """
    s = cycle.s
    k = basis.k
    if case is PencilCase.FIRST_SYSTEM_FIRST_CYCLE:
        eye = np.eye(s, dtype=complex)
        if naive:
            AV = np.column_stack([op.matvec(v) for v in cycle.V.T])
            T = cycle.V_dual.conj().T @ AV
        else:
            T = cycle.T.copy()
        return PencilBlocks(case, eye, eye.copy(), T, eye.copy())

    if case is PencilCase.LATER_SYSTEM_FIRST_CYCLE:
        H, Ht = _h_matrices(case, k, k, cycle)
        if naive:
            Psi = np.hstack([basis.C, cycle.upsilon()[:, 1:]])
            Psit = np.hstack([basis.C_dual, cycle.upsilon(dual=True)[:, 1:]])
            Phi = np.hstack([basis.U, cycle.V])
            return PencilBlocks(case, Psit.conj().T @ Psi, Psit.conj().T @ Phi, H, Ht)
        vt_u = cycle.upsilon(dual=True)[:, 1:].conj().T @ basis.U
        G = np.block([[np.diag(basis.d_c).astype(complex), np.zeros((k, s + 1))],
                      [np.zeros((s + 1, k)), np.eye(s + 1)]])
        F = np.block([[basis.ct_u, np.zeros((k, s))], [vt_u, np.eye(s + 1, s)]])
        return PencilBlocks(case, G, F, H, Ht)

    if prev is None:
        raise ValueError(f"case {case.value} needs the previous recycle space")
    p = prev.k
    H, Ht = _h_matrices(case, k, p, cycle)
    Ups, Upst = cycle.upsilon(), cycle.upsilon(dual=True)
    if naive:
        AU = np.column_stack([op.matvec(u) for u in prev.U.T]) if p else prev.C
        AhU = np.column_stack([op.rmatvec(u) for u in prev.U_dual.T]) if p else prev.C_dual
        Psi = np.hstack([basis.C, AU, Ups])
        Psit = np.hstack([basis.C_dual, AhU, Upst])
        Phi = np.hstack([prev.U, cycle.V])
        return PencilBlocks(case, Psit.conj().T @ Psi, Psit.conj().T @ Phi, H, Ht)
    if carry is None:
        raise ValueError(f"case {case.value} needs the carry from the previous cycle")

    ct_cp, cpt_c, cpt_ups, upst_cp, ct_up, cpt_up = _recurrence_blocks(basis, carry, cycle)
    upst_up = Upst.conj().T @ prev.U  # the one product with length-n vectors
    cpt_v = cpt_ups[:, 1:-1]
    sig = np.diag(carry.sigma).astype(complex)
    z = np.zeros
    G = np.block([
        [np.diag(basis.d_c).astype(complex), ct_cp, z((k, s + 2))],
        [cpt_c, sig, cpt_ups],
        [z((s + 2, k)), upst_cp, np.eye(s + 2)],
    ])
    F = np.block([
        [ct_up, z((k, s))],
        [cpt_up, cpt_v],
        [upst_up, _ibar(s)],
    ])
    if case is PencilCase.FIRST_SYSTEM_LATER_CYCLE:
        G, F = G[k:, k:], F[k:]
    return PencilBlocks(case, G, F, H, Ht)


# ---------------------------------------------------------------------------
# selection and bi-orthogonalization


@dataclass
class CandidateSpace:
    """Selected harmonic Ritz data: pencil eigenvectors ``W``, ``W~`` and values."""

    W: np.ndarray
    W_dual: np.ndarray
    values: np.ndarray
    n_infinite: int = 0
    singular: bool = False


def _selection_order(values: np.ndarray) -> np.ndarray:
    mags = np.abs(values)
    scale = max(mags.max(), np.finfo(float).tiny) if mags.size else 1.0
    # magnitudes equal up to rounding (conjugate pairs) count as ties
    key_mag = np.round(mags / scale, 12)
    return np.lexsort((np.arange(values.size), np.angle(values), key_mag))


def harmonic_ritz_select(blocks: PencilBlocks, k: int, allow_fewer: bool = False) -> CandidateSpace:
    """The ``k`` pencil eigenpairs closest to the origin.

    Right vectors come from the pencil, left vectors (for the dual space)
    from the same decomposition.  Ties in ``|lambda|`` are broken by the
    complex argument, then by index.  Infinite eigenvalues are excluded;
    with ``allow_fewer`` all finite ones are returned when there are fewer
    than ``k``.
    """
    eig = generalized_eig_small(blocks.lhs, blocks.rhs)
    finite = np.isfinite(eig.values)
    n_inf = int(np.count_nonzero(~finite))
    if n_inf:
        logger.warning("%d infinite harmonic Ritz values excluded", n_inf)
    if allow_fewer:
        k = min(k, int(np.count_nonzero(finite)))
    elif np.count_nonzero(finite) < k:
        raise ValueError(f"pencil has {np.count_nonzero(finite)} finite eigenvalues, need {k}")
    idx = np.flatnonzero(finite)
    picked = idx[_selection_order(eig.values[idx])[:k]]
    return CandidateSpace(eig.right[:, picked], eig.left[:, picked], eig.values[picked],
                          n_infinite=n_inf, singular=eig.singular)


@dataclass
class BiorthResult:
    basis: RecycleBasis
    N: np.ndarray  # column maps applied to the input (after normalization)
    M: np.ndarray
    sigma_all: np.ndarray


def biorth_factors(S: np.ndarray, trunc_tol: float = TRUNC_TOL):
    """Truncated SVD ``S = M Sigma N^*`` keeping ``sigma >= trunc_tol``."""
    M, sig, N = svd_small(S)
    p = int(np.count_nonzero(sig >= trunc_tol))
    if p == 0:
        warnings.warn("all singular values of C~^* C below tolerance; recycle space is empty",
                      RuntimeWarning)
    return M[:, :p], sig[:p], N[:, :p], sig


def biorthogonalize(U_raw, U_dual_raw, op, trunc_tol: float = TRUNC_TOL,
                    C_raw=None, C_dual_raw=None, S=None) -> BiorthResult:
    """Bi-orthogonalize ``(U, U~)`` so that ``C~^* C`` is diagonal and positive.

    ``C = A U`` and ``C~ = A^* U~`` are formed with ``op`` unless supplied.
    Columns are first scaled so that ``C`` and ``C~`` have unit columns, which
    makes the absolute truncation tolerance scale-free.  ``S`` may supply a
    precomputed ``C~^* C`` for the scaled columns.
    """
    U_raw = np.asarray(U_raw, dtype=complex)
    U_dual_raw = np.asarray(U_dual_raw, dtype=complex)
    if U_raw.shape != U_dual_raw.shape:
        raise ValueError("primal and dual bases must have equal shapes")
    n, k = U_raw.shape
    if k == 0:
        z = np.zeros((0, 0), dtype=complex)
        return BiorthResult(RecycleBasis.empty(n), z, z, np.zeros(0))
    if C_raw is None or C_dual_raw is None:
        op = as_operator(op)
    if C_raw is None:
        C_raw = np.column_stack([op.matvec(u) for u in U_raw.T])
    if C_dual_raw is None:
        C_dual_raw = np.column_stack([op.rmatvec(u) for u in U_dual_raw.T])
    nc = np.linalg.norm(C_raw, axis=0)
    nct = np.linalg.norm(C_dual_raw, axis=0)
    if np.any(nc == 0) or np.any(nct == 0):
        raise ValueError("recycle candidate with zero image")
    if S is None:
        S = (C_dual_raw / nct).conj().T @ (C_raw / nc)
    M, sig, N, sig_all = biorth_factors(S, trunc_tol)
    Nn = N / nc[:, None]
    Mn = M / nct[:, None]
    basis = RecycleBasis(U_raw @ Nn, U_dual_raw @ Mn, C_raw @ Nn, C_dual_raw @ Mn, sig)
    return BiorthResult(basis, Nn, Mn, sig_all)


def refresh_for_new_system(basis: RecycleBasis, new_op, trunc_tol: float = TRUNC_TOL) -> RecycleBasis:
    """Recompute ``C = A U``, ``C~ = A^* U~`` for ``new_op`` and re-bi-orthogonalize."""
    if basis.k == 0:
        return RecycleBasis.empty(basis.n)
    return biorthogonalize(basis.U, basis.U_dual, new_op, trunc_tol).basis


# ---------------------------------------------------------------------------
# per-solve driver


def _block(m, n):
    return np.zeros((m, n), dtype=complex)


class RecycleSpaceBuilder:
    """Accumulates closed cycles of one solve into an updated recycle space.

    Parameters
    ----------
    op
        the operator of the current system.
    basis
        recycle space used by the current solve (empty for the first system).
    k
        target dimension of the new space.
    assembly
        ``"fast"`` (block recurrences) or ``"naive"`` (explicit products).
    """

    def __init__(self, op, basis: RecycleBasis, k: int, trunc_tol: float = TRUNC_TOL,
                 assembly: str = "fast"):
        if assembly not in ("fast", "naive"):
            raise ValueError(f"unknown assembly {assembly!r}")
        if k < 0:
            raise ValueError("k must be nonnegative")
        self.op = op
        self.basis = basis
        self.k = k
        self.trunc_tol = trunc_tol
        self.naive = assembly == "naive"
        self.current: RecycleBasis | None = None
        self.carry: CycleCarry | None = None
        self.pencils: list[PencilBlocks] = []
        self.selections: list[CandidateSpace] = []
        self.cycles_used = 0

    @property
    def result(self) -> RecycleBasis | None:
        """Recycle space after the last added cycle (``None`` before any)."""
        return self.current

    def add_cycle(self, cycle: CycleState) -> PencilBlocks:
        first = self.current is None
        case = select_case(self.basis, first)
        blocks = assemble_pencil(self.basis, cycle, case, carry=self.carry, prev=self.current,
                                 op=self.op, naive=self.naive)
        cand = harmonic_ritz_select(blocks, min(self.k, blocks.order), allow_fewer=True)
        self._update(cycle, case, blocks, cand)
        self.pencils.append(blocks)
        self.selections.append(cand)
        self.cycles_used += 1
        return blocks

    def _phi(self, cycle: CycleState, case: PencilCase, dual: bool):
        V = cycle.V_dual if dual else cycle.V
        if case is PencilCase.FIRST_SYSTEM_FIRST_CYCLE:
            return V
        if case is PencilCase.LATER_SYSTEM_FIRST_CYCLE:
            return np.hstack([self.basis.U_dual if dual else self.basis.U, V])
        return np.hstack([self.current.U_dual if dual else self.current.U, V])

    def _psi(self, cycle: CycleState, case: PencilCase, dual: bool):
        """``Psi_j`` with ``A Phi_j = Psi_j H_j`` (not used in the very first cycle)."""
        ups = cycle.upsilon(dual)
        if case is PencilCase.LATER_SYSTEM_FIRST_CYCLE:
            return np.hstack([self.basis.C_dual if dual else self.basis.C, ups[:, 1:]])
        prev_c = self.current.C_dual if dual else self.current.C
        if case is PencilCase.FIRST_SYSTEM_LATER_CYCLE:
            return np.hstack([prev_c, ups])
        return np.hstack([self.basis.C_dual if dual else self.basis.C, prev_c, ups])

    def _images(self, cycle, case, blocks, W, Wt):
        """``C_raw = A Phi W`` and ``C~_raw = A^* Phi~ W~`` without operator calls."""
        if case is PencilCase.FIRST_SYSTEM_FIRST_CYCLE:
            ups, upst = cycle.upsilon()[:, 1:], cycle.upsilon(dual=True)[:, 1:]
            return ups @ (cycle.gamma[1:] @ W), upst @ (cycle.gamma_dual[1:] @ Wt)
        return (self._psi(cycle, case, False) @ (blocks.H @ W),
                self._psi(cycle, case, True) @ (blocks.H_dual @ Wt))

    def _update(self, cycle, case, blocks, cand):
        W, Wt = cand.W, cand.W_dual
        Phi, Phit = self._phi(cycle, case, False), self._phi(cycle, case, True)
        if self.naive:
            res = biorthogonalize(Phi @ W, Phit @ Wt, self.op, self.trunc_tol)
        else:
            # images from A Phi = Psi H; C~^* C itself is formed explicitly because
            # bi-orthogonality of the Lanczos vectors decays as the solve converges
            C_raw, Ct_raw = self._images(cycle, case, blocks, W, Wt)
            res = biorthogonalize(Phi @ W, Phit @ Wt, self.op, self.trunc_tol,
                                  C_raw=C_raw, C_dual_raw=Ct_raw)
        XN, XM = W @ res.N, Wt @ res.M
        new = res.basis
        if res.basis.k < W.shape[1]:
            logger.info("recycle space truncated from %d to %d columns", W.shape[1], new.k)
        self.carry = self._next_carry(cycle, case, XN, XM, new)
        self.current = new

    def _next_carry(self, cycle, case, XN, XM, new) -> CycleCarry:
        k, s = self.basis.k, cycle.s
        common = dict(B=cycle.B, B_dual=cycle.B_dual, gamma=cycle.gamma,
                      gamma_dual=cycle.gamma_dual, XN=XN, XM=XM, sigma=new.d_c)
        if case is PencilCase.FIRST_SYSTEM_FIRST_CYCLE:
            return CycleCarry(_block(0, 0), _block(0, 0), _block(0, 0), _block(0, 0),
                              _block(0, s), _block(s, 0), **common)
        if case is PencilCase.LATER_SYSTEM_FIRST_CYCLE:
            dc = np.diag(self.basis.d_c).astype(complex)
            return CycleCarry(dc, dc.copy(), self.basis.ct_u, self.basis.ct_u,
                              _block(k, s), _block(s, k), **common)
        # quantities for U_{j-1} become the "q" quantities for cycle j+1
        ct_cp, cpt_c, cpt_ups, upst_cp, ct_up, cpt_up = _recurrence_blocks(self.basis, self.carry, cycle)
        return CycleCarry(ct_cp, cpt_c, ct_up, cpt_up, cpt_ups[:, 1:-1], upst_cp[1:-1], **common)

