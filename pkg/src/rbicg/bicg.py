"""Biconjugate gradients for a pair of dual systems ``A x = b``, ``A^* x~ = b~``."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .numerics import as_complex_vector

BREAKDOWN_TOL = 1e-14


class Termination(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITN = "max_itn"
    SERIOUS_BREAKDOWN = "serious_breakdown"
    SECOND_KIND_BREAKDOWN = "second_kind_breakdown"


@dataclass
class DualSystem:
    """``op`` is anything with ``matvec``/``rmatvec`` (matrix, LinearOperator)."""

    op: object
    b: np.ndarray
    b_dual: np.ndarray

    def __post_init__(self):
        if not isinstance(self.op, spla.LinearOperator):
            self.op = spla.aslinearoperator(self.op)
        n, m = self.op.shape
        if n != m:
            raise ValueError("operator must be square")
        self.b = as_complex_vector(self.b)
        self.b_dual = as_complex_vector(self.b_dual)
        if self.b.shape[0] != n or self.b_dual.shape[0] != n:
            raise ValueError("right-hand sides do not match the operator")

    @property
    def n(self) -> int:
        return self.op.shape[0]


@dataclass
class ConvergenceHistory:
    """Iteration scalars of one (R)BiCG solve.

    ``alpha[i-1]`` and ``beta[i-1]`` hold the scalars of iteration ``i``;
    ``resid[i]`` and ``dual_resid[i]`` hold ``||r_i||`` and ``||r~_i||``
    for ``i = 0 .. iterations``; ``rho[i] = (r~_i, r_i)``.
    """

    alpha: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    rho: list = field(default_factory=list)
    resid: list = field(default_factory=list)
    dual_resid: list = field(default_factory=list)
    reason: Termination = Termination.MAX_ITN
    iterations: int = 0
    dual_waived: bool = False
    rerandomized: bool = False

    @property
    def converged(self) -> bool:
        return self.reason is Termination.CONVERGED

    def relative_resid(self, bnorm: float) -> np.ndarray:
        return np.asarray(self.resid) / (bnorm if bnorm > 0 else 1.0)


@dataclass
class SolveResult:
    x: np.ndarray
    x_dual: np.ndarray
    history: ConvergenceHistory
    # explicitly stored Lanczos bases, only when requested
    V: np.ndarray | None = None
    V_dual: np.ndarray | None = None


def _targets(b, b_dual, x0_dual, tol):
    bnorm = np.linalg.norm(b)
    bdnorm = np.linalg.norm(b_dual)
    # a zero dual right-hand side only drives the dual Krylov space
    waived = bdnorm == 0 and np.linalg.norm(x0_dual) > 0
    primal = tol * (bnorm if bnorm > 0 else 1.0)
    dual = np.inf if waived else tol * (bdnorm if bdnorm > 0 else 1.0)
    return primal, dual, waived


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def solve_bicg(sys: DualSystem, x0=None, x0_dual=None, tol: float = 1e-8,
               max_itn: int | None = None, seed=0, keep_basis: bool = False) -> SolveResult:
    """Standard BiCG.

    Stops when ``||r_i|| <= tol ||b||`` and ``||r~_i|| <= tol ||b~||``; the
    dual test is waived when ``b~ = 0`` and a nonzero dual guess is given.
    When ``(r~_0, r_0) = 0`` the dual guess is replaced once by a random
    vector drawn from ``seed``.  Breakdowns end the iteration and are reported
    through ``history.reason``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = sys.op
    n = sys.n
    max_itn = 10 * n if max_itn is None else max_itn
    x = np.zeros(n, dtype=complex) if x0 is None else as_complex_vector(x0).copy()
    xt = np.zeros(n, dtype=complex) if x0_dual is None else as_complex_vector(x0_dual).copy()
    hist = ConvergenceHistory()

    r = sys.b - A.matvec(x)
    rt = sys.b_dual - A.rmatvec(xt)
    rho = np.vdot(rt, r)
    if rho == 0 and np.linalg.norm(r) > 0:
        xt = _rng(seed).standard_normal(n) + 0j
        rt = sys.b_dual - A.rmatvec(xt)
        rho = np.vdot(rt, r)
        hist.rerandomized = True
    t_primal, t_dual, hist.dual_waived = _targets(sys.b, sys.b_dual, xt, tol)

    nr, nrt = np.linalg.norm(r), np.linalg.norm(rt)
    hist.resid.append(nr)
    hist.dual_resid.append(nrt)
    hist.rho.append(rho)
    V, Vt = [], []
    if nr <= t_primal and nrt <= t_dual:
        hist.reason = Termination.CONVERGED
        return SolveResult(x, xt, hist)

    p = np.zeros(n, dtype=complex)
    pt = np.zeros(n, dtype=complex)
    beta = 0.0
    for i in range(1, max_itn + 1):
        if abs(rho) <= BREAKDOWN_TOL * nr * nrt:
            hist.reason = Termination.SERIOUS_BREAKDOWN
            break
        if keep_basis:
            V.append(r / nr)
            Vt.append(rt / np.conj(rho / nr))
        p = r + beta * p
        pt = rt + np.conj(beta) * pt
        q = A.matvec(p)
        qt = A.rmatvec(pt)
        sigma = np.vdot(pt, q)
        if abs(sigma) <= BREAKDOWN_TOL * np.linalg.norm(pt) * np.linalg.norm(q):
            hist.reason = Termination.SECOND_KIND_BREAKDOWN
            break
        alpha = rho / sigma
        x += alpha * p
        xt += np.conj(alpha) * pt
        r -= alpha * q
        rt -= np.conj(alpha) * qt
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
        if nr <= t_primal and nrt <= t_dual:
            hist.reason = Termination.CONVERGED
            break
    res = SolveResult(x, xt, hist)
    if keep_basis and V:
        res.V = np.column_stack(V)
        res.V_dual = np.column_stack(Vt)
    return res
