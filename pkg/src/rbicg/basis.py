"""Data passed between recycling solves: the recycle basis and per-cycle Lanczos data."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class BasisInconsistencyError(ValueError):
    """``C`` is not ``A U`` (or ``C~`` not ``A^* U~``) for the operator at hand."""


@dataclass
class RecycleBasis:
    """Recycle space ``(U, U~, C, C~)`` with ``C~^* C = diag(d_c)``.

    ``C = A U`` and ``C~ = A^* U~`` must hold for the operator the basis is
    used with; :func:`rbicg.recycle_space.refresh_for_new_system` re-establishes
    this when the operator changes.
    """

    U: np.ndarray
    U_dual: np.ndarray
    C: np.ndarray
    C_dual: np.ndarray
    d_c: np.ndarray

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=complex)
        self.U_dual = np.asarray(self.U_dual, dtype=complex)
        self.C = np.asarray(self.C, dtype=complex)
        self.C_dual = np.asarray(self.C_dual, dtype=complex)
        self.d_c = np.asarray(self.d_c, dtype=float).reshape(-1)
        shapes = {self.U.shape, self.U_dual.shape, self.C.shape, self.C_dual.shape}
        if len(shapes) != 1 or self.U.ndim != 2 or self.d_c.shape[0] != self.U.shape[1]:
            raise ValueError(f"inconsistent recycle basis shapes: {shapes}, d_c {self.d_c.shape}")
        if self.k and np.any(self.d_c <= 0):
            raise ValueError("d_c must be positive")
        self._ct_u = None

    @classmethod
    def empty(cls, n: int) -> "RecycleBasis":
        z = np.zeros((n, 0), dtype=complex)
        return cls(z, z.copy(), z.copy(), z.copy(), np.zeros(0))

    @property
    def n(self) -> int:
        return self.U.shape[0]

    @property
    def k(self) -> int:
        return self.U.shape[1]

    @property
    def C_hat(self) -> np.ndarray:
        return self.C_dual / self.d_c

    @property
    def C_check(self) -> np.ndarray:
        return self.C / self.d_c

    @property
    def ct_u(self) -> np.ndarray:
        """``C~^* U``; formed once per linear system."""
        if self._ct_u is None:
            self._ct_u = self.C_dual.conj().T @ self.U
        return self._ct_u

    def check(self, op, tol: float = 1e-8) -> None:
        """Raise :class:`BasisInconsistencyError` unless ``C = A U``, ``C~ = A^* U~``."""
        if self.k == 0:
            return
        from .numerics import as_operator

        op = as_operator(op)
        AU = np.column_stack([op.matvec(u) for u in self.U.T])
        AhU = np.column_stack([op.rmatvec(u) for u in self.U_dual.T])
        err = np.linalg.norm(AU - self.C) / max(np.linalg.norm(self.C), 1e-300)
        err_d = np.linalg.norm(AhU - self.C_dual) / max(np.linalg.norm(self.C_dual), 1e-300)
        if err > tol or err_d > tol:
            raise BasisInconsistencyError(
                f"recycle basis does not match operator (rel. errors {err:.2e}, {err_d:.2e})")


@dataclass
class CycleState:
    """Lanczos data of one cycle ``j`` of a (recycling) BiCG solve.

    ``V`` holds ``v_{start} .. v_{start+s-1}``; ``v_prev`` is the last vector
    of the previous cycle (``None`` in the first cycle) and ``v_next`` the
    first vector of the next one.  ``gamma`` is the ``(s+2) x s`` banded block
    with ``(I - C C^^*) A V = [v_prev V v_next] gamma``; its top row is
    zero in the first cycle.  ``B = C^^* A V`` (and the dual analogues).
    """

    index: int
    start: int
    V: np.ndarray
    V_dual: np.ndarray
    v_prev: np.ndarray | None
    v_prev_dual: np.ndarray | None
    v_next: np.ndarray
    v_next_dual: np.ndarray
    gamma: np.ndarray
    gamma_dual: np.ndarray
    B: np.ndarray
    B_dual: np.ndarray

    @property
    def s(self) -> int:
        return self.V.shape[1]

    @property
    def T(self) -> np.ndarray:
        return self.gamma[1:-1]

    def upsilon(self, dual: bool = False) -> np.ndarray:
        """``[v_prev V v_next]``, with a zero column for a missing ``v_prev``."""
        V = self.V_dual if dual else self.V
        prev = self.v_prev_dual if dual else self.v_prev
        nxt = self.v_next_dual if dual else self.v_next
        if prev is None:
            prev = np.zeros(V.shape[0], dtype=complex)
        return np.column_stack([prev, V, nxt])

    def strip(self) -> "CycleState":
        """Copy without the length-``n`` vectors (for lightweight records)."""
        z = np.zeros((0, self.s), dtype=complex)
        e = np.zeros(0, dtype=complex)
        return CycleState(self.index, self.start, z, z, None, None, e, e,
                          self.gamma, self.gamma_dual, self.B, self.B_dual)
