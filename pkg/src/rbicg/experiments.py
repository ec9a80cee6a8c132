"""Experiment drivers behind the CLI: repeated solves, principal angles, IRKA comparisons."""
from __future__ import annotations

import logging
import time
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from .bicg import DualSystem, Termination
from .ilut import SplitOperator
from .irka import SolverOptions, irka_run
from .numerics import as_sparse, principal_angle_cosines
from .problems import save_matrix_market
from .recycling import solve_rbicg
from .report import ExperimentReport, SolveRecord

logger = logging.getLogger(__name__)

#: largest order for which reference invariant subspaces are computed
ANGLE_MAX_N = 4096
#: up to this order the eigenproblem is solved densely
DENSE_EIG_MAX_N = 600


def _curve(values, scale):
    scale = scale if scale > 0 else 1.0
    return [float(v) / scale for v in values]


def solve_record(run, system, res, bnorm, bdnorm, basis_dim=0) -> SolveRecord:
    h = res.history
    dscale = bdnorm if bdnorm > 0 else (h.dual_resid[0] if h.dual_resid else 1.0)
    return SolveRecord(run, system, int(h.iterations), h.reason.value, int(basis_dim),
                       bool(getattr(res, "basis_updated", False)),
                       _curve(h.resid, bnorm), _curve(h.dual_resid, dscale))


def invariant_subspaces(op, nev: int = 8, seed: int = 0, method: str = "auto"):
    """Right and left invariant subspaces of the ``nev`` smallest-magnitude eigenvalues.

    ``op`` is a :class:`SplitOperator`.  Small problems are solved densely; larger
    ones by shift-invert Arnoldi at zero, applying ``(L^{-1} A U^{-1})^{-1} = U A^{-1} L``
    with a sparse LU of ``A``.  Returns ``(values, X_right, X_left)``.
    """
    n = op.shape[0]
    if n > ANGLE_MAX_N:
        raise ValueError(f"invariant subspaces are only computed for n <= {ANGLE_MAX_N}")
    nev = min(nev, n)
    if method == "auto":
        method = "dense" if n <= DENSE_EIG_MAX_N or nev >= n - 1 else "arnoldi"
    if method == "dense":
        P = np.column_stack([op.matvec(e) for e in np.eye(n, dtype=complex)])
        vals, vl, vr = scipy.linalg.eig(P, left=True, right=True)
        order = np.lexsort((np.angle(vals), np.abs(vals)))[:nev]
        return vals[order], vr[:, order], vl[:, order]
    if method != "arnoldi":
        raise ValueError(f"unknown eigen method {method!r}")
    lu = spla.splu(as_sparse(op.A).astype(complex).tocsc())
    f = op.factors

    def inv(y):
        y = np.asarray(y, dtype=complex).reshape(-1)
        z = lu.solve(f.L @ y if f is not None else y)
        return f.U @ z if f is not None else z

    def inv_adj(y):
        y = np.asarray(y, dtype=complex).reshape(-1)
        z = lu.solve(f.U.conj().T @ y if f is not None else y, trans="H")
        return f.L.conj().T @ z if f is not None else z

    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    ncv = min(n - 1, max(4 * nev + 1, 40))
    nev_ask = min(nev + 4, n - 2)
    out = []
    for matvec, opinv in ((op.matvec, inv), (op.rmatvec, inv_adj)):
        P = spla.LinearOperator((n, n), matvec=matvec, dtype=complex)
        Pinv = spla.LinearOperator((n, n), matvec=opinv, dtype=complex)
        vals, vecs = spla.eigs(P, k=nev_ask, sigma=0, OPinv=Pinv, v0=v0, ncv=ncv, tol=1e-12)
        order = np.lexsort((np.angle(vals), np.abs(vals)))[:nev]
        out.append((vals[order], vecs[:, order]))
    (vals, right), (_, left) = out
    return vals, right, left


def repeat_solve(A, b, runs: int = 4, s: int = 40, k: int = 10, tol: float = 1e-8,
                 drop_tol: float | None = 0.05, seed: int = 0, angles: bool = True, nev: int = 8,
                 x_init=None, b_dual=None, problem: str = "custom", timing: bool = False,
                 max_itn: int | None = None) -> ExperimentReport:
    """Solve the same dual pair ``runs`` times, each run seeded with the previous basis.

    The primal right-hand side is ``L^{-1} b``.  The dual right-hand side
    defaults to zero so that it only drives the dual Krylov space; both
    initial guesses default to the vector of all ones.  Angle tables compare
    the recycle spaces at the start of runs ``2..runs`` with the invariant
    subspaces of the preconditioned operator.
    """
    if runs < 2:
        raise ValueError("runs must be at least 2")
    A = as_sparse(A)
    n = A.shape[0]
    t0 = time.perf_counter()
    op = SplitOperator.build(A, drop_tol)
    t_fact = time.perf_counter() - t0
    bp = op.precondition_rhs(b)
    bd = np.zeros(n, dtype=complex) if b_dual is None else op.precondition_rhs(b_dual, adjoint=True)
    x0 = np.ones(n, dtype=complex) if x_init is None else np.asarray(x_init, dtype=complex)
    sys = DualSystem(op, bp, bd)
    report = ExperimentReport("repeat-solve", meta={
        "problem": problem, "n": n, "s": s, "k": k, "tol": tol, "drop_tol": drop_tol,
        "runs": runs, "seed": seed, "nnz": int(A.nnz)})
    bnorm, bdnorm = np.linalg.norm(bp), np.linalg.norm(bd)
    basis = None
    bases = []
    solve_times = []
    for run in range(1, runs + 1):
        t1 = time.perf_counter()
        res = solve_rbicg(sys, basis, x0, x0, tol=tol, max_itn=max_itn, s=s, k=k, seed=seed,
                          check_basis=False)
        solve_times.append(time.perf_counter() - t1)
        report.solves.append(solve_record(run, "primary", res, bnorm, bdnorm,
                                          0 if basis is None else basis.k))
        if res.history.reason is not Termination.CONVERGED:
            report.notices.append(f"run {run}: {res.history.reason.value}")
        basis = res.new_basis if res.new_basis is not None and res.new_basis.k else None
        bases.append(basis)
    if angles:
        if n > ANGLE_MAX_N:
            report.notices.append(f"principal angles skipped: n = {n} > {ANGLE_MAX_N}")
        else:
            t2 = time.perf_counter()
            vals, right, left = invariant_subspaces(op, nev, seed)
            report.results["eigenvalues"] = [[float(v.real), float(v.imag)] for v in vals]
            for run in range(2, runs + 1):
                B = bases[run - 2]
                if B is None:
                    cos_p = cos_d = [0.0] * len(vals)
                else:
                    cos_p = _padded(principal_angle_cosines(right, B.U), len(vals))
                    cos_d = _padded(principal_angle_cosines(left, B.U_dual), len(vals))
                report.angles.append({"run": run, "primal": cos_p, "dual": cos_d})
            t_angles = time.perf_counter() - t2
    if timing:
        report.timing = {"factorization": t_fact, "solves": solve_times}
        if angles and n <= ANGLE_MAX_N:
            report.timing["angles"] = t_angles
    return report


def _padded(cos, m):
    cos = [float(min(c, 1.0)) for c in np.asarray(cos).real]
    return cos[:m] + [0.0] * max(0, m - len(cos))


def count_close(cosines, level: float = 0.99) -> int:
    return int(sum(c >= level for c in cosines))


def angles_report(A, U, U_dual=None, drop_tol: float | None = 0.05, nev: int = 8,
                  seed: int = 0) -> ExperimentReport:
    """Cosines between given bases and the preconditioned invariant subspaces."""
    op = SplitOperator.build(as_sparse(A), drop_tol)
    vals, right, left = invariant_subspaces(op, nev, seed)
    entry = {"run": 0, "primal": _padded(principal_angle_cosines(right, np.atleast_2d(U.T).T), len(vals))}
    if U_dual is not None:
        entry["dual"] = _padded(principal_angle_cosines(left, np.atleast_2d(U_dual.T).T), len(vals))
    return ExperimentReport("angles", meta={"n": op.shape[0], "drop_tol": drop_tol, "nev": nev},
                            angles=[entry],
                            results={"eigenvalues": [[float(v.real), float(v.imag)] for v in vals]})


def _irka_arm(model, r, shifts, solver, opts, shift_tol, max_steps, report, arm):
    t0 = time.perf_counter()
    res = irka_run(model, r, shifts, solver=solver, shift_tol=shift_tol, max_steps=max_steps, opts=opts)
    elapsed = time.perf_counter() - t0
    steps = []
    for st in res.steps:
        steps.append({"step": st.step, "rel_change": st.rel_change,
                      "shifts": [[float(z.real), float(z.imag)] for z in st.shifts],
                      "solves": [{"slot": i, "iterations": sv.iterations, "reason": sv.reason,
                                  "basis_dim": sv.basis_dim, "basis_updated": sv.basis_updated,
                                  "resid_primal": sv.resid_primal, "resid_dual": sv.resid_dual}
                                 for i, sv in enumerate(st.solves)]})
        for i, sv in enumerate(st.solves):
            report.solves.append(SolveRecord(st.step, f"{arm}/{i}", sv.iterations, sv.reason,
                                             sv.basis_dim, sv.basis_updated,
                                             list(sv.primary_curve), list(sv.dual_curve)))
    summary = {
        "converged": res.converged,
        "steps": len(res.steps),
        "final_shifts": [[float(z.real), float(z.imag)] for z in res.shifts],
        "total_iterations": res.total_iterations,
        "smallest_shift_iterations": int(sum(res.slot_iterations(0))),
        "per_step": steps,
    }
    return summary, elapsed, res


def save_reduced(res, directory, meta: dict) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    red = res.reduced
    for name, obj in (("Er", red.E), ("Ar", red.A), ("br", red.b), ("cr", red.c)):
        save_matrix_market(directory / f"{name}.mtx", obj)
    record = ExperimentReport("reduced-model", meta=dict(meta), results={
        "r": red.r, "converged": res.converged, "steps": len(res.steps),
        "shifts": [[float(z.real), float(z.imag)] for z in res.shifts],
        "wv_cond": red.wv_cond,
        "resid_primal": [sv.resid_primal for sv in res.steps[-1].solves],
        "resid_dual": [sv.resid_dual for sv in res.steps[-1].solves]})
    (directory / "reduced.json").write_text(record.to_json(), encoding="utf-8")


def irka_report(model, r: int, shifts, solver: str = "bicg", opts: SolverOptions | None = None,
                shift_tol: float = 1e-6, max_steps: int = 100, problem: str = "custom",
                timing: bool = False, save_dir=None) -> ExperimentReport:
    """IRKA with one solver, or ``solver = "compare"`` for BiCG against RBiCG.

    With ``save_dir`` the reduced model of the last arm is written there as
    Matrix Market arrays ``Er``, ``Ar``, ``br``, ``cr`` plus ``reduced.json``.
    """
    opts = opts or SolverOptions()
    arms = ["bicg", "rbicg"] if solver == "compare" else [solver]
    report = ExperimentReport("irka", meta={
        "problem": problem, "n": model.n, "r": r, "solver": solver,
        "initial_shifts": [[float(np.real(z)), float(np.imag(z))] for z in shifts],
        "s": opts.s, "k": opts.k, "tol": opts.tol, "drop_tol": opts.drop_tol,
        "recycle_every": opts.recycle_every, "recycle_slots": opts.recycle_slots,
        "shift_tol": shift_tol, "max_steps": max_steps, "seed": opts.seed})
    times = {}
    for arm in arms:
        summary, elapsed, res = _irka_arm(model, r, shifts, arm, opts, shift_tol, max_steps, report, arm)
        report.results[arm] = summary
        times[arm] = elapsed
        if not res.converged:
            report.notices.append(f"{arm}: IRKA did not converge in {max_steps} steps")
        bad = sorted({sv.reason for st in res.steps for sv in st.solves} - {Termination.CONVERGED.value})
        if bad:
            report.notices.append(f"{arm}: inner solves ended with {', '.join(bad)}")
    if save_dir is not None:
        save_reduced(res, save_dir, report.meta)
    if solver == "compare":
        b, rb = report.results["bicg"], report.results["rbicg"]
        report.results["comparison"] = {
            "total_iterations": [b["total_iterations"], rb["total_iterations"]],
            "smallest_shift_iterations": [b["smallest_shift_iterations"], rb["smallest_shift_iterations"]],
            "ratio_total": b["total_iterations"] / max(rb["total_iterations"], 1),
            "ratio_smallest_shift": b["smallest_shift_iterations"] / max(rb["smallest_shift_iterations"], 1),
        }
    if timing:
        report.timing = {"total": times}
        if solver == "compare":
            report.timing["ratio"] = times["bicg"] / max(times["rbicg"], 1e-12)
    return report
