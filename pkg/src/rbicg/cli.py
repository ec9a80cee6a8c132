"""Command-line entry point: ``rbicg {repeat-solve,irka,gen,angles}``."""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .ilut import FactorizationError
from .irka import SingularShiftError, SolverOptions
from .problems import (ConvDiffConfig, MatrixMarketError, StateSpaceModel, gen_convdiff,
                       gen_heat_model, load_matrix_market, save_matrix_market)
from .report import ExperimentReport, ReportIOError, export_report

EXIT_OK = 0
EXIT_BAD_FLAGS = 2
EXIT_BREAKDOWN = 3
EXIT_NO_CONVERGENCE = 4
EXIT_IO = 5

logger = logging.getLogger("rbicg")


class UsageError(ValueError):
    pass


def _parse_shifts(text: str) -> list[complex]:
    try:
        vals = [complex(tok.strip().replace(" ", "")) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"cannot parse shifts {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty shift list")
    return vals


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return v


def _drop_tol(text: str):
    if text.lower() == "none":
        return None
    v = float(text)
    if v < 0:
        raise argparse.ArgumentTypeError("drop tolerance must be nonnegative")
    return v


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--tol", type=float, default=1e-8, help="relative residual tolerance")
    p.add_argument("--drop-tol", type=_drop_tol, default=0.05,
                   help="ILUT drop tolerance ('none' disables preconditioning)")
    p.add_argument("--s", type=int, default=40, help="cycle length")
    p.add_argument("--k", type=_positive_int, default=10, help="recycle space dimension")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, help="report path (default: stdout)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--timing", action="store_true", help="include wall times in the report")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rbicg", description="Recycling BiCG experiments")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("repeat-solve", help="solve one dual pair repeatedly, recycling between runs")
    p.add_argument("--h", type=float, default=1 / 64, help="mesh width of the conv-diff problem")
    p.add_argument("--matrix", type=Path, help="Matrix Market operator (instead of conv-diff)")
    p.add_argument("--rhs", type=Path, help="Matrix Market right-hand side (default: ones)")
    p.add_argument("--runs", type=int, default=4)
    p.add_argument("--nev", type=int, default=8, help="dimension of the reference subspaces")
    p.add_argument("--no-angles", action="store_true")
    p.add_argument("--max-itn", type=int)
    _add_common(p)

    p = sub.add_parser("irka", help="IRKA with BiCG, RBiCG or direct inner solves")
    p.add_argument("--model", choices=("heat",), default="heat")
    p.add_argument("--n", type=int, default=2500, help="heat model order (rounded to a square in 2-D)")
    p.add_argument("--dim", type=int, choices=(1, 2), default=2)
    p.add_argument("--E", dest="E_path", type=Path, help="Matrix Market E (with --A, --b, --c)")
    p.add_argument("--A", dest="A_path", type=Path)
    p.add_argument("--b", dest="b_path", type=Path)
    p.add_argument("--c", dest="c_path", type=Path)
    p.add_argument("--r", type=int, default=3)
    p.add_argument("--shifts", type=_parse_shifts, default=None,
                   help="comma-separated initial shifts (default 1e-5,7.08e-3,5.01 for r = 3)")
    p.add_argument("--solver", choices=("bicg", "rbicg", "direct", "compare"), default="compare")
    p.add_argument("--recycle-every", type=int, default=5)
    p.add_argument("--recycle-slots", type=int, default=1,
                   help="recycle only for this many smallest shifts (0: all)")
    p.add_argument("--shift-tol", type=float, default=1e-6)
    p.add_argument("--max-steps", type=int, default=100)
    p.add_argument("--save-reduced", type=Path, help="directory for the reduced model")
    _add_common(p)
    p.set_defaults(tol=1e-6, s=20)

    p = sub.add_parser("gen", help="write problem matrices in Matrix Market format")
    p.add_argument("problem", choices=("convdiff", "heat"))
    p.add_argument("--h", type=float, default=1 / 64)
    p.add_argument("--n", type=int, default=2500)
    p.add_argument("--dim", type=int, choices=(1, 2), default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("angles", help="principal angles between bases and invariant subspaces")
    p.add_argument("--matrix", type=Path, required=True)
    p.add_argument("--basis", type=Path, required=True, help="Matrix Market array U")
    p.add_argument("--dual-basis", type=Path, help="Matrix Market array U~")
    p.add_argument("--drop-tol", type=_drop_tol, default=0.05)
    p.add_argument("--nev", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)
    p.add_argument("--format", choices=("json",), default="json")
    return ap


def _emit(report: ExperimentReport, args) -> None:
    if args.out is None:
        if args.format != "json":
            raise UsageError("CSV output needs --out")
        sys.stdout.write(report.to_json())
    else:
        export_report(report, args.out, args.format)


def _status(report: ExperimentReport) -> int:
    reasons = {s.reason for s in report.solves}
    if reasons & {"serious_breakdown", "second_kind_breakdown"}:
        return EXIT_BREAKDOWN
    if "max_itn" in reasons or any("did not converge" in n for n in report.notices):
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def _cmd_repeat_solve(args) -> int:
    from .experiments import repeat_solve

    if args.runs < 2:
        raise UsageError("--runs must be at least 2")
    if args.matrix is not None:
        A = load_matrix_market(args.matrix)
        b = np.ones(A.shape[0]) if args.rhs is None else load_matrix_market(args.rhs)
        problem = str(args.matrix.name)
    else:
        A, b = gen_convdiff(ConvDiffConfig(h=args.h))
        problem = f"convdiff(h=1/{round(1 / args.h)})"
    report = repeat_solve(A, b, runs=args.runs, s=args.s, k=args.k, tol=args.tol,
                          drop_tol=args.drop_tol, seed=args.seed, angles=not args.no_angles,
                          nev=args.nev, problem=problem, timing=args.timing, max_itn=args.max_itn)
    _emit(report, args)
    return _status(report)


def _load_model(args) -> tuple[StateSpaceModel, str]:
    paths = [args.E_path, args.A_path, args.b_path, args.c_path]
    if any(p is not None for p in paths):
        if not all(p is not None for p in paths):
            raise UsageError("--E, --A, --b and --c must be given together")
        E, A, b, c = (load_matrix_market(p) for p in paths)
        return StateSpaceModel(E, A, b, c), str(args.A_path.name)
    return gen_heat_model(args.n, dim=args.dim, seed=args.seed), f"heat(n={args.n},dim={args.dim})"


def _cmd_irka(args) -> int:
    from .experiments import irka_report

    model, problem = _load_model(args)
    shifts = args.shifts
    if shifts is None:
        if args.r != 3:
            raise UsageError("--shifts is required unless r = 3")
        shifts = [1e-5, 7.08e-3, 5.01]
    if len(shifts) != args.r:
        raise UsageError(f"--shifts has {len(shifts)} values, expected r = {args.r}")
    opts = SolverOptions(tol=args.tol, drop_tol=args.drop_tol, s=args.s, k=args.k,
                         recycle_every=args.recycle_every,
                         recycle_slots=args.recycle_slots or None, seed=args.seed)
    report = irka_report(model, args.r, shifts, args.solver, opts, args.shift_tol, args.max_steps,
                         problem=problem, timing=args.timing, save_dir=args.save_reduced)
    _emit(report, args)
    return _status(report)


def _cmd_gen(args) -> int:
    args.out.mkdir(parents=True, exist_ok=True)
    if args.problem == "convdiff":
        A, b = gen_convdiff(ConvDiffConfig(h=args.h))
        save_matrix_market(args.out / "A.mtx", A, comment=f"conv-diff h = {args.h}")
        save_matrix_market(args.out / "b.mtx", b)
    else:
        m = gen_heat_model(args.n, dim=args.dim, seed=args.seed)
        for name, obj in (("E", m.E), ("A", m.A), ("b", m.b), ("c", m.c)):
            save_matrix_market(args.out / f"{name}.mtx", obj)
    return EXIT_OK


def _cmd_angles(args) -> int:
    from .experiments import angles_report

    A = load_matrix_market(args.matrix)
    U = np.asarray(load_matrix_market(args.basis))
    Ud = None if args.dual_basis is None else np.asarray(load_matrix_market(args.dual_basis))
    report = angles_report(A, U.reshape(A.shape[0], -1),
                           None if Ud is None else Ud.reshape(A.shape[0], -1),
                           drop_tol=args.drop_tol, nev=args.nev, seed=args.seed)
    _emit(report, args)
    return EXIT_OK


COMMANDS = {"repeat-solve": _cmd_repeat_solve, "irka": _cmd_irka, "gen": _cmd_gen, "angles": _cmd_angles}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_BAD_FLAGS
    level = logging.ERROR - 10 * min(args.verbose, 3)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", RuntimeWarning)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"rbicg: error: {exc}", file=sys.stderr)
        return EXIT_BAD_FLAGS
    except (MatrixMarketError, ReportIOError, OSError) as exc:
        print(f"rbicg: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FactorizationError, SingularShiftError, np.linalg.LinAlgError) as exc:
        print(f"rbicg: breakdown: {exc}", file=sys.stderr)
        return EXIT_BREAKDOWN
    except ValueError as exc:
        print(f"rbicg: error: {exc}", file=sys.stderr)
        return EXIT_BAD_FLAGS


if __name__ == "__main__":
    sys.exit(main())
