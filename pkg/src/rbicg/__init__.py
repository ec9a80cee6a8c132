"""Recycling BiCG for sequences of dual linear systems, with an IRKA driver."""
from .basis import BasisInconsistencyError, CycleState, RecycleBasis
from .bicg import ConvergenceHistory, DualSystem, SolveResult, Termination, solve_bicg
from .ilut import FactorizationError, IlutFactors, SplitOperator, ilut_factor, split_apply
from .numerics import BreakdownError
from .recycle_space import (
    PencilBlocks,
    PencilCase,
    RecycleSpaceBuilder,
    assemble_pencil,
    biorthogonalize,
    build_tridiagonal,
    harmonic_ritz_select,
    refresh_for_new_system,
)
from .recycling import RecycleResult, project_initial, solve_rbicg

__version__ = "0.1.0"
