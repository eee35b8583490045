"""Condensed-space primal-dual interior-point solver with a filter line search."""

from .kkt import (
    CondensedAssembler,
    CondensedKKT,
    Direction,
    InertiaResult,
    assemble_condensed,
    full_kkt_matrix,
    full_kkt_oracle,
    inertia_corrected_factorize,
    recover_step,
)
from .linesearch import Filter, FilterParams, filter_line_search, fraction_to_boundary, max_step
from .nlp import (
    Evaluation,
    IterateState,
    LiftedNLP,
    LiftError,
    Residuals,
    compute_residuals,
    evaluate,
    initialize,
    lift_inequalities,
    push_interior,
)
from .restoration import RestorationModel, restore
from .solver import STATUSES, KKTError, Solution, SolverConfig, SolveReport, kkt_error, solve, update_barrier

__all__ = [
    "CondensedAssembler", "CondensedKKT", "Direction", "InertiaResult", "assemble_condensed",
    "full_kkt_matrix", "full_kkt_oracle", "inertia_corrected_factorize", "recover_step", "Filter",
    "FilterParams", "filter_line_search", "fraction_to_boundary", "max_step", "Evaluation", "IterateState",
    "LiftedNLP", "LiftError", "Residuals", "compute_residuals", "evaluate", "initialize",
    "lift_inequalities", "push_interior", "RestorationModel", "restore", "STATUSES", "KKTError",
    "Solution", "SolverConfig", "SolveReport", "kkt_error", "solve", "update_barrier",
]
