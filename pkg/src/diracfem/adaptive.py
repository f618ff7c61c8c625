"""The adaptive loop: solve, estimate, mark, refine.

Marking uses the maximum strategy: a triangle is refined whenever its
indicator exceeds the mark factor times the largest indicator, by strict
inequality.  Marked triangles are bisected twice (all edges halved) with
conformity closure.  One convergence record is appended per iteration,
including the final state that is not refined anymore; the loop stops on a
DOF cap, an iteration cap, a vanishing estimator, or on the minimum-area
guard: once a refinement creates a triangle below the area floor, that mesh
is still solved and recorded as the endpoint of the history, and the run
ends there.  Strong grading reaches the 1e-16 floor after finitely many
steps, so small fractional exponents end early.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterator

import numpy as np

from .estimator import IndicatorField, estimate
from .fem import DiscreteSolution, ProblemSpec, SolverError, num_dofs, solve_problem
from .geometry import Triangulation, bisect, initial_mesh, read_mesh
from .oscillation import xi_global
from .verification import h1_error_off_singularity, l2_error

logger = logging.getLogger(__name__)

__all__ = [
    "AdaptiveConfig",
    "ConvergenceRecord",
    "TerminationStatus",
    "AdaptiveState",
    "AdaptiveResult",
    "mark_maximum",
    "adapt_steps",
    "adapt",
]


class TerminationStatus(Enum):
    MAX_DOFS = "max_dofs"
    MAX_ITERATIONS = "max_iter"
    ZERO_ESTIMATOR = "zero_estimator"
    MIN_AREA_GUARD = "min_area_guard"


@dataclass
class AdaptiveConfig:
    """Loop parameters.

    ``theta`` overrides the problem's fractional exponent when set.  The
    min-area guard stops the run as soon as refinement would create a
    triangle smaller than ``min_triangle_area``.
    """

    theta: float | None = None
    mark_factor: float = 0.5
    max_iterations: int = 1000
    max_dofs: int = 100_000
    solver_tol: float = 1e-10
    min_triangle_area: float = 1e-16

    def __post_init__(self):
        if not 0.0 < self.mark_factor < 1.0:
            raise ValueError("mark_factor must lie strictly between 0 and 1")
        if self.max_dofs < 1:
            raise ValueError("max_dofs must be positive")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")
        if self.solver_tol <= 0.0:
            raise ValueError("solver_tol must be positive")
        if self.min_triangle_area < 0.0:
            raise ValueError("min_triangle_area must be nonnegative")


@dataclass
class ConvergenceRecord:
    """One row of the adaptive history."""

    iteration: int
    ndofs: int
    eta: float
    xi: float
    h_min: float
    err_l2: float | None = None
    err_h1_off: float | None = None


@dataclass
class AdaptiveState:
    """Everything known at one iteration; yielded by :func:`adapt_steps`."""

    iteration: int
    mesh: Triangulation
    solution: DiscreteSolution
    indicators: IndicatorField
    record: ConvergenceRecord
    marked: np.ndarray | None
    status: TerminationStatus | None


@dataclass
class AdaptiveResult:
    records: list[ConvergenceRecord]
    solution: DiscreteSolution
    mesh: Triangulation
    status: TerminationStatus


def mark_maximum(field: IndicatorField, mark_factor: float = 0.5) -> np.ndarray:
    """Triangles whose indicator strictly exceeds mark_factor times the
    largest one; empty exactly when every indicator vanishes."""
    eta = np.sqrt(field.per_triangle_eta_sq)
    maximum = eta.max() if eta.size else 0.0
    if maximum == 0.0:
        return np.zeros(0, dtype=np.int64)
    return np.flatnonzero(eta > mark_factor * maximum)


def _starting_mesh(problem: ProblemSpec) -> Triangulation:
    if problem.mesh_path is not None:
        return read_mesh(problem.mesh_path, domain=problem.domain)
    mesh = initial_mesh(problem.domain)
    # A mesh without interior nodes carries the trivial space, on which the
    # estimator is identically zero; refine uniformly until unknowns exist.
    guard = 0
    while num_dofs(mesh, problem.degree) == 0:
        mesh = bisect(mesh, np.arange(mesh.num_triangles))
        guard += 1
        if guard > 16:
            raise RuntimeError("initial mesh never gained interior nodes")
    return mesh


def adapt_steps(problem: ProblemSpec, config: AdaptiveConfig) -> Iterator[AdaptiveState]:
    """Generator form of the adaptive loop, one state per iteration."""
    theta = problem.theta if config.theta is None else float(config.theta)
    mesh = _starting_mesh(problem)
    iteration = 0
    guard_tripped = False
    while True:
        try:
            u = solve_problem(problem, mesh, tol=config.solver_tol)
        except SolverError as exc:
            raise SolverError(
                f"iteration {iteration}: {exc}", residual=exc.residual
            ) from exc
        field = estimate(u, theta)
        osc = xi_global(mesh, problem.sources, theta, problem.degree)
        field.per_vertex_xi_sq = osc.per_vertex_xi**2
        field.global_xi = osc.global_xi

        err_l2 = err_h1 = None
        if problem.exact is not None:
            err_l2 = l2_error(u, problem.exact)
            err_h1 = h1_error_off_singularity(u, problem.exact)
        record = ConvergenceRecord(
            iteration=iteration,
            ndofs=num_dofs(mesh, problem.degree),
            eta=field.global_eta,
            xi=osc.global_xi,
            h_min=float(mesh.meshsize.min()),
            err_l2=err_l2,
            err_h1_off=err_h1,
        )
        logger.debug(
            "iteration %d: ndofs=%d eta=%.6g xi=%.6g",
            iteration, record.ndofs, record.eta, record.xi,
        )

        status = None
        marked = None
        refined = None
        if guard_tripped:
            status = TerminationStatus.MIN_AREA_GUARD
        elif field.global_eta == 0.0:
            status = TerminationStatus.ZERO_ESTIMATOR
        elif record.ndofs >= config.max_dofs:
            status = TerminationStatus.MAX_DOFS
        elif iteration >= config.max_iterations:
            status = TerminationStatus.MAX_ITERATIONS
        else:
            marked = mark_maximum(field, config.mark_factor)
            refined = bisect(mesh, marked)
            if float(refined.areas.min()) < config.min_triangle_area:
                # The mesh that first undercuts the area floor is still
                # solved and recorded; the history ends with it.
                guard_tripped = True

        yield AdaptiveState(
            iteration=iteration,
            mesh=mesh,
            solution=u,
            indicators=field,
            record=record,
            marked=marked,
            status=status,
        )
        if status is not None:
            return
        mesh = refined
        iteration += 1


def adapt(problem: ProblemSpec, config: AdaptiveConfig) -> AdaptiveResult:
    """Run the loop to termination and collect the convergence history."""
    records = []
    last = None
    for state in adapt_steps(problem, config):
        records.append(state.record)
        last = state
    return AdaptiveResult(
        records=records, solution=last.solution, mesh=last.mesh, status=last.status
    )
