"""Adaptive finite elements for the 2D Poisson problem with point sources.

The package solves -lap(u) = sum_j alpha_j delta_{x_j} with continuous
piecewise polynomials, estimates the error in fractional-order norms by
residual indicators with a point-source oscillation term, and drives a
solve / estimate / mark / refine loop that reproduces optimal convergence
rates on the standard square and L-shape benchmarks.
"""

from .adaptive import (
    AdaptiveConfig,
    AdaptiveResult,
    AdaptiveState,
    ConvergenceRecord,
    TerminationStatus,
    adapt,
    adapt_steps,
    mark_maximum,
)
from .estimator import (
    IndicatorField,
    edge_jump,
    element_residual,
    estimate,
    indicator,
)
from .fem import (
    DiscreteSolution,
    FEMError,
    PointSource,
    ProblemSpec,
    SolverError,
    SparseSystem,
    apply_boundary_data,
    assemble_point_load,
    assemble_stiffness,
    evaluate,
    gradient,
    num_dofs,
    solve,
    solve_problem,
)
from .geometry import (
    MeshError,
    Point2,
    PolygonalDomain,
    Star,
    Triangulation,
    bisect,
    initial_mesh,
    locate,
    mesh_metrics,
    patch,
    read_mesh,
    star,
    triangulation_from_arrays,
    validate_mesh,
    write_mesh,
)
from .oscillation import (
    OscillationField,
    SignedSourceSets,
    classify_sources,
    dist_to_nodes,
    sigma,
    xi_alt_bound,
    xi_global,
    xi_vertex,
)
from .verification import (
    ExactSolution,
    SlopeFit,
    fit_slope,
    fractional_seminorm,
    fundamental_exact,
    fundamental_problem,
    fundamental_solution,
    h1_error_off_singularity,
    l2_error,
    lshape_problem,
)

__version__ = "0.1.0"
