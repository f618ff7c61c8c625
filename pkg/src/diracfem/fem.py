"""Lagrange finite elements (degree 1 and 2) for the point-source Poisson
problem.

The weak problem seeks the piecewise polynomial U, vanishing on the boundary
(or matching prescribed boundary values), with

    integral grad(U) . grad(V) = sum_j alpha_j V(x_j)   for all test V.

Assembly produces the full stiffness matrix over all Lagrange nodes plus the
symmetric positive definite interior block; point loads evaluate the global
basis at the source locations; non-homogeneous boundary values are lifted
onto the right-hand side.  The solver is diagonally preconditioned conjugate
gradients driven to a relative residual tolerance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, TYPE_CHECKING

import numpy as np
from scipy import sparse

from .geometry import PolygonalDomain, Triangulation, as_point, locate

if TYPE_CHECKING:
    from .verification import ExactSolution

logger = logging.getLogger(__name__)

__all__ = [
    "FEMError",
    "SolverError",
    "PointSource",
    "ProblemSpec",
    "DiscreteSolution",
    "SparseSystem",
    "lagrange_nodes",
    "element_dofs",
    "num_dofs",
    "assemble_stiffness",
    "assemble_point_load",
    "attach_load",
    "apply_boundary_data",
    "solve",
    "solve_problem",
    "evaluate",
    "gradient",
]


class FEMError(Exception):
    """Invalid finite element input."""


class SolverError(Exception):
    """Linear solver failure; carries the final relative residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass
class PointSource:
    """A weighted point source alpha * delta_x."""

    location: np.ndarray
    weight: float

    def __post_init__(self):
        self.location = as_point(self.location)
        self.weight = float(self.weight)
        if self.weight == 0.0:
            raise FEMError("point source weight must be nonzero")


@dataclass
class ProblemSpec:
    """Problem data: domain, point sources, fractional exponent, degree.

    ``theta`` must lie in (0, 1/2]; theta = 1/2 is accepted with a warning
    and theta = 0 only with ``allow_experimental_theta`` (also warned), since
    both sit at the edge of what the estimator is designed for.
    ``boundary_data`` is an optional callable giving Dirichlet values for
    manufactured solutions; the plain problem uses zero.
    """

    domain: PolygonalDomain
    sources: list[PointSource] = field(default_factory=list)
    theta: float = 0.25
    degree: int = 1
    boundary_data: Callable | None = None
    exact: "ExactSolution | None" = None
    allow_experimental_theta: bool = False
    mesh_path: str | None = None

    def __post_init__(self):
        if self.degree not in (1, 2):
            raise FEMError(f"unsupported polynomial degree {self.degree}")
        self.theta = float(self.theta)
        if self.theta == 0.5:
            logger.warning("theta = 0.5 sits at the boundary of the admissible range")
        elif self.theta == 0.0 and self.allow_experimental_theta:
            logger.warning("theta = 0 is experimental; indicators lose their scaling")
        elif not 0.0 < self.theta <= 0.5:
            raise FEMError(
                f"theta = {self.theta} outside (0, 0.5]"
                + ("" if self.allow_experimental_theta else
                   " (set allow_experimental_theta for theta = 0)")
            )
        for s in self.sources:
            if not self.domain.contains(s.location, strict=True):
                raise FEMError(
                    f"source at ({s.location[0]:g}, {s.location[1]:g}) "
                    "is not strictly inside the domain"
                )


@dataclass
class DiscreteSolution:
    """Coefficients of a finite element function on one mesh snapshot.

    The coefficient vector is indexed by the global Lagrange nodes, boundary
    nodes included (they hold the prescribed boundary values).
    """

    mesh: Triangulation
    degree: int
    coefficients: np.ndarray

    def __post_init__(self):
        expected = lagrange_nodes(self.mesh, self.degree)[0].shape[0]
        if self.coefficients.shape != (expected,):
            raise FEMError(
                f"coefficient vector has length {len(self.coefficients)}, "
                f"expected {expected}"
            )


@dataclass
class SparseSystem:
    """Reduced SPD system together with the full pre-elimination matrix."""

    matrix: sparse.csr_matrix
    rhs: np.ndarray
    full_matrix: sparse.csr_matrix
    interior: np.ndarray
    boundary: np.ndarray
    boundary_values: np.ndarray
    degree: int


# Quadrature: edge midpoint rule, exact for quadratics.
_MIDPOINT_BARY = np.array([[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]])

# Symmetric 6-point rule, exact for quartics (weights sum to 1).
QUAD_DEG4_BARY = np.array(
    [
        [0.108103018168070, 0.445948490915965, 0.445948490915965],
        [0.445948490915965, 0.108103018168070, 0.445948490915965],
        [0.445948490915965, 0.445948490915965, 0.108103018168070],
        [0.816847572980459, 0.091576213509771, 0.091576213509771],
        [0.091576213509771, 0.816847572980459, 0.091576213509771],
        [0.091576213509771, 0.091576213509771, 0.816847572980459],
    ]
)
QUAD_DEG4_WEIGHTS = np.array(
    [
        0.223381589678011,
        0.223381589678011,
        0.223381589678011,
        0.109951743655322,
        0.109951743655322,
        0.109951743655322,
    ]
)


def lagrange_nodes(mesh: Triangulation, degree: int):
    """Global Lagrange node coordinates and their boundary flags.

    Degree 1 uses the mesh vertices; degree 2 appends one node per edge at
    its midpoint.  Returns ``(coords, is_boundary)``.
    """
    if degree == 1:
        return mesh.vertices, mesh.vertex_is_boundary
    if degree == 2:
        edges = mesh.edges
        mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
        coords = np.vstack([mesh.vertices, mids])
        flags = np.concatenate([mesh.vertex_is_boundary, mesh.edge_is_boundary])
        return coords, flags
    raise FEMError(f"unsupported polynomial degree {degree}")


def element_dofs(mesh: Triangulation, degree: int) -> np.ndarray:
    """(NT, 3) or (NT, 6) global node indices per element.

    For degree 2 the local node 3 + k is the midpoint of the edge opposite
    local vertex k.
    """
    if degree == 1:
        return mesh.triangles
    if degree == 2:
        return np.hstack([mesh.triangles, mesh.num_vertices + mesh.tri_edges])
    raise FEMError(f"unsupported polynomial degree {degree}")


def num_dofs(mesh: Triangulation, degree: int) -> int:
    """Dimension of the finite element space (interior Lagrange nodes)."""
    return int((~lagrange_nodes(mesh, degree)[1]).sum())


def barycentric_gradients(mesh: Triangulation) -> np.ndarray:
    """(NT, 3, 2) gradients of the barycentric coordinate functions."""
    c = mesh.corners
    grads = np.empty((mesh.num_triangles, 3, 2))
    inv2a = 1.0 / (2.0 * mesh.signed_areas)
    for k in range(3):
        d = c[:, (k + 2) % 3] - c[:, (k + 1) % 3]
        grads[:, k, 0] = -d[:, 1] * inv2a
        grads[:, k, 1] = d[:, 0] * inv2a
    return grads


def shape_values(degree: int, bary: np.ndarray) -> np.ndarray:
    """Shape function values at barycentric points, shape (npts, ndof_local)."""
    bary = np.atleast_2d(bary)
    if degree == 1:
        return bary.copy()
    if degree == 2:
        lam = bary
        vals = np.empty((lam.shape[0], 6))
        for k in range(3):
            vals[:, k] = lam[:, k] * (2.0 * lam[:, k] - 1.0)
            vals[:, 3 + k] = 4.0 * lam[:, (k + 1) % 3] * lam[:, (k + 2) % 3]
        return vals
    raise FEMError(f"unsupported polynomial degree {degree}")


def shape_gradients(degree: int, bary: np.ndarray, grad_lambda: np.ndarray) -> np.ndarray:
    """Shape function gradients at barycentric points.

    Parameters
    ----------
    bary : (npts, 3)
    grad_lambda : (NT, 3, 2)

    Returns
    -------
    (NT, npts, ndof_local, 2) array.
    """
    bary = np.atleast_2d(bary)
    nt = grad_lambda.shape[0]
    npts = bary.shape[0]
    if degree == 1:
        out = np.broadcast_to(grad_lambda[:, None, :, :], (nt, npts, 3, 2))
        return np.ascontiguousarray(out)
    if degree == 2:
        out = np.empty((nt, npts, 6, 2))
        for k in range(3):
            out[:, :, k, :] = (
                (4.0 * bary[None, :, k, None] - 1.0) * grad_lambda[:, None, k, :]
            )
            k1, k2 = (k + 1) % 3, (k + 2) % 3
            out[:, :, 3 + k, :] = 4.0 * (
                bary[None, :, k1, None] * grad_lambda[:, None, k2, :]
                + bary[None, :, k2, None] * grad_lambda[:, None, k1, :]
            )
        return out
    raise FEMError(f"unsupported polynomial degree {degree}")


def _element_stiffness(mesh: Triangulation, degree: int) -> np.ndarray:
    if degree == 1:
        c = mesh.corners
        d = np.stack([c[:, (k + 2) % 3] - c[:, (k + 1) % 3] for k in range(3)], axis=1)
        scale = 1.0 / (4.0 * mesh.areas)
        return np.einsum("tid,tjd->tij", d, d) * scale[:, None, None]
    grad_lambda = barycentric_gradients(mesh)
    grads = shape_gradients(degree, _MIDPOINT_BARY, grad_lambda)
    w = mesh.areas / 3.0
    return np.einsum("tqid,tqjd,t->tij", grads, grads, w)


def assemble_stiffness(mesh: Triangulation, degree: int = 1) -> SparseSystem:
    """Assemble the stiffness matrix for the Dirichlet Laplacian.

    Element integrals are exact: closed form for degree 1, the edge-midpoint
    rule (exact for quadratics) for degree 2.  Returns the system with the
    full matrix over all nodes, the interior SPD block, and a zero
    right-hand side.
    """
    dofs = element_dofs(mesh, degree)
    nd = dofs.shape[1]
    ke = _element_stiffness(mesh, degree)
    rows = np.repeat(dofs, nd, axis=1).ravel()
    cols = np.tile(dofs, (1, nd)).ravel()
    n_nodes = lagrange_nodes(mesh, degree)[0].shape[0]
    full = sparse.coo_matrix(
        (ke.ravel(), (rows, cols)), shape=(n_nodes, n_nodes)
    ).tocsr()
    is_boundary = lagrange_nodes(mesh, degree)[1]
    interior = np.flatnonzero(~is_boundary)
    boundary = np.flatnonzero(is_boundary)
    reduced = full[interior][:, interior].tocsr()
    return SparseSystem(
        matrix=reduced,
        rhs=np.zeros(len(interior)),
        full_matrix=full,
        interior=interior,
        boundary=boundary,
        boundary_values=np.zeros(len(boundary)),
        degree=degree,
    )


def assemble_point_load(mesh: Triangulation, sources, degree: int = 1) -> np.ndarray:
    """Load vector of the point sources over all Lagrange nodes.

    Entry i is ``sum_j alpha_j phi_i(x_j)``; each source contributes only to
    the nodes of its containing triangle.
    """
    n_nodes = lagrange_nodes(mesh, degree)[0].shape[0]
    load = np.zeros(n_nodes)
    dofs = element_dofs(mesh, degree)
    for s in sources:
        if mesh.domain is not None and not mesh.domain.contains(s.location):
            raise FEMError(
                f"source at ({s.location[0]:g}, {s.location[1]:g}) "
                "is outside the domain"
            )
        t, lam = locate(mesh, s.location)
        load[dofs[t]] += s.weight * shape_values(degree, lam)[0]
    return load


def attach_load(system: SparseSystem, load: np.ndarray) -> SparseSystem:
    """Restrict a full-length load vector onto the interior unknowns."""
    return replace(system, rhs=load[system.interior].copy())


def apply_boundary_data(
    system: SparseSystem, mesh: Triangulation, boundary_data
) -> SparseSystem:
    """Impose Dirichlet boundary values by nodal interpolation and lifting.

    ``boundary_data`` is a callable mapping a point (2,) to a value, or a
    constant; None or 0 keeps the homogeneous system untouched.  The
    boundary contribution A_ib * g moves to the right-hand side.
    """
    if boundary_data is None:
        return system
    coords = lagrange_nodes(mesh, system.degree)[0]
    if callable(boundary_data):
        values = np.empty(len(system.boundary))
        for i, node in enumerate(system.boundary):
            try:
                values[i] = float(boundary_data(coords[node]))
            except Exception as exc:
                raise FEMError(
                    f"boundary data undefined at node ({coords[node][0]:g}, "
                    f"{coords[node][1]:g}): {exc}"
                ) from exc
        if not np.all(np.isfinite(values)):
            bad = system.boundary[~np.isfinite(values)][0]
            raise FEMError(
                f"boundary data not finite at node ({coords[bad][0]:g}, "
                f"{coords[bad][1]:g})"
            )
    else:
        values = np.full(len(system.boundary), float(boundary_data))
    if not np.any(values):
        return replace(system, boundary_values=values)
    lift = system.full_matrix[system.interior][:, system.boundary] @ values
    return replace(system, rhs=system.rhs - lift, boundary_values=values)


def solve(system: SparseSystem, tol: float = 1e-10) -> np.ndarray:
    """Solve the interior system by Jacobi-preconditioned conjugate gradients.

    Iterates until the true relative residual drops below ``tol``; the
    deterministic iteration cap is 50 times the number of unknowns.  Raises
    SolverError (with the final residual) if the cap is hit.
    """
    a = system.matrix
    b = system.rhs
    n = len(b)
    if n == 0:
        return np.zeros(0)
    norm_b = float(np.linalg.norm(b))
    if norm_b == 0.0:
        return np.zeros(n)
    inv_diag = 1.0 / a.diagonal()
    x = np.zeros(n)
    r = b.copy()
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    cap = 50 * n
    for _ in range(cap):
        res = float(np.linalg.norm(r))
        if res <= tol * norm_b:
            true_res = float(np.linalg.norm(b - a @ x))
            if true_res <= tol * norm_b:
                return x
            r = b - a @ x
            z = inv_diag * r
            p = z.copy()
            rz = float(r @ z)
            continue
        ap = a @ p
        alpha = rz / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = float(np.linalg.norm(b - a @ x)) / norm_b
    raise SolverError(
        f"conjugate gradients did not reach tol={tol:g} within {cap} iterations",
        residual=res,
    )


def solve_problem(
    problem: ProblemSpec, mesh: Triangulation, tol: float = 1e-10
) -> DiscreteSolution:
    """Assemble and solve the Galerkin problem on one mesh."""
    system = assemble_stiffness(mesh, problem.degree)
    load = assemble_point_load(mesh, problem.sources, problem.degree)
    system = attach_load(system, load)
    system = apply_boundary_data(system, mesh, problem.boundary_data)
    x = solve(system, tol=tol)
    coeffs = np.zeros(system.full_matrix.shape[0])
    coeffs[system.interior] = x
    coeffs[system.boundary] = system.boundary_values
    return DiscreteSolution(mesh=mesh, degree=problem.degree, coefficients=coeffs)


def evaluate(u: DiscreteSolution, p) -> float:
    """Evaluate the finite element function at a point of the domain."""
    t, lam = locate(u.mesh, p)
    dofs = element_dofs(u.mesh, u.degree)[t]
    return float(shape_values(u.degree, lam)[0] @ u.coefficients[dofs])


def evaluate_on_elements(
    u: DiscreteSolution, tri_indices: np.ndarray, bary: np.ndarray
) -> np.ndarray:
    """Values at the same barycentric points on many elements.

    Returns an array of shape (len(tri_indices), npts).
    """
    dofs = element_dofs(u.mesh, u.degree)[tri_indices]
    vals = shape_values(u.degree, bary)
    return u.coefficients[dofs] @ vals.T


def gradient(u: DiscreteSolution, t: int, bary=None) -> np.ndarray:
    """Gradient of the finite element function on element t.

    Constant for degree 1 (``bary`` is ignored); affine for degree 2 and
    evaluated at the given barycentric point, by default the centroid.
    """
    if u.degree == 1:
        coeffs = u.coefficients[u.mesh.triangles[t]]
        grads = barycentric_gradients(u.mesh)[t]
        return coeffs @ grads
    if bary is None:
        bary = np.array([1 / 3, 1 / 3, 1 / 3])
    bary = np.atleast_2d(np.asarray(bary, dtype=float))
    grad_lambda = barycentric_gradients(u.mesh)[t : t + 1]
    grads = shape_gradients(u.degree, bary, grad_lambda)[0]
    dofs = element_dofs(u.mesh, u.degree)[t]
    out = np.einsum("qid,i->qd", grads, u.coefficients[dofs])
    return out[0] if out.shape[0] == 1 else out


def gradients_at_points(
    u: DiscreteSolution,
    tri_indices: np.ndarray,
    bary: np.ndarray,
    grad_lambda: np.ndarray | None = None,
) -> np.ndarray:
    """Gradient at one barycentric point per listed element, shape (M, 2)."""
    if grad_lambda is None:
        grad_lambda = barycentric_gradients(u.mesh)
    gl = grad_lambda[tri_indices]
    cv = u.coefficients[u.mesh.triangles[tri_indices]]
    if u.degree == 1:
        return np.einsum("mk,mkd->md", cv, gl)
    lam = np.asarray(bary, dtype=float)
    ce = u.coefficients[u.mesh.num_vertices + u.mesh.tri_edges[tri_indices]]
    out = np.einsum("mk,mkd->md", (4.0 * lam - 1.0) * cv, gl)
    for k in range(3):
        k1, k2 = (k + 1) % 3, (k + 2) % 3
        out += (
            4.0
            * ce[:, k, None]
            * (lam[:, k1, None] * gl[:, k2] + lam[:, k2, None] * gl[:, k1])
        )
    return out


def gradients_at(
    u: DiscreteSolution, bary: np.ndarray, grad_lambda: np.ndarray | None = None
) -> np.ndarray:
    """Gradients on all elements at common barycentric points.

    Returns (NT, npts, 2); pass a precomputed ``grad_lambda`` to amortize.
    """
    if grad_lambda is None:
        grad_lambda = barycentric_gradients(u.mesh)
    grads = shape_gradients(u.degree, np.atleast_2d(bary), grad_lambda)
    dofs = element_dofs(u.mesh, u.degree)
    return np.einsum("tqid,ti->tqd", grads, u.coefficients[dofs])
