"""Fractional-order residual error indicators.

Per triangle the squared indicator combines the element residual and the
normal-flux jumps of the discrete solution,

    eta_T^2 = h_T^(2+2*theta) * ||lap U||_{L2(T)}^2
            + h_T^(1+2*theta) * ||jump(grad U)||_{L2(dT)}^2,

with the local meshsize h_T = |T|^(1/2).  The boundary term sums the full
squared jump norm over the three edges of T (boundary edges contribute
zero), so every interior edge is counted by both of its triangles.  The
indicators depend only on the discrete solution and the meshsize, never on
the point sources.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import DiscreteSolution, barycentric_gradients, gradients_at_points

__all__ = [
    "IndicatorField",
    "edge_jump",
    "element_residual",
    "indicator",
    "estimate",
    "dump_indicators",
]

# 2-point Gauss positions on [0, 1]; exact for cubic edge integrands.
_GAUSS2 = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


@dataclass
class IndicatorField:
    """Per-triangle squared indicators plus the vertex oscillation slots.

    ``per_vertex_xi_sq`` and ``global_xi`` stay None until the oscillation
    pass fills them in.
    """

    theta: float
    per_triangle_eta_sq: np.ndarray
    global_eta: float
    per_vertex_xi_sq: np.ndarray | None = None
    global_xi: float | None = None


def edge_jump_norms_sq(u: DiscreteSolution) -> np.ndarray:
    """Squared L2 norm of the normal-derivative jump per edge.

    Boundary edges get zero.  For degree 1 the jump is constant along the
    edge, for degree 2 affine and integrated by 2-point Gauss quadrature.
    """
    mesh = u.mesh
    edges = mesh.edges
    lengths = mesh.edge_lengths
    interior = np.flatnonzero(~mesh.edge_is_boundary)
    out = np.zeros(len(edges))
    if interior.size == 0:
        return out
    t1 = mesh.edge_tris[interior, 0]
    t2 = mesh.edge_tris[interior, 1]
    vec = mesh.vertices[edges[interior, 1]] - mesh.vertices[edges[interior, 0]]
    normal = np.column_stack([-vec[:, 1], vec[:, 0]]) / lengths[interior, None]

    grad_lambda = barycentric_gradients(mesh)
    if u.degree == 1:
        g1 = gradients_at_points(u, t1, None, grad_lambda)
        g2 = gradients_at_points(u, t2, None, grad_lambda)
        jump = np.einsum("md,md->m", g1 - g2, normal)
        out[interior] = jump**2 * lengths[interior]
        return out

    acc = np.zeros(len(interior))
    for s in _GAUSS2:
        point = mesh.vertices[edges[interior, 0]] + s * vec
        jump = np.zeros(len(interior))
        for sign, tri in ((1.0, t1), (-1.0, t2)):
            lam = _edge_point_bary(mesh, tri, edges[interior], s)
            g = gradients_at_points(u, tri, lam, grad_lambda)
            jump += sign * np.einsum("md,md->m", g, normal)
        acc += 0.5 * jump**2
    out[interior] = acc * lengths[interior]
    return out


def _edge_point_bary(mesh, tri_indices, edge_pairs, s: float) -> np.ndarray:
    """Barycentric coordinates, within each listed triangle, of the point at
    parameter s along the given edge."""
    tris = mesh.triangles[tri_indices]
    lam = np.zeros((len(tri_indices), 3))
    loc_a = np.argmax(tris == edge_pairs[:, 0, None], axis=1)
    loc_b = np.argmax(tris == edge_pairs[:, 1, None], axis=1)
    lam[np.arange(len(lam)), loc_a] = 1.0 - s
    lam[np.arange(len(lam)), loc_b] = s
    return lam


def element_residual_norms_sq(u: DiscreteSolution) -> np.ndarray:
    """Squared L2 norm of the discrete Laplacian per element.

    Zero for degree 1; for degree 2 the Laplacian is constant per element,
    so the norm is |lap U| * h_T.
    """
    mesh = u.mesh
    if u.degree == 1:
        return np.zeros(mesh.num_triangles)
    gl = barycentric_gradients(mesh)
    cv = u.coefficients[mesh.triangles]
    ce = u.coefficients[mesh.num_vertices + mesh.tri_edges]
    lap = np.zeros(mesh.num_triangles)
    for k in range(3):
        k1, k2 = (k + 1) % 3, (k + 2) % 3
        lap += 4.0 * cv[:, k] * np.einsum("td,td->t", gl[:, k], gl[:, k])
        lap += 8.0 * ce[:, k] * np.einsum("td,td->t", gl[:, k1], gl[:, k2])
    return lap**2 * mesh.areas


def edge_jump(u: DiscreteSolution, edge_index: int) -> float:
    """L2 norm of the normal-derivative jump across one edge."""
    return float(np.sqrt(edge_jump_norms_sq(u)[edge_index]))


def element_residual(u: DiscreteSolution, t: int) -> float:
    """L2 norm of the discrete Laplacian on one element."""
    return float(np.sqrt(element_residual_norms_sq(u)[t]))


def indicators_sq(u: DiscreteSolution, theta: float) -> np.ndarray:
    """Squared indicators for all triangles."""
    mesh = u.mesh
    h = mesh.meshsize
    jumps = edge_jump_norms_sq(u)
    boundary_sq = jumps[mesh.tri_edges].sum(axis=1)
    return (
        h ** (2.0 + 2.0 * theta) * element_residual_norms_sq(u)
        + h ** (1.0 + 2.0 * theta) * boundary_sq
    )


def indicator(u: DiscreteSolution, t: int, theta: float) -> float:
    """The indicator eta_{T,theta} of one triangle."""
    return float(np.sqrt(indicators_sq(u, theta)[t]))


def estimate(u: DiscreteSolution, theta: float) -> IndicatorField:
    """All per-triangle indicators and the global square-root sum."""
    eta_sq = indicators_sq(u, theta)
    return IndicatorField(
        theta=float(theta),
        per_triangle_eta_sq=eta_sq,
        global_eta=float(np.sqrt(eta_sq.sum())),
    )


def dump_indicators(field: IndicatorField, fh) -> None:
    """Write 'T_index eta_sq' lines, one per triangle."""
    for t, val in enumerate(field.per_triangle_eta_sq):
        fh.write(f"{t} {val:.17g}\n")
