"""Point-source oscillation indicators.

The oscillation is indexed by mesh vertices and measures how the point
sources sit relative to the Lagrange nodes and the boundary, and whether
sources of opposite sign share a star.  Writing Nhat for the union of the
interior Lagrange nodes with the domain boundary, a boundary vertex z
accumulates

    xi(z) = sum_j dist(x_j, Nhat)^theta |alpha_j| hat_z(x_j),

while an interior vertex takes the smaller of the two signed sums

    xi(z) = min( sum_{j in A+} sigma+_j |alpha_j| hat_z(x_j),
                 sum_{j in A-} sigma-_j |alpha_j| hat_z(x_j) ),

where A+/A- collect the in-star sources of either sign that are not located
at nodes, sigma couples each source to the closest opposite-sign companion
or node, and hat_z is the piecewise affine hat function of z (also for
degree 2).  Empty sums are zero, so the oscillation vanishes once every
interior star sees only one sign and no boundary star holds an off-node
source; refinement always reaches that state after finitely many steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import lagrange_nodes
from .geometry import Triangulation, as_point, locate

__all__ = [
    "SignedSourceSets",
    "OscillationField",
    "dist_to_nodes",
    "classify_sources",
    "sigma",
    "xi_vertex",
    "xi_global",
    "xi_alt_bound",
    "dump_oscillation",
]

# Closed-star membership tolerance for barycentric coordinates.
STAR_BARY_TOL = 1e-14
# Sources within this distance of a node count as sitting on it.
NODE_MATCH_TOL = 1e-14


@dataclass
class SignedSourceSets:
    """In-star source indices that are off the nodes, split by sign."""

    vertex: int
    a_plus: list[int]
    a_minus: list[int]


@dataclass
class OscillationField:
    """Per-vertex oscillation values and their square-root sum."""

    per_vertex_xi: np.ndarray
    global_xi: float


def _interior_node_coords(mesh: Triangulation, degree: int) -> np.ndarray:
    coords, is_boundary = lagrange_nodes(mesh, degree)
    return coords[~is_boundary]


def _boundary_distance(mesh: Triangulation, p: np.ndarray) -> float:
    edges = mesh.edges[mesh.edge_is_boundary]
    a = mesh.vertices[edges[:, 0]]
    b = mesh.vertices[edges[:, 1]]
    d = b - a
    denom = np.einsum("ed,ed->e", d, d)
    t = np.clip(np.einsum("ed,ed->e", p - a, d) / denom, 0.0, 1.0)
    closest = a + t[:, None] * d
    return float(np.min(np.hypot(*(p - closest).T)))


def dist_to_nodes(p, mesh: Triangulation, degree: int = 1) -> float:
    """Distance from p to the interior Lagrange nodes or the boundary,
    whichever is closer."""
    p = as_point(p)
    best = _boundary_distance(mesh, p)
    nodes = _interior_node_coords(mesh, degree)
    if len(nodes):
        best = min(best, float(np.min(np.hypot(*(nodes - p).T))))
    return best


def _containing_triangles(mesh: Triangulation, p: np.ndarray) -> np.ndarray:
    """All triangles whose closed hull contains p, within tolerance.

    Always nonempty for points of the domain: the best point-location
    candidate is included even when rounding pushes every barycentric
    coordinate slightly negative.
    """
    lam = mesh.barycentric(p)
    hits = np.flatnonzero(lam.min(axis=1) >= -STAR_BARY_TOL)
    if hits.size == 0:
        hits = np.array([locate(mesh, p)[0]])
    return hits


class _SourceGeometry:
    """Per-source quantities shared by the vertex loop."""

    def __init__(self, mesh: Triangulation, sources, degree: int):
        self.mesh = mesh
        self.degree = degree
        self.locations = [as_point(s.location) for s in sources]
        self.weights = [float(s.weight) for s in sources]
        self.containing = [_containing_triangles(mesh, p) for p in self.locations]
        self.dist = [dist_to_nodes(p, mesh, degree) for p in self.locations]
        nodes = _interior_node_coords(mesh, degree)
        self.at_node = [
            len(nodes) > 0 and float(np.min(np.hypot(*(nodes - p).T))) <= NODE_MATCH_TOL
            for p in self.locations
        ]

    def in_star(self, j: int, z: int) -> bool:
        return any(z in self.mesh.triangles[t] for t in self.containing[j])

    def hat_value(self, j: int, z: int) -> float:
        """Piecewise affine hat of vertex z at source j (0 outside its star)."""
        for t in self.containing[j]:
            tri = self.mesh.triangles[t]
            if z in tri:
                lam = self.mesh.barycentric(self.locations[j], [t])[0]
                local = int(np.flatnonzero(tri == z)[0])
                return float(min(1.0, max(0.0, lam[local])))
        return 0.0


def classify_sources(mesh: Triangulation, sources, z: int, degree: int = 1) -> SignedSourceSets:
    """Split the in-star, off-node sources around vertex z by sign."""
    geo = _SourceGeometry(mesh, sources, degree)
    return _classify(geo, z)


def _classify(geo: _SourceGeometry, z: int) -> SignedSourceSets:
    a_plus, a_minus = [], []
    for j, w in enumerate(geo.weights):
        if geo.at_node[j] or not geo.in_star(j, z):
            continue
        (a_plus if w > 0 else a_minus).append(j)
    return SignedSourceSets(vertex=int(z), a_plus=a_plus, a_minus=a_minus)


def _sigma(geo: _SourceGeometry, sets: SignedSourceSets, j: int, sign: int, theta: float) -> float:
    opposite = sets.a_minus if sign > 0 else sets.a_plus
    if not opposite:
        return 0.0
    d_j = geo.dist[j] ** theta
    d_opp = max(geo.dist[i] ** theta for i in opposite)
    gap = max(
        float(np.hypot(*(geo.locations[j] - geo.locations[i]))) ** theta
        for i in opposite
    )
    return min(d_j + d_opp, gap)


def sigma(mesh: Triangulation, sources, z: int, j: int, sign: int, theta: float,
          degree: int = 1) -> float:
    """Coupling weight of source j at vertex z for the given sign branch.

    Zero whenever no opposite-sign source shares the star.
    """
    geo = _SourceGeometry(mesh, sources, degree)
    return _sigma(geo, _classify(geo, z), j, sign, theta)


def _xi_vertex(geo: _SourceGeometry, z: int, theta: float) -> float:
    mesh = geo.mesh
    if mesh.vertex_is_boundary[z]:
        total = 0.0
        for j in range(len(geo.weights)):
            lam = geo.hat_value(j, z)
            if lam > 0.0:
                total += geo.dist[j] ** theta * abs(geo.weights[j]) * lam
        return total
    sets = _classify(geo, z)
    plus = sum(
        _sigma(geo, sets, j, +1, theta) * abs(geo.weights[j]) * geo.hat_value(j, z)
        for j in sets.a_plus
    )
    minus = sum(
        _sigma(geo, sets, j, -1, theta) * abs(geo.weights[j]) * geo.hat_value(j, z)
        for j in sets.a_minus
    )
    return min(plus, minus)


def xi_vertex(mesh: Triangulation, sources, z: int, theta: float, degree: int = 1) -> float:
    """Oscillation indicator of a single vertex."""
    geo = _SourceGeometry(mesh, sources, degree)
    return _xi_vertex(geo, z, theta)


def xi_global(mesh: Triangulation, sources, theta: float, degree: int = 1) -> OscillationField:
    """Oscillation values for all vertices and the global square-root sum.

    Only vertices whose star touches a source can contribute, so the vertex
    loop is restricted to the triangles containing the sources.
    """
    per_vertex = np.zeros(mesh.num_vertices)
    if sources:
        geo = _SourceGeometry(mesh, sources, degree)
        candidates = np.unique(
            np.concatenate(
                [mesh.triangles[tris].ravel() for tris in geo.containing]
            )
        )
        for z in candidates:
            per_vertex[z] = _xi_vertex(geo, int(z), theta)
    return OscillationField(
        per_vertex_xi=per_vertex, global_xi=float(np.sqrt(np.sum(per_vertex**2)))
    )


def xi_alt_bound(mesh: Triangulation, sources, theta: float, degree: int = 1) -> float:
    """Triangle-indexed upper bound for the oscillation.

    Sums h_T^theta times the absolute source weights over the vertex patch
    of T, for the triangles that either touch the boundary or see sources of
    both signs in their patch.  Coarser than the vertex-indexed value when
    sources sit much closer together than the local meshsize.
    """
    if not sources:
        return 0.0
    geo = _SourceGeometry(mesh, sources, degree)
    containing = np.unique(np.concatenate([c for c in geo.containing]))
    candidates = np.unique(
        np.concatenate(
            [
                np.concatenate([mesh.vertex_triangles(int(v)) for v in mesh.triangles[t]])
                for t in containing
            ]
        )
    )
    h = mesh.meshsize
    total = 0.0
    for t in candidates:
        patch_tris = np.unique(
            np.concatenate([mesh.vertex_triangles(int(v)) for v in mesh.triangles[t]])
        )
        patch_set = set(map(int, patch_tris))
        in_patch = [
            j
            for j in range(len(geo.weights))
            if any(int(tc) in patch_set for tc in geo.containing[j])
        ]
        if not in_patch:
            continue
        touches_boundary = bool(np.any(mesh.vertex_is_boundary[mesh.triangles[t]]))
        signs = {np.sign(geo.weights[j]) for j in in_patch}
        upsilon = 1.0 if touches_boundary or len(signs) > 1 else 0.0
        if upsilon:
            total += h[t] ** theta * sum(abs(geo.weights[j]) for j in in_patch)
    return total


def dump_oscillation(field: OscillationField, fh) -> None:
    """Write 'z_index xi_sq' lines, one per vertex."""
    for z, val in enumerate(field.per_vertex_xi):
        fh.write(f"{z} {val * val:.17g}\n")
