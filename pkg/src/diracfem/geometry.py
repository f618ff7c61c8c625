"""Conforming triangulations of polygonal domains with newest-vertex bisection.

The mesh data layout is array based: vertex coordinates in an ``(NV, 2)``
float array, triangles as ``(NT, 3)`` index triples in counterclockwise
order.  Each triangle carries a *refinement edge*, stored as the local index
of the vertex opposite to it (local edge ``k`` connects the local vertices
``k+1`` and ``k+2`` mod 3).  Refinement replaces a triangle by two children
across the midpoint of its refinement edge; a marked triangle is bisected
twice so that all three of its edges are halved, and the conformity closure
bisects further triangles until no hanging node remains.

A :class:`Triangulation` is an immutable snapshot: :func:`bisect` returns a
new one and all derived quantities (edges, areas, adjacency) are cached
lazily on first use.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "MeshError",
    "Point2",
    "PolygonalDomain",
    "Triangulation",
    "Star",
    "initial_mesh",
    "triangulation_from_arrays",
    "bisect",
    "star",
    "patch",
    "locate",
    "mesh_metrics",
    "write_mesh",
    "read_mesh",
    "validate_mesh",
]

# Vertices within this distance are merged on file import.
VERTEX_DEDUP_TOL = 1e-12


class MeshError(Exception):
    """Invalid mesh topology or geometry."""


class Point2(NamedTuple):
    """A point in the plane with finite coordinates."""

    x: float
    y: float


def as_point(p) -> np.ndarray:
    """Coerce a point-like object to a finite float array of shape (2,)."""
    a = np.asarray(p, dtype=float).reshape(2)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"point has non-finite coordinates: {p!r}")
    return a


def _polygon_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_properly_intersect(p1, p2, q1, q2) -> bool:
    """True if the open segments p1-p2 and q1-q2 cross."""

    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and all(
        d != 0 for d in (d1, d2, d3, d4)
    )


def _point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    d = b - a
    denom = float(d @ d)
    if denom == 0.0:
        return float(np.hypot(*(p - a)))
    t = min(1.0, max(0.0, float((p - a) @ d) / denom))
    return float(np.hypot(*(p - (a + t * d))))


@dataclass
class PolygonalDomain:
    """Simple closed polygon with counterclockwise vertex order.

    Parameters
    ----------
    vertices : (N, 2) array
        Corner coordinates in counterclockwise order, no repetitions.
    builtin : str, optional
        Tag of a built-in domain ("square" or "lshape").
    """

    vertices: np.ndarray
    builtin: str | None = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ValueError("polygon needs at least 3 points of shape (N, 2)")
        if not np.all(np.isfinite(v)):
            raise ValueError("polygon has non-finite coordinates")
        self.vertices = v
        n = len(v)
        for i in range(n):
            for j in range(i + 1, n):
                if np.all(v[i] == v[j]):
                    raise ValueError(f"polygon repeats vertex {v[i]} (positions {i} and {j})")
        area = _polygon_area(v)
        if area == 0.0:
            raise ValueError("polygon has zero area")
        if area < 0.0:
            raise ValueError("polygon vertices must be ordered counterclockwise")
        # Simple polygon: no two non-adjacent edges may cross.
        for i in range(n):
            a1, a2 = v[i], v[(i + 1) % n]
            for j in range(i + 1, n):
                if j == i or (j + 1) % n == i or (i + 1) % n == j:
                    continue
                b1, b2 = v[j], v[(j + 1) % n]
                if _segments_properly_intersect(a1, a2, b1, b2):
                    raise ValueError(
                        f"polygon is not simple: edge {i} crosses edge {j}"
                    )

    @classmethod
    def square(cls) -> "PolygonalDomain":
        """The square (-1, 1)^2."""
        return cls(
            np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]),
            builtin="square",
        )

    @classmethod
    def lshape(cls) -> "PolygonalDomain":
        """The L-shaped domain (-1, 1)^2 minus the quadrant [0, 1) x (-1, 0]."""
        return cls(
            np.array(
                [
                    [-1.0, -1.0],
                    [0.0, -1.0],
                    [0.0, 0.0],
                    [1.0, 0.0],
                    [1.0, 1.0],
                    [-1.0, 1.0],
                ]
            ),
            builtin="lshape",
        )

    def area(self) -> float:
        return _polygon_area(self.vertices)

    def distance_to_boundary(self, p) -> float:
        """Distance from p to the polygon boundary."""
        p = as_point(p)
        v = self.vertices
        n = len(v)
        return min(
            _point_segment_distance(p, v[i], v[(i + 1) % n]) for i in range(n)
        )

    def contains(self, p, strict: bool = False, tol: float = 1e-12) -> bool:
        """Point-in-polygon test by ray casting.

        With ``strict=True`` points within ``tol`` of the boundary are
        rejected, otherwise they are accepted.
        """
        p = as_point(p)
        if self.distance_to_boundary(p) <= tol:
            return not strict
        v = self.vertices
        n = len(v)
        inside = False
        px, py = p
        for i in range(n):
            x1, y1 = v[i]
            x2, y2 = v[(i + 1) % n]
            if (y1 > py) != (y2 > py):
                xcross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
                if px < xcross:
                    inside = not inside
        return inside


class Star(NamedTuple):
    """The triangles incident to one vertex."""

    center: int
    triangles: np.ndarray


@dataclass
class Triangulation:
    """Conforming triangulation snapshot.

    Attributes
    ----------
    vertices : (NV, 2) float array
    vertex_is_boundary : (NV,) bool array
    triangles : (NT, 3) int array, counterclockwise vertex triples
    refedge : (NT,) int array
        Local index of the vertex opposite the refinement edge.
    generation : (NT,) int array
        Number of bisections separating each triangle from the initial mesh.
    domain : PolygonalDomain, optional
    """

    vertices: np.ndarray
    vertex_is_boundary: np.ndarray
    triangles: np.ndarray
    refedge: np.ndarray
    generation: np.ndarray
    domain: PolygonalDomain | None = field(default=None, repr=False)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    @cached_property
    def corners(self) -> np.ndarray:
        """(NT, 3, 2) corner coordinates."""
        return self.vertices[self.triangles]

    @cached_property
    def signed_areas(self) -> np.ndarray:
        c = self.corners
        return 0.5 * (
            (c[:, 1, 0] - c[:, 0, 0]) * (c[:, 2, 1] - c[:, 0, 1])
            - (c[:, 1, 1] - c[:, 0, 1]) * (c[:, 2, 0] - c[:, 0, 0])
        )

    @cached_property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @cached_property
    def meshsize(self) -> np.ndarray:
        """Local meshsize per triangle, the square root of its area."""
        return np.sqrt(self.areas)

    @cached_property
    def _edge_data(self):
        t = self.triangles
        # Local edge k is opposite local vertex k.
        pairs = np.stack(
            [t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1
        ).reshape(-1, 2)
        pairs_sorted = np.sort(pairs, axis=1)
        edges, inverse = np.unique(pairs_sorted, axis=0, return_inverse=True)
        tri_edges = inverse.reshape(-1, 3)
        counts = np.bincount(inverse, minlength=len(edges))
        order = np.argsort(inverse, kind="stable")
        owner = np.repeat(np.arange(self.num_triangles), 3)[order]
        offsets = np.concatenate([[0], np.cumsum(counts)])
        edge_tris = np.full((len(edges), 2), -1, dtype=np.int64)
        edge_tris[:, 0] = owner[offsets[:-1]]
        two = counts == 2
        edge_tris[two, 1] = owner[offsets[:-1][two] + 1]
        return edges, tri_edges, edge_tris, counts

    @property
    def edges(self) -> np.ndarray:
        """(NE, 2) sorted vertex pairs of all edges."""
        return self._edge_data[0]

    @property
    def tri_edges(self) -> np.ndarray:
        """(NT, 3) global edge index per local edge slot."""
        return self._edge_data[1]

    @property
    def edge_tris(self) -> np.ndarray:
        """(NE, 2) incident triangles per edge, -1 where absent."""
        return self._edge_data[2]

    @cached_property
    def edge_is_boundary(self) -> np.ndarray:
        return self._edge_data[3] == 1

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        e = self.edges
        d = self.vertices[e[:, 1]] - self.vertices[e[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def _vertex_incidence(self):
        flat = self.triangles.ravel()
        order = np.argsort(flat, kind="stable")
        owner = np.repeat(np.arange(self.num_triangles), 3)[order]
        counts = np.bincount(flat, minlength=self.num_vertices)
        offsets = np.concatenate([[0], np.cumsum(counts)])
        return owner, offsets

    def vertex_triangles(self, z: int) -> np.ndarray:
        """Indices of the triangles containing vertex z."""
        owner, offsets = self._vertex_incidence
        return owner[offsets[z] : offsets[z + 1]]

    @cached_property
    def min_angle(self) -> float:
        """Smallest interior angle over all triangles, in degrees."""
        c = self.corners
        angles = []
        for k in range(3):
            u = c[:, (k + 1) % 3] - c[:, k]
            v = c[:, (k + 2) % 3] - c[:, k]
            cosang = np.sum(u * v, axis=1) / (
                np.hypot(u[:, 0], u[:, 1]) * np.hypot(v[:, 0], v[:, 1])
            )
            angles.append(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
        return float(np.min(angles))

    def barycentric(self, p, tri_indices=None) -> np.ndarray:
        """Barycentric coordinates of p with respect to the given triangles.

        Returns an array of shape (len(tri_indices), 3); by default all
        triangles are used.
        """
        p = as_point(p)
        if tri_indices is None:
            c = self.corners
            area2 = 2.0 * self.signed_areas
        else:
            tri_indices = np.atleast_1d(np.asarray(tri_indices, dtype=int))
            c = self.vertices[self.triangles[tri_indices]]
            area2 = 2.0 * self.signed_areas[tri_indices]
        lam = np.empty((c.shape[0], 3))
        for k in range(3):
            a = c[:, (k + 1) % 3]
            b = c[:, (k + 2) % 3]
            lam[:, k] = (
                (b[:, 0] - a[:, 0]) * (p[1] - a[:, 1])
                - (b[:, 1] - a[:, 1]) * (p[0] - a[:, 0])
            ) / area2
        return lam


def _longest_edge_refedges(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Refinement edge assignment: the longest edge of each triangle.

    Ties are broken towards the smallest local index, then a sweep aligns
    neighbor pairs whenever an equally long edge allows it, so that paired
    refinement edges are preferred.
    """
    c = vertices[triangles]
    lengths = np.empty((len(triangles), 3))
    for k in range(3):
        d = c[:, (k + 2) % 3] - c[:, (k + 1) % 3]
        lengths[:, k] = np.hypot(d[:, 0], d[:, 1])
    refedge = np.argmax(lengths, axis=1).astype(np.int64)

    mesh = Triangulation(
        vertices,
        np.zeros(len(vertices), dtype=bool),
        triangles,
        refedge,
        np.zeros(len(triangles), dtype=np.int64),
    )
    tri_edges = mesh.tri_edges
    edge_tris = mesh.edge_tris
    reltol = 1.0 - 1e-12
    for t in range(len(triangles)):
        eid = tri_edges[t, refedge[t]]
        t1, t2 = edge_tris[eid]
        other = t2 if t1 == t else t1
        if other < 0:
            continue
        if tri_edges[other, refedge[other]] == eid:
            continue
        # Flip the neighbor onto the shared edge if it is (almost) as long.
        slot = int(np.where(tri_edges[other] == eid)[0][0])
        if lengths[other, slot] >= reltol * lengths[other].max():
            refedge[other] = slot
    return refedge


def triangulation_from_arrays(
    vertices,
    triangles,
    refedge=None,
    domain: PolygonalDomain | None = None,
    generation=None,
) -> Triangulation:
    """Build a Triangulation from raw arrays, deriving boundary flags.

    Triangles with clockwise orientation are rejected.  When ``refedge`` is
    omitted, the longest-edge assignment is used.
    """
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    if triangles.ndim != 2 or triangles.shape[1] != 3:
        raise MeshError("triangles must have shape (NT, 3)")
    if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
        raise MeshError("triangle vertex index out of range")
    if refedge is None:
        refedge = _longest_edge_refedges(vertices, triangles)
    else:
        refedge = np.asarray(refedge, dtype=np.int64)
        if refedge.shape != (len(triangles),) or (
            refedge.size and (refedge.min() < 0 or refedge.max() > 2)
        ):
            raise MeshError("refedge must give one local index in {0,1,2} per triangle")
    if generation is None:
        generation = np.zeros(len(triangles), dtype=np.int64)
    mesh = Triangulation(
        vertices,
        np.zeros(len(vertices), dtype=bool),
        triangles,
        refedge,
        np.asarray(generation, dtype=np.int64),
        domain=domain,
    )
    if np.any(mesh.signed_areas <= 0.0):
        bad = int(np.argmin(mesh.signed_areas))
        raise MeshError(
            f"triangle {bad} has non-positive signed area {mesh.signed_areas[bad]:g}"
        )
    boundary_edges = mesh.edges[mesh.edge_is_boundary]
    flags = np.zeros(len(vertices), dtype=bool)
    flags[boundary_edges.ravel()] = True
    mesh.vertex_is_boundary = flags
    return mesh


def initial_mesh(domain: PolygonalDomain) -> Triangulation:
    """Initial triangulation of a built-in domain.

    The square yields 4 triangles meeting at the center vertex, so that data
    placed at the origin sits on a mesh vertex of every refinement.  The
    L-shape yields 6 triangles, two per quadrant square.  Refinement edges
    are the long edges and are assigned in compatible pairs.  For a generic
    polygon a user-supplied triangulation file is required, see
    :func:`read_mesh`.
    """
    if domain.builtin == "square":
        vertices = np.array(
            [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0], [0.0, 0.0]]
        )
        triangles = np.array([[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]])
        refedge = np.array([2, 2, 2, 2])
    elif domain.builtin == "lshape":
        vertices = np.array(
            [
                [-1.0, -1.0],
                [0.0, -1.0],
                [0.0, 0.0],
                [1.0, 0.0],
                [1.0, 1.0],
                [-1.0, 1.0],
                [-1.0, 0.0],
                [0.0, 1.0],
            ]
        )
        triangles = np.array(
            [[0, 1, 2], [0, 2, 6], [2, 7, 5], [2, 5, 6], [2, 3, 4], [2, 4, 7]]
        )
        refedge = np.array([1, 2, 1, 2, 1, 2])
    else:
        raise MeshError(
            "no built-in triangulation for this domain; "
            "supply a mesh file (see read_mesh)"
        )
    return triangulation_from_arrays(vertices, triangles, refedge, domain=domain)


def bisect(mesh: Triangulation, marked) -> Triangulation:
    """Refine a mesh: marked triangles are bisected twice, halving all their
    edges, and the conformity closure bisects further triangles as needed.

    Returns a new Triangulation; the input is left untouched.  With an empty
    marked set the input mesh is returned as is.
    """
    if isinstance(marked, np.ndarray):
        marked = np.unique(marked.astype(np.int64))
    else:
        marked = np.asarray(sorted(set(map(int, marked))), dtype=np.int64)
    if marked.size == 0:
        return mesh
    if marked.min() < 0 or marked.max() >= mesh.num_triangles:
        raise MeshError("marked set contains an invalid triangle index")

    tri_edges = mesh.tri_edges
    num_edges = len(mesh.edges)
    nt = mesh.num_triangles
    refedge_eid = tri_edges[np.arange(nt), mesh.refedge]

    marked_edges = np.zeros(num_edges, dtype=bool)
    marked_edges[tri_edges[marked].ravel()] = True

    # Closure: a triangle with any marked edge must have its refinement edge
    # marked; iterate to a fixpoint.  Each pass marks at least one new edge,
    # so the cap below can only trip on corrupted connectivity.
    for _ in range(num_edges + 2):
        has_marked = marked_edges[tri_edges].any(axis=1)
        need = has_marked & ~marked_edges[refedge_eid]
        if not need.any():
            break
        marked_edges[refedge_eid[need]] = True
    else:
        raise MeshError("conformity closure failed to terminate")

    split_edge_ids = np.flatnonzero(marked_edges)
    midpoint_of = np.full(num_edges, -1, dtype=np.int64)
    midpoint_of[split_edge_ids] = mesh.num_vertices + np.arange(len(split_edge_ids))
    new_points = 0.5 * (
        mesh.vertices[mesh.edges[split_edge_ids, 0]]
        + mesh.vertices[mesh.edges[split_edge_ids, 1]]
    )
    vertices = np.vstack([mesh.vertices, new_points])
    vertex_is_boundary = np.concatenate(
        [mesh.vertex_is_boundary, mesh.edge_is_boundary[split_edge_ids]]
    )

    tris = mesh.triangles
    e = mesh.refedge
    idx = np.arange(nt)
    p = tris[idx, e]
    a = tris[idx, (e + 1) % 3]
    b = tris[idx, (e + 2) % 3]
    eid_ref = tri_edges[idx, e]
    eid_bp = tri_edges[idx, (e + 1) % 3]
    eid_pa = tri_edges[idx, (e + 2) % 3]
    split_ref = marked_edges[eid_ref]
    split_bp = marked_edges[eid_bp] & split_ref
    split_pa = marked_edges[eid_pa] & split_ref
    m_ab = midpoint_of[eid_ref]
    m_bp = midpoint_of[eid_bp]
    m_pa = midpoint_of[eid_pa]

    n_children = np.where(split_ref, 2 + split_pa + split_bp, 1)
    offsets = np.concatenate([[0], np.cumsum(n_children)])[:-1]
    total = int(n_children.sum())
    new_tris = np.empty((total, 3), dtype=np.int64)
    new_ref = np.full(total, 2, dtype=np.int64)
    new_gen = np.empty(total, dtype=np.int64)
    gen = mesh.generation

    keep = ~split_ref
    new_tris[offsets[keep]] = tris[keep]
    new_ref[offsets[keep]] = mesh.refedge[keep]
    new_gen[offsets[keep]] = gen[keep]

    # First child covers (p, a); second child covers (b, p).  A child whose
    # outer edge is also marked is immediately bisected again.
    one_pa = split_ref & ~split_pa
    two_pa = split_ref & split_pa
    new_tris[offsets[one_pa]] = np.column_stack([p, a, m_ab])[one_pa]
    new_gen[offsets[one_pa]] = gen[one_pa] + 1
    new_tris[offsets[two_pa]] = np.column_stack([m_ab, p, m_pa])[two_pa]
    new_tris[offsets[two_pa] + 1] = np.column_stack([a, m_ab, m_pa])[two_pa]
    new_gen[offsets[two_pa]] = gen[two_pa] + 2
    new_gen[offsets[two_pa] + 1] = gen[two_pa] + 2

    second = offsets + 1 + split_pa  # slot after the (p, a) part
    one_bp = split_ref & ~split_bp
    two_bp = split_ref & split_bp
    new_tris[second[one_bp]] = np.column_stack([b, p, m_ab])[one_bp]
    new_gen[second[one_bp]] = gen[one_bp] + 1
    new_tris[second[two_bp]] = np.column_stack([m_ab, b, m_bp])[two_bp]
    new_tris[second[two_bp] + 1] = np.column_stack([p, m_ab, m_bp])[two_bp]
    new_gen[second[two_bp]] = gen[two_bp] + 2
    new_gen[second[two_bp] + 1] = gen[two_bp] + 2

    return Triangulation(
        vertices, vertex_is_boundary, new_tris, new_ref, new_gen, domain=mesh.domain
    )


def star(mesh: Triangulation, z: int) -> Star:
    """The star around vertex z: all triangles having z as a vertex."""
    if not 0 <= z < mesh.num_vertices:
        raise IndexError(f"vertex index {z} out of range")
    return Star(center=int(z), triangles=np.sort(mesh.vertex_triangles(int(z))))


def patch(mesh: Triangulation, t: int, vertex_neighbors: bool = False) -> np.ndarray:
    """Patch around triangle t.

    By default t together with its side neighbors; with
    ``vertex_neighbors=True`` all triangles sharing at least a vertex with t.
    """
    if not 0 <= t < mesh.num_triangles:
        raise IndexError(f"triangle index {t} out of range")
    if vertex_neighbors:
        tris = np.concatenate(
            [mesh.vertex_triangles(int(v)) for v in mesh.triangles[t]]
        )
        return np.unique(tris)
    incident = mesh.edge_tris[mesh.tri_edges[t]].ravel()
    incident = incident[incident >= 0]
    return np.unique(np.concatenate([[t], incident]))


def locate(mesh: Triangulation, p, tol: float = 1e-12):
    """Locate the triangle containing p.

    Returns ``(triangle_index, barycentric)`` with the coordinates clipped to
    [0, 1].  Points on shared edges resolve to the lowest incident triangle
    index; the evaluated continuous finite element function is the same
    either way.  Raises for points outside the domain.
    """
    p = as_point(p)
    lam = mesh.barycentric(p)
    lmin = lam.min(axis=1)
    inside = np.flatnonzero(lmin >= -tol)
    if inside.size:
        t = int(inside[0])
    else:
        # Tiny triangles lose barycentric accuracy; accept the best candidate
        # as long as it is only marginally outside.
        t = int(np.argmax(lmin))
        if lmin[t] < -1e-6:
            raise ValueError(f"point ({p[0]:.17g}, {p[1]:.17g}) is outside the mesh")
    coords = np.clip(lam[t], 0.0, 1.0)
    coords /= coords.sum()
    return t, coords


def mesh_metrics(mesh: Triangulation):
    """Return (h_min, h_max, min_angle_degrees)."""
    h = mesh.meshsize
    return float(h.min()), float(h.max()), mesh.min_angle


def validate_mesh(mesh: Triangulation, full: bool = False, area_rtol: float = 1e-12):
    """Check the Triangulation invariants, raising MeshError on violation.

    Checks orientation, edge-to-edge conformity (interior edges shared by
    exactly two triangles, single-sided edges on the domain boundary),
    boundary flags, and, when the domain polygon is known, that the triangle
    areas sum to the domain area.  ``full=True`` adds an exhaustive
    hanging-node scan, quadratic in the mesh size.
    """
    if np.any(mesh.signed_areas <= 0.0):
        bad = int(np.argmin(mesh.signed_areas))
        raise MeshError(f"triangle {bad} has non-positive area")
    unique_tris = np.unique(np.sort(mesh.triangles, axis=1), axis=0)
    if len(unique_tris) != mesh.num_triangles:
        raise MeshError("mesh contains duplicate triangles")
    counts = mesh._edge_data[3]
    if np.any(counts > 2):
        raise MeshError("an edge is shared by more than two triangles")
    boundary_edges = mesh.edges[mesh.edge_is_boundary]
    flags_from_edges = np.zeros(mesh.num_vertices, dtype=bool)
    flags_from_edges[boundary_edges.ravel()] = True
    if not np.array_equal(flags_from_edges, mesh.vertex_is_boundary):
        raise MeshError("vertex boundary flags do not match the edge structure")
    if mesh.domain is not None:
        total = float(mesh.areas.sum())
        target = mesh.domain.area()
        if abs(total - target) > area_rtol * max(1.0, abs(target)):
            raise MeshError(
                f"triangle areas sum to {total:.17g}, domain area is {target:.17g}"
            )
        for edge in boundary_edges:
            midpoint = 0.5 * (mesh.vertices[edge[0]] + mesh.vertices[edge[1]])
            if mesh.domain.distance_to_boundary(midpoint) > 1e-9:
                raise MeshError(
                    f"edge {edge} is single-sided but not on the domain boundary"
                )
    if full:
        _hanging_node_scan(mesh)


def _hanging_node_scan(mesh: Triangulation):
    """Reject vertices lying in the interior of another triangle's edge."""
    v = mesh.vertices
    for eid, (i, j) in enumerate(mesh.edges):
        a, b = v[i], v[j]
        length = np.hypot(*(b - a))
        for z in range(mesh.num_vertices):
            if z == i or z == j:
                continue
            if _point_segment_distance(v[z], a, b) < 1e-12 * max(1.0, length):
                d = np.hypot(*(v[z] - a)) + np.hypot(*(v[z] - b))
                if abs(d - length) < 1e-12 * max(1.0, length):
                    raise MeshError(
                        f"vertex {z} hangs on edge ({i}, {j})"
                    )


def write_mesh(mesh: Triangulation, path) -> None:
    """Write a mesh in the plain text format.

    Header line "NV NT", then NV lines "x y boundary_flag", then NT lines
    "i0 i1 i2 refedge" with 0-based indices.  Coordinates carry 17
    significant digits so that the round trip is bit exact.
    """
    lines = [f"{mesh.num_vertices} {mesh.num_triangles}"]
    for (x, y), flag in zip(mesh.vertices, mesh.vertex_is_boundary):
        lines.append(f"{x:.17g} {y:.17g} {int(flag)}")
    for tri, re_ in zip(mesh.triangles, mesh.refedge):
        lines.append(f"{tri[0]} {tri[1]} {tri[2]} {re_}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path, domain: PolygonalDomain | None = None) -> Triangulation:
    """Read a mesh written by :func:`write_mesh` and validate it.

    Vertices closer than 1e-12 are merged.  Stored boundary flags must agree
    with the flags derived from the edge structure, which also rejects
    meshes with hanging nodes.
    """
    with open(path, "r", encoding="utf-8") as fh:
        tokens = fh.read().split("\n")
    rows = [line.split() for line in tokens if line.strip()]
    if not rows or len(rows[0]) != 2:
        raise MeshError(f"{path}: expected header line 'NV NT'")
    try:
        nv, nt = int(rows[0][0]), int(rows[0][1])
        vertex_rows = rows[1 : 1 + nv]
        tri_rows = rows[1 + nv : 1 + nv + nt]
        if len(vertex_rows) != nv or len(tri_rows) != nt:
            raise MeshError(f"{path}: truncated file")
        vertices = np.array([[float(r[0]), float(r[1])] for r in vertex_rows])
        flags = np.array([bool(int(r[2])) for r in vertex_rows])
        triangles = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in tri_rows])
        refedge = np.array([int(r[3]) for r in tri_rows])
    except (ValueError, IndexError) as exc:
        raise MeshError(f"{path}: malformed mesh file ({exc})") from exc

    vertices, triangles = _merge_close_vertices(vertices, triangles)
    mesh = triangulation_from_arrays(vertices, triangles, refedge, domain=domain)
    if len(mesh.vertices) == nv and not np.array_equal(flags, mesh.vertex_is_boundary):
        raise MeshError(
            f"{path}: stored boundary flags disagree with the mesh connectivity"
        )
    validate_mesh(mesh)
    return mesh


def _merge_close_vertices(vertices: np.ndarray, triangles: np.ndarray):
    from scipy.spatial import cKDTree

    pairs = cKDTree(vertices).query_pairs(VERTEX_DEDUP_TOL, output_type="ndarray")
    if len(pairs) == 0:
        return vertices, triangles
    parent = np.arange(len(vertices))
    for i, j in pairs:
        ri, rj = parent[i], parent[j]
        while parent[ri] != ri:
            ri = parent[ri]
        while parent[rj] != rj:
            rj = parent[rj]
        parent[max(ri, rj)] = min(ri, rj)
    for k in range(len(parent)):
        while parent[parent[k]] != parent[k]:
            parent[k] = parent[parent[k]]
    keep = np.flatnonzero(parent == np.arange(len(vertices)))
    remap = np.zeros(len(vertices), dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    logger.warning("merged %d duplicate vertices on import", len(vertices) - len(keep))
    return vertices[keep], remap[parent[triangles]]
