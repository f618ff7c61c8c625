"""Exact solutions, error norms, fractional seminorms, and slope fits.

These are the measurement tools for the convergence experiments: the
fundamental solution benchmark on the square, elementwise L2 and
off-singularity H1 errors, a brute-force double-integral fractional
seminorm for desk-scale meshes, and least-squares slopes of log-log
convergence histories.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fem import (
    DiscreteSolution,
    PointSource,
    ProblemSpec,
    QUAD_DEG4_BARY,
    QUAD_DEG4_WEIGHTS,
    evaluate_on_elements,
    gradients_at,
)
from .geometry import PolygonalDomain, Triangulation

logger = logging.getLogger(__name__)

__all__ = [
    "ExactSolution",
    "SlopeFit",
    "fundamental_value",
    "fundamental_gradient",
    "fundamental_solution",
    "fundamental_exact",
    "fundamental_problem",
    "lshape_problem",
    "l2_error",
    "h1_error_off_singularity",
    "fractional_seminorm",
    "fit_slope",
]


@dataclass
class ExactSolution:
    """Closed-form solution with its gradient and singular points.

    ``value`` maps (..., 2) arrays to (...) values, ``gradient`` to (..., 2)
    vectors; quadrature must avoid or refine around the singular points.
    """

    value: Callable
    gradient: Callable
    singular_points: list = field(default_factory=list)


def fundamental_value(p) -> np.ndarray | float:
    """-log|p| / (2 pi); +inf at the origin."""
    p = np.asarray(p, dtype=float)
    r = np.hypot(p[..., 0], p[..., 1])
    with np.errstate(divide="ignore"):
        out = -np.log(r) / (2.0 * np.pi)
    return out if out.ndim else float(out)


def fundamental_gradient(p) -> np.ndarray:
    """-p / (2 pi |p|^2); undefined at the origin."""
    p = np.asarray(p, dtype=float)
    r_sq = p[..., 0] ** 2 + p[..., 1] ** 2
    if np.any(r_sq == 0.0):
        raise ValueError("gradient of the fundamental solution is undefined at 0")
    return -p / (2.0 * np.pi * r_sq[..., None])


def fundamental_solution(p):
    """Value and gradient of the fundamental solution at one point."""
    return fundamental_value(p), fundamental_gradient(p)


def fundamental_exact() -> ExactSolution:
    return ExactSolution(
        value=fundamental_value,
        gradient=fundamental_gradient,
        singular_points=[np.zeros(2)],
    )


def fundamental_problem(
    theta: float, degree: int = 1, allow_experimental_theta: bool = False
) -> ProblemSpec:
    """Benchmark on the square: unit source at the origin, boundary data of
    the fundamental solution, which is then the exact solution."""
    return ProblemSpec(
        domain=PolygonalDomain.square(),
        sources=[PointSource(np.zeros(2), 1.0)],
        theta=theta,
        degree=degree,
        boundary_data=lambda p: fundamental_value(p),
        exact=fundamental_exact(),
        allow_experimental_theta=allow_experimental_theta,
    )


def lshape_problem(theta: float, degree: int = 1) -> ProblemSpec:
    """Benchmark on the L-shaped domain with three unit point sources, two of
    them very close together near the lower left."""
    return ProblemSpec(
        domain=PolygonalDomain.lshape(),
        sources=[
            PointSource(np.array([0.33, 0.66]), 1.0),
            PointSource(np.array([-0.251, -0.85]), 1.0),
            PointSource(np.array([-0.25, -0.87]), 1.0),
        ],
        theta=theta,
        degree=degree,
    )


# ---------------------------------------------------------------------------
# error norms


def _physical_points(mesh: Triangulation, tri_indices, bary: np.ndarray) -> np.ndarray:
    """(ntri, npts, 2) images of common barycentric points."""
    corners = mesh.corners[tri_indices]
    return np.einsum("qk,tkd->tqd", bary, corners)


def _subdivided_bary(levels: int):
    """Barycentric corner triples of the uniform 4^levels subdivision."""
    n = 2 ** levels
    cells = []
    for i in range(n):
        for j in range(n - i):
            v = lambda a, b: (a / n, b / n, (n - a - b) / n)
            cells.append((v(i, j), v(i + 1, j), v(i, j + 1)))
            if i + j < n - 1:
                cells.append((v(i + 1, j), v(i + 1, j + 1), v(i, j + 1)))
    return np.array(cells)


def _singular_elements(mesh: Triangulation, singular_points) -> np.ndarray:
    hits = set()
    for p in singular_points:
        lam = mesh.barycentric(np.asarray(p, dtype=float))
        hits.update(map(int, np.flatnonzero(lam.min(axis=1) >= -1e-12)))
    return np.array(sorted(hits), dtype=int)


def l2_error(u: DiscreteSolution, exact: ExactSolution, subdivision_levels: int = 4) -> float:
    """L2 norm of u_exact - U by elementwise quadrature.

    Elements containing a singular point are integrated on a uniform
    subdivision (4 levels by default); the quadrature points stay away from
    the singular corners, and the integrable log-type singularity is
    resolved to plotting accuracy.
    """
    mesh = u.mesh
    singular = _singular_elements(mesh, exact.singular_points)
    regular = np.setdiff1d(np.arange(mesh.num_triangles), singular)

    total = 0.0
    if regular.size:
        pts = _physical_points(mesh, regular, QUAD_DEG4_BARY)
        diff = exact.value(pts) - evaluate_on_elements(u, regular, QUAD_DEG4_BARY)
        total += float(np.einsum("tq,q,t->", diff**2, QUAD_DEG4_WEIGHTS, mesh.areas[regular]))
    if singular.size:
        cells = _subdivided_bary(subdivision_levels)
        # Quadrature points of every cell, expressed in element barycentric.
        cell_bary = np.einsum("qk,ckm->cqm", QUAD_DEG4_BARY, cells).reshape(-1, 3)
        weights = np.tile(QUAD_DEG4_WEIGHTS, len(cells)) / len(cells)
        pts = _physical_points(mesh, singular, cell_bary)
        diff = exact.value(pts) - evaluate_on_elements(u, singular, cell_bary)
        total += float(np.einsum("tq,q,t->", diff**2, weights, mesh.areas[singular]))
    return float(np.sqrt(total))


def _triangle_hits_diamond(corners: np.ndarray, radius: float) -> bool:
    """Whether a triangle meets the closed diamond |x| + |y| <= radius."""
    norms = np.abs(corners[:, 0]) + np.abs(corners[:, 1])
    if np.any(norms <= radius):
        return True
    tips = radius * np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], dtype=float)
    a, b, c = corners

    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    for tip in tips:
        if (
            orient(a, b, tip) >= 0
            and orient(b, c, tip) >= 0
            and orient(c, a, tip) >= 0
        ):
            return True
    tri_edges = [(a, b), (b, c), (c, a)]
    diamond_edges = [(tips[k], tips[(k + 1) % 4]) for k in range(4)]
    for p1, p2 in tri_edges:
        for q1, q2 in diamond_edges:
            d1 = orient(q1, q2, p1)
            d2 = orient(q1, q2, p2)
            d3 = orient(p1, p2, q1)
            d4 = orient(p1, p2, q2)
            if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
                return True
    return False


def h1_error_off_singularity(
    u: DiscreteSolution, exact: ExactSolution, radius: float = 0.25
) -> float:
    """H1 seminorm error over the triangles clear of the diamond
    |x| + |y| <= radius.

    Triangles cut by the diamond are excluded entirely; the retained region
    grows into {|x| + |y| > radius} under refinement.
    """
    mesh = u.mesh
    keep = np.array(
        [
            t
            for t in range(mesh.num_triangles)
            if not _triangle_hits_diamond(mesh.corners[t], radius)
        ],
        dtype=int,
    )
    if keep.size == 0:
        return 0.0
    pts = _physical_points(mesh, keep, QUAD_DEG4_BARY)
    grad_u = gradients_at(u, QUAD_DEG4_BARY)[keep]
    diff = exact.gradient(pts) - grad_u
    total = np.einsum(
        "tqd,q,t->", diff**2, QUAD_DEG4_WEIGHTS, mesh.areas[keep]
    )
    return float(np.sqrt(total))


# ---------------------------------------------------------------------------
# fractional seminorm


def fractional_seminorm(
    v,
    s: float,
    mesh: Triangulation | None = None,
    region=None,
    subdivisions: int = 3,
    pair_cap: int = 40_000,
    min_distance: float = 1e-10,
    pair_order: str = "forward",
) -> float:
    """Double-integral (Aronszajn-Slobodeckij) seminorm of order s in (0, 1).

    ``v`` is a DiscreteSolution or a callable over (..., 2) point arrays, in
    which case ``mesh`` must be given.  The cost is quadratic in the number
    of elements of ``region`` (all by default), so this is a desk-scale
    verification tool; meshes beyond ``pair_cap`` element pairs are
    rejected.  Non-touching element pairs use tensorized quadrature;
    touching pairs (self pairs included) are uniformly subdivided
    ``subdivisions`` times first, and point pairs closer than
    ``min_distance`` are skipped.  ``pair_order="reversed"`` sums the pair
    contributions backwards, a determinism check for the symmetric sum.
    """
    if not 0.0 < s < 1.0:
        raise ValueError(f"fractional order s={s} outside (0, 1)")
    if isinstance(v, DiscreteSolution):
        mesh = v.mesh
        values_on = lambda tris, bary: evaluate_on_elements(v, tris, bary)
    else:
        if mesh is None:
            raise ValueError("a mesh is required when v is a callable")
        fn = v
        values_on = lambda tris, bary: np.asarray(
            fn(_physical_points(mesh, tris, bary))
        )
    region = (
        np.arange(mesh.num_triangles)
        if region is None
        else np.asarray(region, dtype=int)
    )
    n = len(region)
    if n * n > pair_cap:
        raise ValueError(
            f"{n * n} element pairs exceed the cap of {pair_cap}; "
            "this seminorm is meant for desk-scale meshes"
        )

    # Coarse data: one quadrature panel per element.
    coarse_pts = _physical_points(mesh, region, QUAD_DEG4_BARY)
    coarse_vals = values_on(region, QUAD_DEG4_BARY)
    coarse_w = QUAD_DEG4_WEIGHTS[None, :] * mesh.areas[region, None]

    # Fine data: panels on the uniform subdivision, for touching pairs.
    cells = _subdivided_bary(subdivisions)
    fine_bary = np.einsum("qk,ckm->cqm", QUAD_DEG4_BARY, cells).reshape(-1, 3)
    fine_wq = np.tile(QUAD_DEG4_WEIGHTS, len(cells)) / len(cells)
    fine_pts = _physical_points(mesh, region, fine_bary)
    fine_vals = values_on(region, fine_bary)
    fine_w = fine_wq[None, :] * mesh.areas[region, None]

    tri_vertices = mesh.triangles[region]
    exponent = 2.0 + 2.0 * s
    contributions = np.empty(n * n)
    k = 0
    for i in range(n):
        verts_i = set(map(int, tri_vertices[i]))
        for j in range(n):
            touching = bool(verts_i & set(map(int, tri_vertices[j])))
            if touching:
                xi, wi, fi = fine_pts[i], fine_w[i], fine_vals[i]
                xj, wj, fj = fine_pts[j], fine_w[j], fine_vals[j]
            else:
                xi, wi, fi = coarse_pts[i], coarse_w[i], coarse_vals[i]
                xj, wj, fj = coarse_pts[j], coarse_w[j], coarse_vals[j]
            dx = xi[:, None, :] - xj[None, :, :]
            dist = np.hypot(dx[..., 0], dx[..., 1])
            mask = dist >= min_distance
            with np.errstate(divide="ignore", invalid="ignore"):
                integrand = np.where(
                    mask, (fi[:, None] - fj[None, :]) ** 2 / dist**exponent, 0.0
                )
            contributions[k] = float((wi[:, None] * wj[None, :] * integrand).sum())
            k += 1
    if pair_order == "reversed":
        contributions = contributions[::-1]
    elif pair_order != "forward":
        raise ValueError("pair_order must be 'forward' or 'reversed'")
    return float(np.sqrt(np.sum(contributions)))


# ---------------------------------------------------------------------------
# slope fitting


@dataclass
class SlopeFit:
    """Least-squares line through log-log convergence data."""

    slope: float
    intercept: float
    window: tuple[int, int]


def fit_slope(records: Sequence, value="eta", window="last-half") -> SlopeFit:
    """Fit value ~ C * ndofs^slope over a window of the history.

    ``value`` is a record attribute name or a callable; ``window`` is
    "last-half", an integer (the last so many records), or an explicit
    (start, stop) pair.  At least 3 records with positive values are
    required.
    """
    n = len(records)
    if window == "last-half":
        start, stop = n // 2, n
    elif isinstance(window, int):
        start, stop = max(0, n - window), n
    else:
        start, stop = window
        start, stop = int(start), int(stop)
    if stop - start < 3:
        raise ValueError(
            f"slope fit needs at least 3 records, window [{start}, {stop}) "
            f"has {max(0, stop - start)}"
        )
    getter = value if callable(value) else lambda r: getattr(r, value)
    chunk = records[start:stop]
    ndofs = np.array([r.ndofs for r in chunk], dtype=float)
    values = np.array([getter(r) for r in chunk], dtype=float)
    if np.any(ndofs <= 0) or np.any(values <= 0):
        raise ValueError("slope fit needs positive ndofs and values")
    slope, intercept = np.polyfit(np.log(ndofs), np.log(values), 1)
    return SlopeFit(slope=float(slope), intercept=float(intercept), window=(start, stop))
