"""Command line interface: problem files, adaptive runs, convergence output.

Problem files are plain key-value text, one assignment per line, with ``#``
comments::

    domain = lshape              # or: square, polygon: x0 y0 x1 y1 ...
    source = 0.33 0.66 1.0       # x y weight, repeatable
    theta = 0.375
    degree = 1                   # 1 or 2
    exact = fundamental          # attach the log benchmark data
    mesh = start.txt             # triangulation file, polygon domains only
    allow_experimental_theta = true

A run writes ``history.csv`` (one row per iteration), ``slopes.txt`` with
least-squares convergence slopes, ``plot.dat`` with gnuplot-ready columns,
and optionally one mesh file per iteration.  Numbers are printed with 17
significant digits so reruns are bit-stable.

Exit codes: 0 success, 1 usage, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .adaptive import AdaptiveConfig, adapt_steps
from .fem import FEMError, PointSource, ProblemSpec, SolverError
from .geometry import MeshError, PolygonalDomain, mesh_metrics, read_mesh, validate_mesh, write_mesh
from .verification import fit_slope, fractional_seminorm, fundamental_exact, fundamental_value

logger = logging.getLogger(__name__)

__all__ = ["RunManifest", "ProblemFormatError", "parse_problem", "run", "main"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVALID = 2
EXIT_NUMERICAL = 3

SEMINORM_FUNCTIONS = {
    "one": lambda p: np.ones(p.shape[:-1]),
    "x": lambda p: p[..., 0],
    "y": lambda p: p[..., 1],
    "xy": lambda p: p[..., 0] * p[..., 1],
    "x2": lambda p: p[..., 0] ** 2,
    "y2": lambda p: p[..., 1] ** 2,
}


class ProblemFormatError(Exception):
    """Malformed problem file; the message carries the line number."""


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    """A solve invocation: problem file, overrides, output options."""

    problem_path: Path
    out_dir: Path = Path("out")
    theta: float | None = None
    max_dofs: int | None = None
    max_iterations: int | None = None
    mark_factor: float | None = None
    fit_window: str | int = "last-half"
    emit_meshes: bool = False


def _fail(line_no: int, message: str):
    raise ProblemFormatError(f"line {line_no}: {message}")


def _parse_floats(text: str, count: int | None, line_no: int):
    parts = text.split()
    if count is not None and len(parts) != count:
        _fail(line_no, f"expected {count} numbers, got {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        _fail(line_no, f"malformed number ({exc})")


def parse_problem(text: str, base_dir: Path | None = None) -> ProblemSpec:
    """Parse problem text into a validated ProblemSpec.

    Unknown keys, malformed numbers, sources outside the domain, and a
    fractional exponent outside (0, 1/2] (without the experimental flag) are
    rejected with the offending line number.
    """
    domain = None
    sources: list[tuple[int, list[float]]] = []
    theta = None
    theta_line = 0
    degree = 1
    exact_tag = None
    allow_experimental = False
    mesh_path = None

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            _fail(line_no, "expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "domain":
            if value in ("square", "unit-square"):
                domain = PolygonalDomain.square()
            elif value in ("lshape", "l-shape"):
                domain = PolygonalDomain.lshape()
            elif value.startswith("polygon:"):
                coords = _parse_floats(value[len("polygon:"):], None, line_no)
                if len(coords) < 6 or len(coords) % 2:
                    _fail(line_no, "polygon needs an even number (>= 6) of coordinates")
                try:
                    domain = PolygonalDomain(np.array(coords).reshape(-1, 2))
                except ValueError as exc:
                    _fail(line_no, str(exc))
            else:
                _fail(line_no, f"unknown domain {value!r}")
        elif key == "source":
            sources.append((line_no, _parse_floats(value, 3, line_no)))
        elif key == "theta":
            theta = _parse_floats(value, 1, line_no)[0]
            theta_line = line_no
        elif key == "degree":
            if value not in ("1", "2"):
                _fail(line_no, f"degree must be 1 or 2, got {value!r}")
            degree = int(value)
        elif key == "exact":
            if value != "fundamental":
                _fail(line_no, f"unknown exact solution tag {value!r}")
            exact_tag = value
        elif key == "allow_experimental_theta":
            if value not in ("true", "false"):
                _fail(line_no, "allow_experimental_theta must be true or false")
            allow_experimental = value == "true"
        elif key == "mesh":
            mesh_path = str((base_dir or Path(".")) / value)
        else:
            _fail(line_no, f"unknown key {key!r}")

    if domain is None:
        raise ProblemFormatError("missing 'domain' line")
    if theta is None:
        raise ProblemFormatError("missing 'theta' line")
    if domain.builtin is None and mesh_path is None:
        raise ProblemFormatError("polygon domains need a 'mesh = <file>' line")

    point_sources = []
    for line_no, (x, y, alpha) in sources:
        if alpha == 0.0:
            _fail(line_no, "source weight must be nonzero")
        if not domain.contains((x, y), strict=True):
            _fail(line_no, f"source ({x:g}, {y:g}) is not strictly inside the domain")
        point_sources.append(PointSource(np.array([x, y]), alpha))

    boundary_data = None
    exact = None
    if exact_tag == "fundamental":
        boundary_data = fundamental_value
        exact = fundamental_exact()
        if not point_sources:
            # The benchmark solution solves the unit point load at the origin.
            if not domain.contains((0.0, 0.0), strict=True):
                raise ProblemFormatError(
                    "exact = fundamental needs the origin inside the domain"
                )
            point_sources = [PointSource(np.zeros(2), 1.0)]

    try:
        return ProblemSpec(
            domain=domain,
            sources=point_sources,
            theta=theta,
            degree=degree,
            boundary_data=boundary_data,
            exact=exact,
            allow_experimental_theta=allow_experimental,
            mesh_path=mesh_path,
        )
    except FEMError as exc:
        raise ProblemFormatError(f"line {theta_line}: {exc}") from exc


def _format(value) -> str:
    if value is None:
        return ""
    return f"{value:.17g}"


def _write_history(records, path: Path):
    lines = ["iter,ndofs,eta,xi,h_min,err_l2,err_h1_off"]
    for r in records:
        lines.append(
            f"{r.iteration},{r.ndofs},{_format(r.eta)},{_format(r.xi)},"
            f"{_format(r.h_min)},{_format(r.err_l2)},{_format(r.err_h1_off)}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_plot_data(records, path: Path):
    lines = ["# ndofs eta xi err_l2 err_h1_off"]
    for r in records:
        err_l2 = "nan" if r.err_l2 is None else f"{r.err_l2:.17g}"
        err_h1 = "nan" if r.err_h1_off is None else f"{r.err_h1_off:.17g}"
        lines.append(
            f"{r.ndofs} {r.eta:.17g} {r.xi:.17g} {err_l2} {err_h1}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_slopes(records, window, path: Path, with_errors: bool):
    lines = ["# quantity slope intercept window_start window_stop"]
    quantities = ["eta"] + (["err_l2", "err_h1_off"] if with_errors else [])
    for name in quantities:
        try:
            fit = fit_slope(records, name, window=window)
        except ValueError as exc:
            lines.append(f"# {name}: not fitted ({exc})")
            continue
        lines.append(
            f"{name} {fit.slope:.17g} {fit.intercept:.17g} "
            f"{fit.window[0]} {fit.window[1]}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def run(manifest: RunManifest) -> int:
    """Execute a solve manifest; returns the process exit code."""
    try:
        text = Path(manifest.problem_path).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read problem file: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        problem = parse_problem(text, base_dir=Path(manifest.problem_path).parent)
        if manifest.theta is not None:
            problem = replace(problem, theta=manifest.theta)
        config = AdaptiveConfig()
        if manifest.max_dofs is not None:
            config = replace(config, max_dofs=manifest.max_dofs)
        if manifest.max_iterations is not None:
            config = replace(config, max_iterations=manifest.max_iterations)
        if manifest.mark_factor is not None:
            config = replace(config, mark_factor=manifest.mark_factor)
    except (ProblemFormatError, FEMError, MeshError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    out = Path(manifest.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_INVALID

    records = []
    status = None
    try:
        for state in adapt_steps(problem, config):
            records.append(state.record)
            status = state.status
            if manifest.emit_meshes:
                write_mesh(state.mesh, out / f"mesh_{state.iteration:05d}.txt")
    except SolverError as exc:
        print(f"error: solver failed: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except MeshError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    _write_history(records, out / "history.csv")
    _write_plot_data(records, out / "plot.dat")
    _write_slopes(records, manifest.fit_window, out / "slopes.txt",
                  with_errors=problem.exact is not None)
    print(
        f"{len(records)} iterations, {records[-1].ndofs} unknowns, "
        f"stopped by {status.value}; output in {out}"
    )
    return EXIT_OK


def _check_mesh(path: str) -> int:
    try:
        mesh = read_mesh(path)
        validate_mesh(mesh, full=mesh.num_triangles <= 2000)
    except (MeshError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    h_min, h_max, angle = mesh_metrics(mesh)
    print(
        f"{mesh.num_vertices} vertices, {mesh.num_triangles} triangles, "
        f"area {mesh.areas.sum():.17g}, h in [{h_min:.3g}, {h_max:.3g}], "
        f"min angle {angle:.3g} deg"
    )
    return EXIT_OK


def _seminorm(path: str, s: float, tag: str) -> int:
    if tag not in SEMINORM_FUNCTIONS:
        print(
            f"error: unknown function tag {tag!r}; "
            f"choose from {', '.join(sorted(SEMINORM_FUNCTIONS))}",
            file=sys.stderr,
        )
        return EXIT_INVALID
    try:
        mesh = read_mesh(path)
        value = fractional_seminorm(SEMINORM_FUNCTIONS[tag], s, mesh=mesh)
    except (MeshError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"{value:.17g}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_fit_window(text: str):
    if text == "last-half":
        return text
    if text.startswith("last-"):
        try:
            count = int(text[len("last-"):])
            if count >= 3:
                return count
        except ValueError:
            pass
    raise UsageError(f"invalid fit window {text!r}; use last-half or last-K")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="diracfem", description=__doc__.split("\n", 1)[0])
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="run the adaptive loop on a problem file")
    solve.add_argument("problem", help="problem description file")
    solve.add_argument("--theta", type=float, default=None)
    solve.add_argument("--max-dofs", type=int, default=None)
    solve.add_argument("--max-iters", type=int, default=None)
    solve.add_argument("--mark-factor", type=float, default=None)
    solve.add_argument("--out", default="out", help="output directory (default: out)")
    solve.add_argument("--emit-meshes", action="store_true",
                       help="write one mesh file per iteration")
    solve.add_argument("--fit-window", default="last-half",
                       help="slope fit window: last-half or last-K")

    check = sub.add_parser("check-mesh", help="validate a mesh file")
    check.add_argument("mesh", help="mesh file")

    semi = sub.add_parser("seminorm", help="fractional seminorm of a tagged function")
    semi.add_argument("mesh", help="mesh file")
    semi.add_argument("s", type=float, help="fractional order in (0, 1)")
    semi.add_argument("function", help=f"one of {', '.join(sorted(SEMINORM_FUNCTIONS))}")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "solve":
            manifest = RunManifest(
                problem_path=Path(args.problem),
                out_dir=Path(args.out),
                theta=args.theta,
                max_dofs=args.max_dofs,
                max_iterations=args.max_iters,
                mark_factor=args.mark_factor,
                fit_window=_parse_fit_window(args.fit_window),
                emit_meshes=args.emit_meshes,
            )
            return run(manifest)
        if args.command == "check-mesh":
            return _check_mesh(args.mesh)
        if args.command == "seminorm":
            return _seminorm(args.mesh, args.s, args.function)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
