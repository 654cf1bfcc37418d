"""Interior reconstruction, error measurement, EOC fits and the two
experiment drivers (convergence study and tau sweep)."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .contact_solver import (
    ContactSystem,
    InnerSolveError,
    IterationControls,
    NitscheParameters,
    ProblemData,
    SolveReport,
    fixed_point_solve,
    p_tau,
    surrogate_norm,
)
from .mesh import SurfaceMesh, generate_cube_mesh, mesh_size
from .operators import FOUR_PI, OperatorBlocks, QuadratureOrders, assemble_blocks
from .quadrature import gauss_triangle
from .spaces import DiscreteFunction, SpaceKind, assembly_mesh, build_space, interpolate, representation

log = logging.getLogger(__name__)

PAIRINGS = {"p1-dual0": SpaceKind.DUAL0, "p1-dp0": SpaceKind.DP0}


def point_surface_distance(points, mesh: SurfaceMesh) -> np.ndarray:
    """Exact Euclidean distance from each point to the triangulated surface."""
    P = np.atleast_2d(np.asarray(points, float))
    c = mesh.corners
    a, b, cc = c[:, 0], c[:, 1], c[:, 2]
    n = mesh.normals
    out = np.empty(len(P))
    for k, p in enumerate(P):
        d_plane = np.einsum("ij,ij->i", p - a, n)
        proj = p - d_plane[:, None] * n
        inside = np.ones(len(a), bool)
        for u, v in ((a, b), (b, cc), (cc, a)):
            inside &= np.einsum("ij,ij->i", np.cross(v - u, proj - u), n) >= 0
        best = np.where(inside, np.abs(d_plane), np.inf)
        for u, v in ((a, b), (b, cc), (cc, a)):
            e = v - u
            t = np.clip(np.einsum("ij,ij->i", p - u, e) / np.einsum("ij,ij->i", e, e), 0.0, 1.0)
            best = np.minimum(best, np.linalg.norm(p - (u + t[:, None] * e), axis=1))
        out[k] = best.min()
    return out


def evaluate_interior(u_h: DiscreteFunction, lam_h: DiscreteFunction, points, degree: int = 6, margin=None):
    """Representation formula u(x) = -K[u_h](x) + V[lam_h](x).

    Returns ``(values, ok)``. Points closer to the surface than ``margin``
    (default: one coarse panel diameter) are flagged and get NaN.
    """
    asm = assembly_mesh(u_h.space, lam_h.space)
    P = np.atleast_2d(np.asarray(points, float))
    if margin is None:
        margin = float(u_h.space.mesh.diameters.max())
    ok = point_surface_distance(P, u_h.space.mesh) > margin
    rule = gauss_triangle(degree)
    y = np.einsum("qk,tkd->tqd", rule.points, asm.corners)
    w = rule.weights[None, :] * 2 * asm.areas[:, None]
    u_asm = u_h.on_assembly(asm)
    u_q = np.einsum("qk,tk->tq", rule.points, u_asm[asm.triangles])
    lam_q = lam_h.on_assembly(asm)[:, None]
    values = np.full(len(P), np.nan)
    for k in np.flatnonzero(ok):
        d = P[k] - y
        r = np.linalg.norm(d, axis=2)
        dl = np.einsum("tqd,td->tq", d, asm.normals) / r**3
        values[k] = np.sum(w * (lam_q / r - u_q * dl)) / FOUR_PI
    return values, ok


@dataclass
class ErrorReport:
    h: float
    dofs: int
    err_V: float
    err_L2_u: float
    err_L2_lambda: float
    interior_points: list = field(default_factory=list)
    interior_errors: list = field(default_factory=list)
    active_area: float = float("nan")
    complementarity: float = float("nan")
    tau: float = float("nan")
    outer_iters: int = 0
    avg_inner_iters: float = 0.0
    converged: bool = True


def error_norms(u_h: DiscreteFunction, lam_h: DiscreteFunction, exact_u, exact_lambda, blocks: OperatorBlocks,
                interior_points=()) -> ErrorReport:  # fmt: skip
    """Errors against the interpolants of the exact traces.

    ``exact_u`` maps points (n, 3) to values; ``exact_lambda`` is a surface
    field of points and normals.
    """
    iu = interpolate(blocks.primal, lambda p, n: exact_u(p)).coefficients
    il = interpolate(blocks.flux, exact_lambda).coefficients
    eu = u_h.coefficients - iu
    el = lam_h.coefficients - il
    report = ErrorReport(
        h=mesh_size(blocks.primal.mesh),
        dofs=blocks.size,
        err_V=surrogate_norm(blocks, eu, el),
        err_L2_u=float(math.sqrt(max(eu @ (blocks.M("p", "p") @ eu), 0.0))),
        err_L2_lambda=float(math.sqrt(max(el @ (blocks.M("f", "f") @ el), 0.0))),
    )
    if len(interior_points):
        pts = np.atleast_2d(np.asarray(interior_points, float))
        vals, _ = evaluate_interior(u_h, lam_h, pts)
        report.interior_points = [list(map(float, p)) for p in pts]
        report.interior_errors = list(np.abs(vals - exact_u(pts)).astype(float))
    return report


def contact_diagnostics(system: ContactSystem, u, lam):
    """(active area {P > 0} on the contact boundary, integral of
    (lam - psi)(u - g) over the contact boundary)."""
    q = system.quad
    active = p_tau(q, u, lam, system.tau) > 0
    comp = (q.eval_flux @ lam - q.psi) * (q.eval_primal @ u - q.g)
    return float(q.weights[active].sum()), float(q.weights @ comp)


def fit_eoc(h, err):
    """Least-squares slope of log(err) against log(h) and the RMS residual
    of the fit."""
    h = np.asarray(h, float)
    err = np.asarray(err, float)
    if len(h) < 2:
        raise ValueError("need at least two levels for an EOC fit")
    if np.any(err <= 0) or np.any(h <= 0):
        raise ValueError("errors and mesh sizes must be positive")
    X = np.log(h)
    Y = np.log(err)
    (slope, icpt), *_ = np.linalg.lstsq(np.column_stack([X, np.ones_like(X)]), Y, rcond=None)
    resid = Y - (slope * X + icpt)
    return float(slope), float(np.sqrt(np.mean(resid**2)))


@dataclass
class SolveResult:
    blocks: OperatorBlocks
    system: ContactSystem
    u: DiscreteFunction
    lam: DiscreteFunction
    report: object
    error: str | None = None


def exact_traces(blocks: OperatorBlocks, data: ProblemData):
    u = interpolate(blocks.primal, lambda p, n: data.exact_u(p))
    lam = interpolate(blocks.flux, data.exact_lambda)
    return u.coefficients, lam.coefficients


def solve(mesh: SurfaceMesh, pairing: str, data: ProblemData, params=NitscheParameters(),
          controls=IterationControls(), orders=QuadratureOrders(), initial: str = "zero",
          blocks: OperatorBlocks | None = None) -> SolveResult:  # fmt: skip
    """Assemble (unless blocks are given) and run the fixed-point solver.

    ``initial`` is ``"zero"`` or ``"exact"`` (interpolated exact traces).
    Inner solver failures are caught and recorded in ``error``.
    """
    if pairing not in PAIRINGS:
        raise ValueError(f"pairing must be one of {sorted(PAIRINGS)}, got {pairing!r}")
    if blocks is None:
        blocks = assemble_blocks(build_space(mesh, "P1"), build_space(mesh, PAIRINGS[pairing]), orders)
    system = ContactSystem.build(blocks, data, params)
    u0 = lam0 = None
    if initial == "exact":
        u0, lam0 = exact_traces(blocks, data)
    elif initial != "zero":
        raise ValueError("initial guess must be 'zero' or 'exact'")
    error = None
    try:
        u, lam, report = fixed_point_solve(blocks, data, params, controls, u0, lam0, system=system)
    except InnerSolveError as exc:
        log.error("%s", exc)
        error = str(exc)
        u, lam = np.zeros(blocks.n_primal), np.zeros(blocks.n_flux)
        report = SolveReport(tau=system.tau)
    return SolveResult(blocks, system, DiscreteFunction(blocks.primal, u), DiscreteFunction(blocks.flux, lam),
                       report, error)  # fmt: skip


def report_for(result: SolveResult, data: ProblemData, interior_points=()) -> ErrorReport:
    rep = error_norms(result.u, result.lam, data.exact_u, data.exact_lambda, result.blocks, interior_points)
    rep.active_area, rep.complementarity = contact_diagnostics(
        result.system, result.u.coefficients, result.lam.coefficients
    )
    rep.tau = result.system.tau
    rep.outer_iters = result.report.outer_iterations
    rep.avg_inner_iters = result.report.average_inner_iterations
    rep.converged = result.report.converged and result.error is None
    return rep


@dataclass
class ConvergenceTable:
    pairing: str
    levels: list
    rows: list
    eoc: dict = field(default_factory=dict)
    eoc_residual: dict = field(default_factory=dict)

    COLUMNS = ("err_V", "err_L2_u", "err_L2_lambda")

    def __post_init__(self):
        hs = [r.h for r in self.rows]
        if any(b >= a for a, b in zip(hs, hs[1:])):
            raise ValueError("refinement sequence must be strictly decreasing in h")
        if len(self.rows) >= 2:
            for col in self.COLUMNS:
                errs = [getattr(r, col) for r in self.rows]
                if all(e > 0 for e in errs):
                    self.eoc[col], self.eoc_residual[col] = fit_eoc(hs, errs)

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.rows)

    def running_eoc(self):
        out = [float("nan")]
        for a, b in zip(self.rows, self.rows[1:]):
            out.append(math.log(b.err_V / a.err_V) / math.log(b.h / a.h))
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["h", "dofs", "err_V", "err_L2_u", "err_L2_lambda", "eoc_running", "outer_iters",
                        "avg_inner_iters"])  # fmt: skip
            for r, eoc in zip(self.rows, self.running_eoc()):
                w.writerow([_fmt(r.h), r.dofs, _fmt(r.err_V), _fmt(r.err_L2_u), _fmt(r.err_L2_lambda), _fmt(eoc),
                            r.outer_iters, _fmt(r.avg_inner_iters)])  # fmt: skip


def _fmt(x) -> str:
    return "nan" if x != x else f"{x:.10g}"


def run_convergence_study(data: ProblemData, pairing: str, levels, params=NitscheParameters(),
                          controls=IterationControls(), orders=QuadratureOrders(),
                          interior_points=((0.5, 0.5, 0.5),)) -> ConvergenceTable:  # fmt: skip
    """Solve on cube meshes with n segments per edge for each n in ``levels``."""
    levels = sorted(int(n) for n in levels)
    if len(levels) < 2:
        raise ValueError("a convergence study needs at least two levels")
    rows = []
    for n in levels:
        start = time.perf_counter()
        result = solve(generate_cube_mesh(n), pairing, data, params, controls, orders)
        rows.append(report_for(result, data, interior_points))
        log.info("n=%d tau=%.4g err_V=%.4g outer=%d (%.1fs)", n, rows[-1].tau, rows[-1].err_V,
                 rows[-1].outer_iters, time.perf_counter() - start)  # fmt: skip
    return ConvergenceTable(pairing, levels, rows)


@dataclass
class SweepRow:
    tau: float
    err_V: float
    outer_iters: int
    avg_inner_iters: float
    converged: bool


def run_tau_sweep(data: ProblemData, pairing: str, taus, n: int = 4, params=NitscheParameters(),
                  controls=IterationControls(maxiter=50), orders=QuadratureOrders()) -> list:  # fmt: skip
    """One solve per fixed tau on the cube mesh with n segments per edge;
    operators are assembled once."""
    taus = [float(t) for t in taus]
    if any(not t > 0 for t in taus):
        raise ValueError("tau values must be positive")
    mesh = generate_cube_mesh(n)
    blocks = assemble_blocks(build_space(mesh, "P1"), build_space(mesh, PAIRINGS[pairing]), orders)
    rows = []
    for tau in taus:
        p = NitscheParameters(params.beta_D, tau, params.tau_c, params.quad_degree)
        result = solve(mesh, pairing, data, p, controls, orders, blocks=blocks)
        rep = report_for(result, data)
        rows.append(SweepRow(tau, rep.err_V, rep.outer_iters, rep.avg_inner_iters, rep.converged))
    return rows


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau", "err_V", "outer_iters", "avg_inner_iters"])
        for r in rows:
            w.writerow([_fmt(r.tau), _fmt(r.err_V), r.outer_iters, _fmt(r.avg_inner_iters)])


def export_vtk(path, result: SolveResult) -> None:
    """Legacy ASCII VTK polydata on the assembly mesh: u as point data,
    lambda and the active-set indicator as cell data."""
    blocks = result.blocks
    asm = assembly_mesh(blocks.primal, blocks.flux)
    u = representation(blocks.primal, asm) @ result.u.coefficients
    lam = representation(blocks.flux, asm) @ result.lam.coefficients
    active = np.zeros(asm.n_triangles)
    q = result.system.quad
    P = p_tau(q, result.u.coefficients, result.lam.coefficients, result.system.tau)
    contact = np.flatnonzero(asm.bc_tags == 1)
    nq = len(P) // max(len(contact), 1)
    if len(contact):
        active[contact] = (P.reshape(len(contact), nq).mean(axis=1) > 0).astype(float)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nsignorini-bem solution\nASCII\nDATASET POLYDATA\n")
        fh.write(f"POINTS {asm.n_vertices} double\n")
        for p in asm.vertices:
            fh.write(f"{p[0]!r} {p[1]!r} {p[2]!r}\n")
        fh.write(f"POLYGONS {asm.n_triangles} {4 * asm.n_triangles}\n")
        for t in asm.triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")
        fh.write(f"POINT_DATA {asm.n_vertices}\nSCALARS u double 1\nLOOKUP_TABLE default\n")
        fh.write("\n".join(repr(float(v)) for v in u) + "\n")
        fh.write(f"CELL_DATA {asm.n_triangles}\nSCALARS lambda double 1\nLOOKUP_TABLE default\n")
        fh.write("\n".join(repr(float(v)) for v in lam) + "\n")
        fh.write("SCALARS active double 1\nLOOKUP_TABLE default\n")
        fh.write("\n".join(repr(float(v)) for v in active) + "\n")


def report_dict(rep: ErrorReport) -> dict:
    return asdict(rep)
