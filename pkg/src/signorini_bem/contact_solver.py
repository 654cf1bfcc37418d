"""Weakly imposed Dirichlet and Signorini conditions and the fixed-point
solver.

Unknowns are stacked as ``x = (u, lam)`` with the P1 coefficients first.
Each outer step solves the linear system with the contact nonlinearity
frozen at the previous iterate::

    (A + B_D + B_C') x_{n+1} = L_D + L_C - <[P(x_n)]_+, v + mu / tau>_C

and stops once the update is small in the surrogate norm
``|(v, mu)|^2 = v.W.v + v.M.v + mu.V.mu``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import mesh_size
from .operators import OperatorBlocks, _region_mask
from .quadrature import gauss_triangle
from .spaces import DiscreteFunction, SpaceKind, SurfaceField, assembly_mesh, evaluation_matrix, field_values

log = logging.getLogger(__name__)


def pospart(x):
    """[x]_+ = max(0, x); zero counts as inactive."""
    return np.maximum(x, 0.0) + 0.0


def negpart(x):
    """[x]_- = -max(0, -x), so that pospart(x) + negpart(x) == x."""
    return np.minimum(x, 0.0) + 0.0


@dataclass(frozen=True)
class ProblemData:
    """Boundary data as closed-form fields or discrete functions.

    ``exact_u`` (points -> values) and ``exact_lambda`` (a surface field)
    are optional and only used for error measurement.
    """

    g_D: SurfaceField | DiscreteFunction
    g_C: SurfaceField | DiscreteFunction
    psi_C: SurfaceField | DiscreteFunction
    exact_u: object = None
    exact_lambda: SurfaceField | None = None
    name: str = "custom"


_S2PI = math.sqrt(2.0) * math.pi


def _u(p):
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    return np.sin(np.pi * x) * np.sin(np.pi * y) * np.sinh(_S2PI * z)


def _grad_u(p):
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    sx, sy, cx, cy = np.sin(np.pi * x), np.sin(np.pi * y), np.cos(np.pi * x), np.cos(np.pi * y)
    sh, ch = np.sinh(_S2PI * z), np.cosh(_S2PI * z)
    return np.stack([np.pi * cx * sy * sh, np.pi * sx * cy * sh, _S2PI * sx * sy * ch], axis=-1)


def _g_C(p, n):
    x, y = p[:, 0], p[:, 1]
    s = np.where(x <= 0.5, np.sin(np.pi * x), 1.0)
    return s * np.sin(np.pi * y) * math.sinh(_S2PI)


def _psi_C(p, n):
    x, y = p[:, 0], p[:, 1]
    s = np.where(x >= 0.5, np.sin(np.pi * x), 1.0)
    return _S2PI * s * np.sin(np.pi * y) * math.cosh(_S2PI)


def cube_signorini() -> ProblemData:
    """Unit-cube benchmark with exact solution
    u = sin(pi x) sin(pi y) sinh(sqrt(2) pi z); contact is active for
    x <= 1/2 on the top face."""
    return ProblemData(
        g_D=lambda p, n: np.zeros(len(p)),
        g_C=_g_C,
        psi_C=_psi_C,
        exact_u=_u,
        exact_lambda=lambda p, n: np.einsum("ij,ij->i", _grad_u(p), n),
        name="cube-signorini",
    )


@dataclass(frozen=True)
class NitscheParameters:
    """``tau`` fixes the contact parameter; otherwise ``tau = tau_c / h``."""

    beta_D: float = 0.01
    tau: float | None = None
    tau_c: float = 0.5
    quad_degree: int = 6

    def __post_init__(self):
        if not self.beta_D >= 0:
            raise ValueError("beta_D must be nonnegative")
        if self.tau is not None and not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.tau_c > 0:
            raise ValueError("tau rule constant must be positive")

    def tau_for(self, h: float) -> float:
        return float(self.tau) if self.tau is not None else self.tau_c / h


@dataclass(frozen=True)
class IterationControls:
    tol: float = 0.05
    maxiter: int = 200
    inner_rtol: float = 1e-8
    restart: int = 200
    inner_maxiter: int = 5000
    warm_start: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.maxiter < 1:
            raise ValueError("maxiter must be at least 1")
        if not self.inner_rtol > 0 or self.restart < 1 or self.inner_maxiter < 1:
            raise ValueError("invalid inner solver settings")


@dataclass
class SolveReport:
    tau: float
    outer_iterations: int = 0
    inner_iterations: list = field(default_factory=list)
    update_norms: list = field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0

    @property
    def average_inner_iterations(self) -> float:
        return float(np.mean(self.inner_iterations)) if self.inner_iterations else 0.0


class InnerSolveError(RuntimeError):
    def __init__(self, message, residual, iterations, outer_index=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.outer_index = outer_index


@dataclass
class ContactQuadrature:
    """Quadrature points on the contact part of the assembly mesh with
    evaluation matrices for both spaces and the data sampled there."""

    weights: np.ndarray
    eval_primal: sp.csr_matrix
    eval_flux: sp.csr_matrix
    g: np.ndarray
    psi: np.ndarray
    points: np.ndarray


def region_quadrature(blocks: OperatorBlocks, region: str, degree: int):
    """(triangles, barycentric points, physical weights) of a regular rule on
    every assembly triangle of a region, one row per point."""
    asm = assembly_mesh(blocks.primal, blocks.flux)
    rule = gauss_triangle(degree)
    tris = np.flatnonzero(_region_mask(asm, region))
    nq = len(rule)
    t = np.repeat(tris, nq)
    bary = np.tile(rule.points, (len(tris), 1))
    w = np.tile(rule.weights, len(tris)) * 2 * asm.areas[t]
    return t, bary, w


def contact_quadrature(blocks: OperatorBlocks, data: ProblemData, degree: int = 6) -> ContactQuadrature:
    asm = assembly_mesh(blocks.primal, blocks.flux)
    t, bary, w = region_quadrature(blocks, "contact", degree)
    return ContactQuadrature(
        w,
        evaluation_matrix(blocks.primal, asm, t, bary),
        evaluation_matrix(blocks.flux, asm, t, bary),
        field_values(data.g_C, asm, t, bary),
        field_values(data.psi_C, asm, t, bary),
        np.einsum("ij,ijk->ik", bary, asm.corners[t]),
    )


def p_tau(quad: ContactQuadrature, u, lam, tau: float) -> np.ndarray:
    """P^tau = tau (u - g) - (lam - psi) at all contact quadrature points."""
    return tau * (quad.eval_primal @ u - quad.g) - (quad.eval_flux @ lam - quad.psi)


def p_tau_at(u_h: DiscreteFunction, lam_h: DiscreteFunction, data: ProblemData, tau: float, triangle: int, bary):
    """P^tau at one point of a contact triangle of the assembly mesh."""
    asm = assembly_mesh(u_h.space, lam_h.space)
    if not _region_mask(asm, "contact")[triangle]:
        raise ValueError(f"triangle {triangle} is not on the contact boundary")
    t = np.array([triangle])
    b = np.asarray(bary, float)[None, :]
    u = field_values(u_h, asm, t, b)[0]
    lam = field_values(lam_h, asm, t, b)[0]
    g = field_values(data.g_C, asm, t, b)[0]
    psi = field_values(data.psi_C, asm, t, b)[0]
    return float(tau * (u - g) - (lam - psi))


def contact_residuals(u, lam, g, psi, tau):
    """Pointwise R1 = (g - u) + [P]_- / tau and R2 = ((psi - lam) - [P]_+) / tau."""
    P = tau * (u - g) - (lam - psi)
    return (g - u) + negpart(P) / tau, ((psi - lam) - pospart(P)) / tau


def residual_equivalence_check(u_h: DiscreteFunction, lam_h: DiscreteFunction, data: ProblemData, tau: float,
                               triangles, bary) -> float:  # fmt: skip
    """max |R1 - R2| over the sample points (assembly triangles + barycentric)."""
    asm = assembly_mesh(u_h.space, lam_h.space)
    t = np.asarray(triangles)
    b = np.asarray(bary, float)
    vals = [field_values(f, asm, t, b) for f in (u_h, lam_h, data.g_C, data.psi_C)]
    r1, r2 = contact_residuals(*vals, tau)
    return float(np.max(np.abs(r1 - r2)))


def assemble_lhs(blocks: OperatorBlocks, params: NitscheParameters, tau: float | None = None) -> np.ndarray:
    """Dense matrix of A + B_D + B_C' in (primal-test, flux-test) rows."""
    if tau is None:
        tau = params.tau_for(mesh_size(blocks.primal.mesh))
    M = blocks.M
    top_left = blocks.W + params.beta_D * M("p", "p", "dirichlet").toarray()
    top_right = blocks.Kp + (-0.5 * M("p", "f", "dirichlet") + 0.5 * M("p", "f", "contact")).toarray()
    bottom_left = -blocks.K + (0.5 * M("f", "p", "dirichlet") - 0.5 * M("f", "p", "contact")).toarray()
    bottom_right = blocks.V + M("f", "f", "contact").toarray() / tau
    return np.block([[top_left, top_right], [bottom_left, bottom_right]])


def _load(blocks, space, field_, region, degree):
    asm = assembly_mesh(blocks.primal, blocks.flux)
    t, bary, w = region_quadrature(blocks, region, degree)
    return evaluation_matrix(space, asm, t, bary).T @ (w * field_values(field_, asm, t, bary))


def linear_rhs(blocks: OperatorBlocks, data: ProblemData, params: NitscheParameters, tau: float) -> np.ndarray:
    """L_D + L_C = <g_D, beta_D v + mu>_D + <psi, v + mu / tau>_C."""
    d = params.quad_degree
    v_part = params.beta_D * _load(blocks, blocks.primal, data.g_D, "dirichlet", d)
    v_part += _load(blocks, blocks.primal, data.psi_C, "contact", d)
    mu_part = _load(blocks, blocks.flux, data.g_D, "dirichlet", d)
    mu_part += _load(blocks, blocks.flux, data.psi_C, "contact", d) / tau
    return np.concatenate([v_part, mu_part])


def nonlinear_term(quad: ContactQuadrature, u, lam, tau: float) -> np.ndarray:
    """<[P(u, lam)]_+, v + mu / tau>_C for all test functions."""
    wp = quad.weights * pospart(p_tau(quad, u, lam, tau))
    return np.concatenate([quad.eval_primal.T @ wp, quad.eval_flux.T @ wp / tau])


def assemble_rhs(blocks, data, params, u_n, lam_n, tau=None, quad=None) -> np.ndarray:
    if tau is None:
        tau = params.tau_for(mesh_size(blocks.primal.mesh))
    if quad is None:
        quad = contact_quadrature(blocks, data, params.quad_degree)
    return linear_rhs(blocks, data, params, tau) - nonlinear_term(quad, u_n, lam_n, tau)


def surrogate_norm(blocks: OperatorBlocks, v, mu) -> float:
    """sqrt(v.W.v + v.M.v + mu.V.mu)."""
    sq = v @ (blocks.W @ v) + v @ (blocks.M("p", "p") @ v) + mu @ (blocks.V @ mu)
    return float(math.sqrt(max(sq, 0.0)))


def mass_preconditioner(blocks: OperatorBlocks) -> spla.LinearOperator:
    """Block-diagonal left preconditioner built from mass pairings.

    For P1 x DUAL0 each equation is mapped to its strong form with the
    square off-role pairing: residuals tested with P1 are solved against the
    P1 x DUAL0 pairing and land in the flux slot, and vice versa. This is the
    block-diagonal strong-form preconditioner of the multitrace operator in
    (Dirichlet equation, Neumann equation) ordering; with the rows ordered
    (primal test, flux test) it sits on the anti-diagonal. For P1 x DP0 the
    off-role pairing is rectangular, so each test space's own Gram matrix is
    used on the diagonal instead.
    """
    n_p = blocks.n_primal
    if blocks.flux.kind is SpaceKind.DUAL0:
        to_flux = spla.splu(blocks.M("p", "f").tocsc())
        to_primal = spla.splu(blocks.M("f", "p").tocsc())

        def apply(r):
            r = np.asarray(r).ravel()
            return np.concatenate([to_primal.solve(r[n_p:]), to_flux.solve(r[:n_p])])

    else:
        top_lu = spla.splu(blocks.M("p", "p").tocsc())
        bottom_lu = spla.splu(blocks.M("f", "f").tocsc())

        def apply(r):
            r = np.asarray(r).ravel()
            return np.concatenate([top_lu.solve(r[:n_p]), bottom_lu.solve(r[n_p:])])

    return spla.LinearOperator((blocks.size, blocks.size), matvec=apply, dtype=float)


def inner_solve(lhs, rhs, preconditioner=None, rtol=1e-8, restart=200, maxiter=5000, x0=None):
    """Restarted, left-preconditioned GMRES. Returns (x, iterations).

    Stops on the unpreconditioned residual relative to the right-hand side.
    Raises :class:`InnerSolveError` carrying the best residual reached.
    """
    counter = [0]

    def count(_):
        counter[0] += 1

    cycles = max(1, math.ceil(maxiter / restart))
    x, info = spla.gmres(lhs, rhs, x0=x0, rtol=rtol, atol=0.0, restart=restart, maxiter=cycles,
                         M=preconditioner, callback=count, callback_type="pr_norm")  # fmt: skip
    if info != 0:
        bnorm = np.linalg.norm(rhs)
        res = float(np.linalg.norm(rhs - lhs @ x) / (bnorm if bnorm else 1.0))
        raise InnerSolveError(f"GMRES did not converge in {counter[0]} iterations (relative residual {res:.3e})",
                              res, counter[0])  # fmt: skip
    return x, counter[0]


@dataclass
class ContactSystem:
    """Everything that stays fixed during the outer iteration."""

    blocks: OperatorBlocks
    data: ProblemData
    params: NitscheParameters
    tau: float
    lhs: np.ndarray
    rhs_linear: np.ndarray
    quad: ContactQuadrature
    preconditioner: spla.LinearOperator

    @classmethod
    def build(cls, blocks, data, params, tau=None, preconditioner=None):
        if tau is None:
            tau = params.tau_for(mesh_size(blocks.primal.mesh))
        if preconditioner is None:
            preconditioner = mass_preconditioner(blocks)
        return cls(blocks, data, params, tau, assemble_lhs(blocks, params, tau),
                   linear_rhs(blocks, data, params, tau),
                   contact_quadrature(blocks, data, params.quad_degree), preconditioner)  # fmt: skip

    def rhs(self, u, lam):
        return self.rhs_linear - nonlinear_term(self.quad, u, lam, self.tau)

    def residual(self, u, lam):
        """Residual of the full nonlinear system at (u, lam)."""
        return self.lhs @ np.concatenate([u, lam]) - self.rhs(u, lam)


def fixed_point_solve(blocks, data, params=NitscheParameters(), controls=IterationControls(), u0=None, lam0=None,
                      system: ContactSystem | None = None):  # fmt: skip
    """Outer fixed-point loop. Returns (u, lam, SolveReport).

    Non-convergence within ``maxiter`` is reported via ``converged=False``;
    inner solver failure raises :class:`InnerSolveError` with the outer index.
    """
    start = time.perf_counter()
    if system is None:
        system = ContactSystem.build(blocks, data, params)
    u = np.zeros(blocks.n_primal) if u0 is None else np.asarray(u0, float).copy()
    lam = np.zeros(blocks.n_flux) if lam0 is None else np.asarray(lam0, float).copy()
    if u.shape != (blocks.n_primal,) or lam.shape != (blocks.n_flux,):
        raise ValueError("initial guess does not match the space dimensions")
    report = SolveReport(tau=system.tau)
    x = np.concatenate([u, lam])
    for it in range(controls.maxiter):
        try:
            x_new, n_inner = inner_solve(system.lhs, system.rhs(u, lam), system.preconditioner, controls.inner_rtol,
                                         controls.restart, controls.inner_maxiter,
                                         x0=x if controls.warm_start else None)  # fmt: skip
        except InnerSolveError as exc:
            exc.outer_index = it
            exc.args = (f"outer iteration {it}: {exc.args[0]}",)
            raise
        du, dlam = blocks.split(x_new - x)
        step = surrogate_norm(blocks, du, dlam)
        report.inner_iterations.append(n_inner)
        report.update_norms.append(step)
        report.outer_iterations = it + 1
        x = x_new
        u, lam = blocks.split(x)
        log.debug("outer %d: inner %d, update %.3e", it + 1, n_inner, step)
        if step < controls.tol:
            report.converged = True
            break
    report.wall_time = time.perf_counter() - start
    return u, lam, report


def contact_form(blocks: OperatorBlocks, quad: ContactQuadrature, tau: float, v, mu, dv, dmu) -> float:
    """Full nonlinear contact form B_C[(v, mu), (dv, dmu)] by quadrature."""
    vq, muq = quad.eval_primal @ v, quad.eval_flux @ mu
    dvq, dmuq = quad.eval_primal @ dv, quad.eval_flux @ dmu
    P = tau * (vq - quad.g) - (muq - quad.psi)
    integrand = 0.5 * muq * dvq + (muq / tau - 0.5 * vq) * dmuq + pospart(P) * (dvq + dmuq / tau)
    return float(quad.weights @ integrand)


def monotonicity_probe(blocks, data, params, pair1, pair2, tau=None, quad=None) -> float:
    """B_C[x1, d] - B_C[x2, d] - |mu - eta + [P(x1)]_+ - [P(x2)]_+|^2 / tau
    with d = x1 - x2, which is nonnegative for every tau > 0."""
    if tau is None:
        tau = params.tau_for(mesh_size(blocks.primal.mesh))
    if quad is None:
        quad = contact_quadrature(blocks, data, params.quad_degree)
    (v, mu), (w, eta) = pair1, pair2
    dv, dmu = v - w, mu - eta
    diff = contact_form(blocks, quad, tau, v, mu, dv, dmu) - contact_form(blocks, quad, tau, w, eta, dv, dmu)
    jump = (quad.eval_flux @ dmu) + pospart(p_tau(quad, v, mu, tau)) - pospart(p_tau(quad, w, eta, tau))
    return diff - float(quad.weights @ jump**2) / tau
