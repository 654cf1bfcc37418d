"""Acceptance criteria for the cube contact problem.

Each test records one verdict line; the lines are printed in the terminal
summary of every pytest run that collects this module.
"""

import functools

import numpy as np
import pytest

from conftest import cube_blocks, cube_report, cube_solution
from signorini_bem.contact_solver import (
    IterationControls,
    NitscheParameters,
    contact_form,
    contact_quadrature,
    contact_residuals,
    cube_signorini,
    monotonicity_probe,
    p_tau,
    pospart,
    surrogate_norm,
)
from signorini_bem.mesh import CONTACT
from signorini_bem.operators import calderon_residual
from signorini_bem.postprocess import ConvergenceTable, exact_traces, report_for, solve
from signorini_bem.spaces import DiscreteFunction, assembly_mesh, field_values

RESULTS: dict[int, tuple[bool, str]] = {}
LEVELS = (2, 4, 8)
SWEEP_TAUS = (1e-2, 1e-1, 1.0, 5.0, 10.0, 1e2)
CENTRE_VALUE = 4.5561  # closed-form u at (0.5, 0.5, 0.5)


def verdict(k: int, ok: bool, detail: str) -> None:
    RESULTS[k] = (bool(ok), detail)
    assert ok, detail


@functools.lru_cache(maxsize=None)
def table(flux: str) -> ConvergenceTable:
    pairing = "p1-dual0" if flux == "DUAL0" else "p1-dp0"
    return ConvergenceTable(pairing, list(LEVELS), [cube_report(n, flux) for n in LEVELS])


@functools.lru_cache(maxsize=None)
def tau_sweep():
    """Fixed-tau solves at h = 2^-2 (n = 4), maxiter 50."""
    blocks = cube_blocks(4, "DUAL0")
    data = cube_signorini()
    rows = []
    for tau in SWEEP_TAUS:
        res = solve(blocks.primal.mesh, "p1-dual0", data, NitscheParameters(tau=tau), IterationControls(maxiter=50),
                    blocks=blocks)  # fmt: skip
        rows.append((tau, report_for(res, data).err_V, res.report.outer_iterations))
    return rows


def _taus(values) -> str:
    return ", ".join(f"{t:g}" for t in sorted(values))


def _fmt_errors(t: ConvergenceTable) -> str:
    return ", ".join(f"{r.err_V:.4g}" for r in t.rows)


def test_criterion_01_dual_pairing_rate():
    t = table("DUAL0")
    eoc = t.eoc["err_V"]
    verdict(1, eoc >= 0.9, f"P1xDUAL0 EOC(err_V) = {eoc:.3f} (need >= 0.9); err_V = {_fmt_errors(t)}")


def test_criterion_02_dp0_pairing_rate():
    t = table("DP0")
    eoc = t.eoc["err_V"]
    verdict(2, eoc >= 1.2, f"P1xDP0 EOC(err_V) = {eoc:.3f} (need >= 1.2); err_V = {_fmt_errors(t)}")


def test_criterion_03_tau_sweep_minima():
    rows = tau_sweep()
    errs = np.array([r[1] for r in rows])
    outer = np.array([r[2] for r in rows])
    taus = np.array(SWEEP_TAUS)
    err_at = set(taus[errs == errs.min()])
    outer_at = set(taus[outer == outer.min()])
    ok = err_at <= {1.0, 5.0, 10.0} and outer_at <= {1.0, 5.0, 10.0}
    table_txt = "; ".join(f"tau={t:g}: err={e:.3g}, outer={o}" for t, e, o in rows)
    verdict(3, ok, f"min error at tau={_taus(err_at)}, min outer at tau={_taus(outer_at)} [{table_txt}]")


def test_criterion_04_fixed_point_converges():
    reports = [cube_report(n, flux) for flux in ("DUAL0", "DP0") for n in LEVELS]
    ok = all(r.converged and r.outer_iters <= 200 for r in reports)
    verdict(4, ok, "outer iterations " + ", ".join(f"{r.outer_iters}{'' if r.converged else '!'}" for r in reports))


def test_criterion_05_initial_guess_independence():
    a = cube_solution(4, "DUAL0", "zero")
    b = cube_solution(4, "DUAL0", "exact")
    diff = surrogate_norm(a.blocks, a.u.coefficients - b.u.coefficients, a.lam.coefficients - b.lam.coefficients)
    tol = IterationControls().tol
    ok = a.report.converged and b.report.converged and diff < 2 * tol
    verdict(5, ok, f"surrogate distance {diff:.4f} (need < {2 * tol})")


def test_criterion_06_pospart_identities():
    rng = np.random.default_rng(20240601)
    n = 10**6
    scale = 10.0 ** rng.uniform(-8, 8, size=(2, n))
    a, b = rng.standard_normal((2, n)) * scale
    # exercise ties and zeros explicitly
    b[:1000] = a[:1000]
    a[1000:2000] = 0.0
    d = pospart(a) - pospart(b)
    lhs1, rhs1 = d * d, d * (a - b)
    ok1 = lhs1 <= rhs1 + 4 * np.spacing(np.abs(rhs1))
    ok2 = np.abs(d) <= np.abs(a - b) + 4 * np.spacing(np.abs(a - b))
    bad = int((~ok1).sum() + (~ok2).sum())
    verdict(6, bad == 0, f"{n} pairs, {bad} violations of the two inequalities (4 ulp slack)")


def test_criterion_07_residual_equivalence():
    data = cube_signorini()
    rng = np.random.default_rng(7)
    worst = 0.0
    for flux in ("DP0", "DUAL0"):
        blocks = cube_blocks(2, flux)
        asm = assembly_mesh(blocks.primal, blocks.flux)
        tris = np.repeat(np.flatnonzero(asm.bc_tags == CONTACT), 10)
        bary = rng.dirichlet(np.ones(3), size=len(tris))
        for tau in (1e-2, 1.0, 1e2):
            u = DiscreteFunction(blocks.primal, 10 * rng.standard_normal(blocks.n_primal))
            lam = DiscreteFunction(blocks.flux, 10 * rng.standard_normal(blocks.n_flux))
            vals = [field_values(f, asm, tris, bary) for f in (u, lam, data.g_C, data.psi_C)]
            r1, r2 = contact_residuals(*vals, tau)
            scale = np.maximum.reduce([np.abs(r1), np.abs(r2), np.abs(vals[0] - vals[2]), np.abs(vals[1] - vals[3]) / tau])
            worst = max(worst, float(np.max(np.abs(r1 - r2) / scale)))
    verdict(7, worst <= 1e-12, f"max relative |R1 - R2| = {worst:.2e} (need <= 1e-12)")


def test_criterion_08_monotonicity_probe():
    blocks = cube_blocks(2, "DUAL0")
    data = cube_signorini()
    params = NitscheParameters()
    quad = contact_quadrature(blocks, data)
    tau = params.tau_for(np.sqrt(2) / 2)
    rng = np.random.default_rng(8)
    worst = np.inf
    for _ in range(50):
        s1, s2 = 10.0 ** rng.uniform(-2, 2, size=2)
        x1 = (s1 * rng.standard_normal(blocks.n_primal), s1 * rng.standard_normal(blocks.n_flux))
        x2 = (s2 * rng.standard_normal(blocks.n_primal), s2 * rng.standard_normal(blocks.n_flux))
        probe = monotonicity_probe(blocks, data, params, x1, x2, tau=tau, quad=quad)
        d = (x1[0] - x2[0], x1[1] - x2[1])
        diff = contact_form(blocks, quad, tau, *x1, *d) - contact_form(blocks, quad, tau, *x2, *d)
        jump = quad.eval_flux @ d[1] + pospart(p_tau(quad, *x1, tau)) - pospart(p_tau(quad, *x2, tau))
        scale = abs(diff) + float(quad.weights @ jump**2) / tau
        worst = min(worst, probe / scale)
    verdict(8, worst >= -1e-10, f"min probe / scale over 50 pairs = {worst:.3e} (need >= -1e-10)")


def test_criterion_09_calderon_decay():
    data = cube_signorini()
    ok, parts = True, []
    for flux in ("DUAL0", "DP0"):
        res = []
        for n in (1, 2, 4, 8):
            blocks = cube_blocks(n, flux)
            res.append(calderon_residual(blocks, *exact_traces(blocks, data)))
        ok &= all(b < a for a, b in zip(res, res[1:]))
        parts.append(f"{flux}: " + ", ".join(f"{r:.3g}" for r in res))
    verdict(9, ok, "relative Calderon residual n=1,2,4,8 " + "; ".join(parts))


def test_criterion_10_operator_structure():
    worst_sym = worst_w1 = worst_kp = 0.0
    min_eig = np.inf
    for flux in ("DUAL0", "DP0"):
        for n in (1, 2, 4):
            b = cube_blocks(n, flux)
            worst_sym = max(worst_sym, np.abs(b.V - b.V.T).max() / np.abs(b.V).max())
            min_eig = min(min_eig, np.linalg.eigvalsh(b.V).min())
            worst_w1 = max(worst_w1, np.abs(b.W @ np.ones(b.n_primal)).max())
            worst_kp = max(worst_kp, np.abs(b.Kp - b.K.T).max())
    ok = worst_sym <= 1e-10 and min_eig > 0 and worst_w1 <= 1e-10 and worst_kp <= 1e-12
    verdict(10, ok, f"V asym {worst_sym:.1e}, min eig(V) {min_eig:.2e}, |W 1| {worst_w1:.1e}, |K' - K^T| {worst_kp:.1e}")


def test_criterion_11_interior_reconstruction():
    e4 = cube_report(4, "DUAL0").interior_errors[0] / CENTRE_VALUE
    e8 = cube_report(8, "DUAL0").interior_errors[0] / CENTRE_VALUE
    ok = cube_report(8, "DUAL0").converged and e8 < 0.1 and e8 < e4
    verdict(11, ok, f"relative error at the centre: n=4 {e4:.4f}, n=8 {e8:.4f} (need n=8 < 0.1 and < n=4)")


@pytest.mark.xfail(strict=True, reason="DUAL0 inner counts grow about 2.8x from n=2 to n=8 under tau = 0.5/h; "
                   "see the decisions ledger")  # fmt: skip
def test_criterion_12_preconditioner_trend():
    dual = [cube_report(n, "DUAL0").avg_inner_iters for n in LEVELS]
    dp0 = [cube_report(n, "DP0").avg_inner_iters for n in LEVELS]
    growth = dual[-1] / dual[0]
    lower = all(a < b for a, b in zip(dual, dp0))
    detail = (f"avg inner DUAL0 {', '.join(f'{x:.1f}' for x in dual)} (growth {growth:.2f}x, need < 2); "
              f"DP0 {', '.join(f'{x:.1f}' for x in dp0)} (DUAL0 lower: {lower})")  # fmt: skip
    verdict(12, growth < 2 and lower, detail)
