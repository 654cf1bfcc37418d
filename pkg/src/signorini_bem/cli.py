"""Command-line drivers: ``solve``, ``sweep-tau`` and ``convergence``.

Configuration comes from an optional flat ``key = value`` file and from
flags; flags win. Every run writes its CSV artifacts plus ``manifest.json``
into the output directory. The exit status is 0 iff every solve converged.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .contact_solver import IterationControls, NitscheParameters, ProblemData, cube_signorini
from .mesh import MeshError, generate_cube_mesh, load_mesh, mesh_size
from .operators import QuadratureOrders, assemble_blocks, load_blocks, save_blocks
from .postprocess import (
    PAIRINGS,
    export_vtk,
    report_dict,
    report_for,
    run_convergence_study,
    run_tau_sweep,
    solve,
    write_sweep_csv,
)
from .spaces import build_space, load_coefficients, save_coefficients

log = logging.getLogger("signorini_bem")

COMMANDS = ("solve", "sweep-tau", "convergence")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str = "solve"
    problem: str = "cube-signorini"
    mesh_n: int = 4
    mesh_file: str = ""
    orientation: str = "reject"
    pairing: str = "p1-dual0"
    beta_d: float = 0.01
    tau: float | None = None
    tau_rule: str = "c/h:0.5"
    tol: float = 0.05
    maxiter: int = 200
    initial: str = "zero"
    levels: int = 3
    taus: list = field(default_factory=lambda: [0.01, 0.1, 1.0, 5.0, 10.0, 100.0])
    q_disjoint: int = 4
    q_vertex: int = 5
    q_edge: int = 8
    q_coincident: int = 8
    contact_degree: int = 6
    inner_rtol: float = 1e-8
    restart: int = 200
    inner_maxiter: int = 5000
    warm_start: bool = False
    g_d_file: str = ""
    g_c_file: str = ""
    psi_c_file: str = ""
    blocks_in: str = ""
    blocks_out: str = ""
    out: str = "out"
    threads: int = 1
    seed: int = 0

    @property
    def tau_c(self) -> float:
        return _parse_tau_rule(self.tau_rule)

    def nitsche(self) -> NitscheParameters:
        return NitscheParameters(self.beta_d, self.tau, self.tau_c, self.contact_degree)

    def controls(self) -> IterationControls:
        return IterationControls(self.tol, self.maxiter, self.inner_rtol, self.restart, self.inner_maxiter,
                                 self.warm_start)  # fmt: skip

    def orders(self) -> QuadratureOrders:
        return QuadratureOrders(self.q_disjoint, self.q_vertex, self.q_edge, self.q_coincident)

    def level_sizes(self) -> list:
        """Segments per edge for the convergence study: 2, 4, 8, ..."""
        return [2 ** (k + 1) for k in range(self.levels)]


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _parse_tau_rule(text: str) -> float:
    kind, _, value = text.partition(":")
    if kind.strip() != "c/h" or not value:
        raise ConfigError(f"tau_rule must look like 'c/h:<constant>', got {text!r}")
    try:
        c = float(value)
    except ValueError:
        raise ConfigError(f"tau_rule constant is not a number: {value!r}") from None
    if not c > 0:
        raise ConfigError("tau_rule constant must be positive")
    return c


def _convert(key: str, raw):
    default = _FIELDS[key].default
    if _FIELDS[key].default_factory is not dataclasses.MISSING:
        default = _FIELDS[key].default_factory()
    try:
        if key == "tau":
            return None if str(raw).strip().lower() in ("", "none", "rule") else float(raw)
        if isinstance(default, bool):
            text = str(raw).strip().lower()
            if text not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return text in ("true", "1", "yes")
        if isinstance(default, list):
            items = raw if isinstance(raw, list) else str(raw).replace(",", " ").split()
            return [float(x) for x in items]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return str(raw).strip()
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {raw!r} as {type(default).__name__}") from None


def read_config_file(path) -> dict:
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key = key.strip().replace("-", "_")
            if key not in _FIELDS or key == "command":
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = value.strip()
    return values


def validate(cfg: RunConfig) -> RunConfig:
    checks = [
        (cfg.command in COMMANDS, "command", f"must be one of {COMMANDS}"),
        (cfg.problem in ("cube-signorini", "custom"), "problem", "must be 'cube-signorini' or 'custom'"),
        (cfg.mesh_n >= 1, "mesh_n", "must be at least 1"),
        (cfg.pairing in PAIRINGS, "pairing", f"must be one of {sorted(PAIRINGS)}"),
        (cfg.beta_d >= 0, "beta_d", "must be nonnegative"),
        (cfg.tau is None or cfg.tau > 0, "tau", "must be positive"),
        (cfg.tol > 0, "tol", "must be positive"),
        (cfg.maxiter >= 1, "maxiter", "must be at least 1"),
        (cfg.initial in ("zero", "exact"), "initial", "must be 'zero' or 'exact'"),
        (cfg.levels >= 2, "levels", "must be at least 2"),
        (len(cfg.taus) > 0 and all(t > 0 for t in cfg.taus), "taus", "must be a nonempty list of positive values"),
        (all(q >= 1 for q in (cfg.q_disjoint, cfg.q_vertex, cfg.q_edge, cfg.q_coincident)), "q_*",
         "quadrature orders must be at least 1"),
        (cfg.contact_degree >= 1, "contact_degree", "must be at least 1"),
        (cfg.inner_rtol > 0, "inner_rtol", "must be positive"),
        (cfg.restart >= 1, "restart", "must be at least 1"),
        (cfg.inner_maxiter >= 1, "inner_maxiter", "must be at least 1"),
        (cfg.threads >= 1, "threads", "must be at least 1"),
        (cfg.orientation in ("reject", "flip"), "orientation", "must be 'reject' or 'flip'"),
    ]  # fmt: skip
    for ok, key, msg in checks:
        if not ok:
            raise ConfigError(f"{key} {msg}")
    _parse_tau_rule(cfg.tau_rule)
    if cfg.problem == "custom":
        if cfg.command != "solve":
            raise ConfigError("problem: custom data has no exact solution; only 'solve' is supported")
        missing = [k for k in ("mesh_file", "g_d_file", "g_c_file", "psi_c_file") if not getattr(cfg, k)]
        if missing:
            raise ConfigError(f"{missing[0]}: required for problem = custom")
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="signorini-bem", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' file; flags override it")
    common.add_argument("--problem", choices=["cube-signorini", "custom"])
    common.add_argument("--mesh-n", type=int, help="segments per cube edge")
    common.add_argument("--mesh-file", help="surface mesh file (custom problems)")
    common.add_argument("--pairing", choices=sorted(PAIRINGS))
    common.add_argument("--beta-d", type=float)
    tau = common.add_mutually_exclusive_group()
    tau.add_argument("--tau", type=float, help="fixed contact parameter")
    tau.add_argument("--tau-rule", help="h-dependent rule 'c/h:<constant>'")
    common.add_argument("--tol", type=float)
    common.add_argument("--maxiter", type=int)
    common.add_argument("--initial", choices=["zero", "exact"])
    common.add_argument("--inner-rtol", type=float)
    common.add_argument("--restart", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--blocks-in", help="read dense operators from a block dump")
    common.add_argument("--blocks-out", help="write dense operators to a block dump")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="single solve")
    sweep = sub.add_parser("sweep-tau", parents=[common], help="error and iteration counts over tau")
    sweep.add_argument("--taus", nargs="+", type=float)
    conv = sub.add_parser("convergence", parents=[common], help="refinement study with EOC fit")
    conv.add_argument("--levels", type=int, help="number of levels n = 2, 4, 8, ...")
    return parser


def parse_config(argv=None) -> tuple[RunConfig, bool]:
    """Parse flags (and the config file they name). Returns (config, verbose)."""
    args = build_parser().parse_args(argv)
    values = read_config_file(args.config) if args.config else {}
    flags = vars(args)
    for key in list(_FIELDS):
        if flags.get(key) is not None:
            values[key] = flags[key]
    values["command"] = args.command
    cfg = RunConfig(**{k: (_convert(k, v) if k != "command" else v) for k, v in values.items()})
    return validate(cfg), bool(args.verbose)


def _load_problem(cfg: RunConfig, mesh):
    if cfg.problem == "cube-signorini":
        return cube_signorini()
    p1 = build_space(mesh, "P1")
    return ProblemData(
        load_coefficients(p1, cfg.g_d_file),
        load_coefficients(p1, cfg.g_c_file),
        load_coefficients(p1, cfg.psi_c_file),
        name="custom",
    )


def _mesh_stats(mesh) -> dict:
    return {"vertices": mesh.n_vertices, "triangles": mesh.n_triangles, "h": mesh_size(mesh)}


def _run_solve(cfg: RunConfig, out: Path, manifest: dict) -> bool:
    mesh = load_mesh(cfg.mesh_file, orientation=cfg.orientation) if cfg.mesh_file else generate_cube_mesh(cfg.mesh_n)
    data = _load_problem(cfg, mesh)
    primal, flux = build_space(mesh, "P1"), build_space(mesh, PAIRINGS[cfg.pairing])
    t0 = time.perf_counter()
    blocks = load_blocks(cfg.blocks_in, primal, flux) if cfg.blocks_in else assemble_blocks(primal, flux, cfg.orders())
    manifest["timings"]["assembly_s"] = time.perf_counter() - t0
    if cfg.blocks_out:
        save_blocks(blocks, cfg.blocks_out)
    initial = cfg.initial if data.exact_u is not None else "zero"
    result = solve(mesh, cfg.pairing, data, cfg.nitsche(), cfg.controls(), cfg.orders(), initial, blocks=blocks)
    rep = result.report
    manifest["mesh"] = _mesh_stats(mesh)
    manifest["tau"] = result.system.tau
    manifest["timings"]["solve_s"] = rep.wall_time
    manifest["result"] = {
        "converged": rep.converged and result.error is None,
        "outer_iterations": rep.outer_iterations,
        "inner_iterations": rep.inner_iterations,
        "avg_inner_iterations": rep.average_inner_iterations,
        "update_norms": rep.update_norms,
        "error": result.error,
    }
    if data.exact_u is not None:
        manifest["errors"] = report_dict(report_for(result, data, [(0.5, 0.5, 0.5)]))
    save_coefficients(result.u, out / "u.csv")
    save_coefficients(result.lam, out / "lambda.csv")
    with open(out / "iterations.csv", "w") as fh:
        fh.write("outer,inner_iters,update_norm\n")
        for k, (ni, dn) in enumerate(zip(rep.inner_iterations, rep.update_norms), start=1):
            fh.write(f"{k},{ni},{dn:.10g}\n")
    export_vtk(out / "solution.vtk", result)
    return manifest["result"]["converged"]


def _run_sweep(cfg: RunConfig, out: Path, manifest: dict) -> bool:
    rows = run_tau_sweep(cube_signorini(), cfg.pairing, cfg.taus, cfg.mesh_n, cfg.nitsche(), cfg.controls(),
                         cfg.orders())  # fmt: skip
    write_sweep_csv(rows, out / "tau_sweep.csv")
    mesh = generate_cube_mesh(cfg.mesh_n)
    manifest["mesh"] = _mesh_stats(mesh)
    manifest["rows"] = [dataclasses.asdict(r) for r in rows]
    return all(r.converged for r in rows)


def _run_convergence(cfg: RunConfig, out: Path, manifest: dict) -> bool:
    sizes = cfg.level_sizes()
    table = run_convergence_study(cube_signorini(), cfg.pairing, sizes, cfg.nitsche(), cfg.controls(), cfg.orders())
    table.write_csv(out / "convergence.csv")
    manifest["levels"] = [
        {"n": n, "h": r.h, "tau": r.tau, "converged": r.converged, "err_V": r.err_V, "outer_iters": r.outer_iters,
         "avg_inner_iters": r.avg_inner_iters, "interior_errors": r.interior_errors, "active_area": r.active_area}
        for n, r in zip(sizes, table.rows)
    ]  # fmt: skip
    manifest["eoc"] = table.eoc
    manifest["eoc_fit_residual"] = table.eoc_residual
    return table.converged


def run(cfg: RunConfig) -> int:
    """Execute a validated config. Returns the process exit status."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _set_threads(cfg.threads)
    np.random.seed(cfg.seed)
    manifest = {
        "version": __version__,
        "config": dataclasses.asdict(cfg),
        "platform": platform.platform(),
        "timings": {},
    }
    start = time.perf_counter()
    driver = {"solve": _run_solve, "sweep-tau": _run_sweep, "convergence": _run_convergence}[cfg.command]
    try:
        ok = driver(cfg, out, manifest)
    except (MeshError, OSError, ValueError) as exc:
        manifest["failure"] = str(exc)
        ok = False
        log.error("%s", exc)
    manifest["timings"]["total_s"] = time.perf_counter() - start
    manifest["converged"] = bool(ok)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=_json_default)
        fh.write("\n")
    return 0 if ok else 1


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _set_threads(n: int) -> None:
    import numba

    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def main(argv=None) -> int:
    try:
        cfg, verbose = parse_config(argv)
    except (ConfigError, OSError) as exc:
        print(f"signorini-bem: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
