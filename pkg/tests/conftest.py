import functools

import pytest

from signorini_bem.mesh import generate_cube_mesh
from signorini_bem.operators import assemble_blocks
from signorini_bem.spaces import build_space


@functools.lru_cache(maxsize=None)
def cube_blocks(n: int, flux: str = "DUAL0"):
    """Assembled operators on the cube mesh, shared across test modules."""
    mesh = generate_cube_mesh(n)
    return assemble_blocks(build_space(mesh, "P1"), build_space(mesh, flux))


@pytest.fixture
def blocks_factory():
    return cube_blocks


@functools.lru_cache(maxsize=None)
def cube_solution(n: int, flux: str = "DUAL0", initial: str = "zero"):
    """Default-parameter solve of the cube contact problem (cached)."""
    from signorini_bem.contact_solver import cube_signorini
    from signorini_bem.postprocess import solve

    blocks = cube_blocks(n, flux)
    pairing = "p1-dual0" if flux == "DUAL0" else "p1-dp0"
    return solve(blocks.primal.mesh, pairing, cube_signorini(), initial=initial, blocks=blocks)


@functools.lru_cache(maxsize=None)
def cube_report(n: int, flux: str = "DUAL0"):
    from signorini_bem.contact_solver import cube_signorini
    from signorini_bem.postprocess import report_for

    return report_for(cube_solution(n, flux), cube_signorini(), interior_points=[(0.5, 0.5, 0.5)])


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        ok, detail = results[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
