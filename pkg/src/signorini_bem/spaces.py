"""Discrete trace spaces P1, DP0 and DUAL0.

Every space can be represented on an *assembly mesh*: the mesh itself for
P1 and DP0, or its barycentric refinement whenever a DUAL0 space takes part.
On the assembly mesh P1 functions are vertex-based piecewise linears and
DP0/DUAL0 functions are triangle-wise constants; ``representation`` returns
the sparse matrix taking space coefficients to those assembly coefficients.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .mesh import DualGrid, SurfaceMesh, barycentric_refine, build_dual_grid

# f(points (n, 3), unit normals (n, 3)) -> values (n,)
SurfaceField = Callable[[np.ndarray, np.ndarray], np.ndarray]


class SpaceKind(enum.Enum):
    P1 = "P1"
    DP0 = "DP0"
    DUAL0 = "DUAL0"

    @property
    def is_primal(self) -> bool:
        return self is SpaceKind.P1


@dataclass(frozen=True, eq=False)
class FunctionSpace:
    kind: SpaceKind
    mesh: SurfaceMesh
    dof_count: int
    local2global: np.ndarray  # (nt, 3) for P1, (nt,) for DP0, (n_fine,) for DUAL0
    dual: DualGrid | None = None

    def __repr__(self):
        return f"FunctionSpace({self.kind.value}, dofs={self.dof_count})"


def build_space(mesh: SurfaceMesh, kind: SpaceKind | str) -> FunctionSpace:
    kind = SpaceKind(kind)
    if kind is SpaceKind.P1:
        return FunctionSpace(kind, mesh, mesh.n_vertices, mesh.triangles)
    if kind is SpaceKind.DP0:
        return FunctionSpace(kind, mesh, mesh.n_triangles, np.arange(mesh.n_triangles))
    dual = build_dual_grid(mesh)
    return FunctionSpace(kind, mesh, dual.n_cells, dual.cell_of, dual)


def assembly_mesh(*spaces: FunctionSpace) -> SurfaceMesh:
    """Common mesh on which all given spaces are piecewise polynomial."""
    mesh = spaces[0].mesh
    if any(s.mesh is not mesh for s in spaces):
        raise ValueError("spaces are defined on different meshes")
    if any(s.kind is SpaceKind.DUAL0 for s in spaces):
        return barycentric_refine(mesh).fine
    return mesh


def _p1_transfer(ref):
    """Coarse P1 -> fine P1 nodal values (exact: coarse hats are linear on
    every fine triangle)."""
    nv, ne, nt = ref.coarse.n_vertices, len(ref.edges), ref.coarse.n_triangles
    rows = [np.arange(nv), np.repeat(nv + np.arange(ne), 2), np.repeat(nv + ne + np.arange(nt), 3)]
    cols = [np.arange(nv), ref.edges.ravel(), ref.coarse.triangles.ravel()]
    vals = [np.ones(nv), np.full(2 * ne, 0.5), np.full(3 * nt, 1 / 3)]
    shape = (ref.fine.n_vertices, nv)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape)


def representation(space: FunctionSpace, asm: SurfaceMesh) -> sp.csr_matrix:
    """Sparse map from space coefficients to assembly-mesh coefficients
    (vertex values for P1, triangle values otherwise)."""
    mesh = space.mesh
    if asm is mesh:
        if space.kind is SpaceKind.DUAL0:
            raise ValueError("DUAL0 needs the barycentric refinement as assembly mesh")
        return sp.identity(space.dof_count, format="csr")
    ref = barycentric_refine(mesh)
    if asm is not ref.fine:
        raise ValueError("assembly mesh is neither the space mesh nor its refinement")
    key = ("representation", space.kind)
    if key not in mesh._cache:
        if space.kind is SpaceKind.P1:
            mat = _p1_transfer(ref)
        else:
            cols = ref.parent if space.kind is SpaceKind.DP0 else ref.owner
            n = len(cols)
            mat = sp.csr_matrix((np.ones(n), (np.arange(n), cols)), shape=(n, space.dof_count))
        mesh._cache[key] = mat
    return mesh._cache[key]


@dataclass(eq=False)
class DiscreteFunction:
    space: FunctionSpace
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.dof_count,):
            raise ValueError(
                f"expected {self.space.dof_count} coefficients for {self.space.kind.value}, "
                f"got shape {self.coefficients.shape}"
            )

    def on_assembly(self, asm: SurfaceMesh) -> np.ndarray:
        return representation(self.space, asm) @ self.coefficients


def interpolate(space: FunctionSpace, f: SurfaceField) -> DiscreteFunction:
    """Nodal interpolation.

    P1: value at each vertex; DP0: value at each barycenter; DUAL0: value at
    the owning vertex of each dual cell. Where the field jumps across a
    face edge (normal-dependent fields), vertex values are the area-weighted
    mean of the one-sided limits from the adjacent triangles.
    """
    mesh = space.mesh
    if space.kind is SpaceKind.DP0:
        coeffs = np.asarray(f(mesh.centroids, mesh.normals), float)
    else:
        if space.kind is SpaceKind.P1:
            tris = np.repeat(np.arange(mesh.n_triangles), 3)
            verts = mesh.triangles.ravel()
            weights = mesh.areas[tris]
            normals = mesh.normals[tris]
        else:
            ref = barycentric_refine(mesh)
            verts = ref.owner
            weights = ref.fine.areas
            normals = ref.fine.normals
        vals = np.asarray(f(mesh.vertices[verts], normals), float)
        if not np.all(np.isfinite(vals)):
            raise ValueError("field returned non-finite values")
        num = np.bincount(verts, weights=weights * vals, minlength=mesh.n_vertices)
        den = np.bincount(verts, weights=weights, minlength=mesh.n_vertices)
        coeffs = num / den
    coeffs = np.asarray(coeffs, float)
    if coeffs.shape != (space.dof_count,) or not np.all(np.isfinite(coeffs)):
        raise ValueError("field returned non-finite or mis-shaped values")
    return DiscreteFunction(space, coeffs)


def evaluate(df: DiscreteFunction, triangle: int, bary) -> float:
    """Point value on a triangle (a fine triangle for DUAL0)."""
    space = df.space
    bary = np.asarray(bary, float)
    if bary.shape != (3,) or np.any(bary < -1e-14) or abs(bary.sum() - 1) > 1e-12:
        raise ValueError("barycentric coordinates must be nonnegative and sum to 1")
    n = len(space.local2global)
    if not 0 <= triangle < n:
        raise IndexError(f"triangle index {triangle} out of range [0, {n})")
    if space.kind is SpaceKind.P1:
        return float(df.coefficients[space.local2global[triangle]] @ bary)
    return float(df.coefficients[space.local2global[triangle]])


def basis_function(space: FunctionSpace, dof: int) -> DiscreteFunction:
    coeffs = np.zeros(space.dof_count)
    coeffs[dof] = 1.0
    return DiscreteFunction(space, coeffs)


def save_coefficients(df: DiscreteFunction, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["dof", "value"])
        for i, v in enumerate(df.coefficients):
            writer.writerow([i, repr(float(v))])


def load_coefficients(space: FunctionSpace, path) -> DiscreteFunction:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["dof", "value"]:
        raise ValueError(f"{path}: expected header 'dof,value'")
    coeffs = np.full(space.dof_count, np.nan)
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            dof, value = int(row[0]), float(row[1])
        except (ValueError, IndexError):
            raise ValueError(f"{path}:{lineno}: malformed row {row!r}") from None
        if not 0 <= dof < space.dof_count:
            raise ValueError(f"{path}:{lineno}: dof {dof} out of range")
        coeffs[dof] = value
    if np.any(np.isnan(coeffs)):
        raise ValueError(f"{path}: missing values for {int(np.isnan(coeffs).sum())} dofs")
    return DiscreteFunction(space, coeffs)


def field_values(field, asm: SurfaceMesh, tris: np.ndarray, bary: np.ndarray) -> np.ndarray:
    """Values of a closed-form field or a discrete function at points given
    by assembly-mesh triangle indices and barycentric coordinates."""
    if isinstance(field, DiscreteFunction):
        coeffs = field.on_assembly(asm)
        if field.space.kind is SpaceKind.P1:
            return np.einsum("ij,ij->i", coeffs[asm.triangles[tris]], bary)
        return coeffs[tris]
    points = np.einsum("ij,ijk->ik", bary, asm.corners[tris])
    vals = np.asarray(field(points, asm.normals[tris]), float)
    if vals.shape != (len(tris),) or not np.all(np.isfinite(vals)):
        raise ValueError("field returned non-finite or mis-shaped values")
    return vals


def evaluation_matrix(space: FunctionSpace, asm: SurfaceMesh, tris: np.ndarray, bary: np.ndarray) -> sp.csr_matrix:
    """Sparse (n_points, dof_count) matrix evaluating space coefficients at
    points given by assembly-mesh triangles and barycentric coordinates."""
    n = len(tris)
    if space.kind is SpaceKind.P1:
        rows = np.repeat(np.arange(n), 3)
        local = sp.csr_matrix((np.asarray(bary, float).ravel(), (rows, asm.triangles[tris].ravel())),
                              shape=(n, asm.n_vertices))  # fmt: skip
    else:
        local = sp.csr_matrix((np.ones(n), (np.arange(n), tris)), shape=(n, asm.n_triangles))
    return (local @ representation(space, asm)).tocsr()
