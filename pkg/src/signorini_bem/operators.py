"""Galerkin assembly of the Laplace boundary operators V, K, K', W, the
sparse mass pairings, and the multitrace operator.

Dense element matrices are computed once per assembly mesh by a numba
kernel that loops over all panel pairs: ``V_e`` (piecewise constants
against piecewise constants) and ``K_e`` (piecewise-constant test against
vertex-based piecewise-linear trial). Space matrices are obtained by the
sparse representations of :mod:`spaces`. W follows by integration by parts
from ``V_e`` and the (constant) surface curls of the hat functions.
"""

from __future__ import annotations

import logging
import math
import os
import struct
import time
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp

from .mesh import CONTACT, DIRICHLET, SurfaceMesh
from .quadrature import PairKind, gauss_triangle, singular_pair_rule
from .spaces import FunctionSpace, SpaceKind, assembly_mesh, representation

# prefer OpenMP: an outdated TBB otherwise triggers a warning on every run
if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]

log = logging.getLogger(__name__)

FOUR_PI = 4.0 * math.pi
REGIONS = ("all", "dirichlet", "contact")


def green(x, y) -> float:
    """Laplace fundamental solution 1 / (4 pi |x - y|)."""
    r = np.linalg.norm(np.asarray(x, float) - np.asarray(y, float))
    if r == 0.0:
        raise ValueError("green() is singular for coincident points")
    return 1.0 / (FOUR_PI * r)


def green_normal_derivative(x, y, normal_y) -> float:
    """Derivative of the fundamental solution in the normal direction at y."""
    d = np.asarray(x, float) - np.asarray(y, float)
    r = np.linalg.norm(d)
    if r == 0.0:
        raise ValueError("kernel is singular for coincident points")
    return float(d @ np.asarray(normal_y, float)) / (FOUR_PI * r**3)


@dataclass(frozen=True)
class QuadratureOrders:
    """Quadrature settings for panel pairs.

    ``disjoint`` is a triangle-rule degree; the others are Gauss-Legendre
    counts per direction. Disjoint pairs closer than a panel diameter use a
    collapsed rule with ``shared_vertex`` points per direction.
    """

    disjoint: int = 4
    shared_vertex: int = 5
    shared_edge: int = 8
    coincident: int = 8

    def scaled(self, factor: int) -> "QuadratureOrders":
        return QuadratureOrders(
            self.disjoint * factor,
            self.shared_vertex * factor,
            self.shared_edge * factor,
            self.coincident * factor,
        )


@numba.njit(parallel=True, cache=True)
def _pair_kernel(verts, tris, normals, areas, centroids, radii, diam,
                 far_pts, far_w, near_pts, near_w,
                 sx, sy, sw, offsets, V, K):  # fmt: skip
    nt = tris.shape[0]
    nfar = far_w.shape[0]
    nnear = near_w.shape[0]
    inv4pi = 1.0 / (4.0 * np.pi)
    for i in numba.prange(nt):
        pt = np.empty(3, np.int64)
        pj = np.empty(3, np.int64)
        x = np.empty(3)
        y = np.empty(3)
        for j in range(nt):
            nshared = 0
            for a in range(3):
                for b in range(3):
                    if tris[i, a] == tris[j, b]:
                        nshared += 1
            # double layer vanishes identically on coplanar pairs
            nn = normals[i, 0] * normals[j, 0] + normals[i, 1] * normals[j, 1] + normals[i, 2] * normals[j, 2]
            off = 0.0
            for c in range(3):
                off += (verts[tris[i, 0], c] - verts[tris[j, 0], c]) * normals[j, c]
            do_dl = not (abs(nn) > 1.0 - 1e-12 and abs(off) <= 1e-12 * diam[j])
            scale = 4.0 * areas[i] * areas[j]

            if nshared == 0:
                dist = 0.0
                for c in range(3):
                    dist += (centroids[i, c] - centroids[j, c]) ** 2
                gap = math.sqrt(dist) - radii[i] - radii[j]
                near = gap < max(diam[i], diam[j])
                pts = near_pts if near else far_pts
                wts = near_w if near else far_w
                nq = nnear if near else nfar
                v_acc = 0.0
                k0 = 0.0
                k1 = 0.0
                k2 = 0.0
                for p in range(nq):
                    for c in range(3):
                        x[c] = (pts[p, 0] * verts[tris[i, 0], c] + pts[p, 1] * verts[tris[i, 1], c]
                                + pts[p, 2] * verts[tris[i, 2], c])  # fmt: skip
                    for q in range(nq):
                        w = wts[p] * wts[q]
                        d0 = x[0] - (pts[q, 0] * verts[tris[j, 0], 0] + pts[q, 1] * verts[tris[j, 1], 0]
                                     + pts[q, 2] * verts[tris[j, 2], 0])  # fmt: skip
                        d1 = x[1] - (pts[q, 0] * verts[tris[j, 0], 1] + pts[q, 1] * verts[tris[j, 1], 1]
                                     + pts[q, 2] * verts[tris[j, 2], 1])  # fmt: skip
                        d2 = x[2] - (pts[q, 0] * verts[tris[j, 0], 2] + pts[q, 1] * verts[tris[j, 1], 2]
                                     + pts[q, 2] * verts[tris[j, 2], 2])  # fmt: skip
                        r2 = d0 * d0 + d1 * d1 + d2 * d2
                        r = math.sqrt(r2)
                        v_acc += w / r
                        if do_dl:
                            dg = w * (d0 * normals[j, 0] + d1 * normals[j, 1] + d2 * normals[j, 2]) / (r2 * r)
                            k0 += dg * pts[q, 0]
                            k1 += dg * pts[q, 1]
                            k2 += dg * pts[q, 2]
                V[i, j] = v_acc * inv4pi * scale
                if do_dl:
                    K[i, tris[j, 0]] += k0 * inv4pi * scale
                    K[i, tris[j, 1]] += k1 * inv4pi * scale
                    K[i, tris[j, 2]] += k2 * inv4pi * scale
                continue

            # align shared vertices in leading position
            if nshared == 3:
                for a in range(3):
                    pt[a] = a
                    for b in range(3):
                        if tris[j, b] == tris[i, a]:
                            pj[a] = b
            elif nshared == 2:
                i0 = -1
                i1 = -1
                for a in range(3):
                    for b in range(3):
                        if tris[i, a] == tris[j, b]:
                            if i0 < 0:
                                i0 = a
                            else:
                                i1 = a
                if (i1 - i0) % 3 != 1:
                    tmp = i0
                    i0 = i1
                    i1 = tmp
                pt[0] = i0
                pt[1] = i1
                pt[2] = 3 - i0 - i1
                for b in range(3):
                    if tris[j, b] == tris[i, i0]:
                        pj[0] = b
                    if tris[j, b] == tris[i, i1]:
                        pj[1] = b
                pj[2] = 3 - pj[0] - pj[1]
            else:
                for a in range(3):
                    for b in range(3):
                        if tris[i, a] == tris[j, b]:
                            pt[0] = a
                            pj[0] = b
                pt[1] = (pt[0] + 1) % 3
                pt[2] = (pt[0] + 2) % 3
                pj[1] = (pj[0] + 1) % 3
                pj[2] = (pj[0] + 2) % 3

            v_acc = 0.0
            kl = np.zeros(3)
            for p in range(offsets[nshared], offsets[nshared + 1]):
                for c in range(3):
                    x[c] = (sx[p, 0] * verts[tris[i, pt[0]], c] + sx[p, 1] * verts[tris[i, pt[1]], c]
                            + sx[p, 2] * verts[tris[i, pt[2]], c])  # fmt: skip
                    y[c] = (sy[p, 0] * verts[tris[j, pj[0]], c] + sy[p, 1] * verts[tris[j, pj[1]], c]
                            + sy[p, 2] * verts[tris[j, pj[2]], c])  # fmt: skip
                d0 = x[0] - y[0]
                d1 = x[1] - y[1]
                d2 = x[2] - y[2]
                r2 = d0 * d0 + d1 * d1 + d2 * d2
                r = math.sqrt(r2)
                v_acc += sw[p] / r
                if do_dl:
                    dg = sw[p] * (d0 * normals[j, 0] + d1 * normals[j, 1] + d2 * normals[j, 2]) / (r2 * r)
                    for k in range(3):
                        kl[k] += dg * sy[p, k]
            V[i, j] = v_acc * inv4pi * scale
            if do_dl:
                for k in range(3):
                    K[i, tris[j, pj[k]]] += kl[k] * inv4pi * scale


def element_operators(asm: SurfaceMesh, orders: QuadratureOrders = QuadratureOrders()):
    """Dense ``(V_e, K_e)`` on an assembly mesh, cached per mesh and orders.

    ``V_e[i, j]`` pairs constants on triangles i and j; ``K_e[i, p]`` pairs
    the constant on triangle i with the double layer of the hat at vertex p.
    """
    key = ("element_operators", orders)
    if key in asm._cache:
        return asm._cache[key]
    start = time.perf_counter()
    far = gauss_triangle(orders.disjoint)
    near = gauss_triangle(2 * orders.shared_vertex - 1)
    rules = [
        singular_pair_rule(PairKind.SHARED_VERTEX, orders.shared_vertex),
        singular_pair_rule(PairKind.SHARED_EDGE, orders.shared_edge),
        singular_pair_rule(PairKind.COINCIDENT, orders.coincident),
    ]
    offsets = np.zeros(5, np.int64)
    offsets[2:] = np.cumsum([len(r) for r in rules])
    sx = np.concatenate([r.x for r in rules])
    sy = np.concatenate([r.y for r in rules])
    sw = np.concatenate([r.weights for r in rules])

    corners = asm.corners
    radii = np.linalg.norm(corners - asm.centroids[:, None, :], axis=2).max(axis=1)
    nt, nv = asm.n_triangles, asm.n_vertices
    V = np.zeros((nt, nt))
    K = np.zeros((nt, nv))
    _pair_kernel(
        asm.vertices, asm.triangles, asm.normals, asm.areas, asm.centroids, radii, asm.diameters,
        np.ascontiguousarray(far.points), np.ascontiguousarray(far.weights),
        np.ascontiguousarray(near.points), np.ascontiguousarray(near.weights),
        sx, sy, sw, offsets, V, K,
    )  # fmt: skip
    log.info("assembled %d x %d panel pairs in %.2fs", nt, nt, time.perf_counter() - start)
    # both orientations of a pair are integrated; their mean is exactly symmetric
    V = 0.5 * (V + V.T)
    for arr in (V, K):
        arr.setflags(write=False)
    asm._cache[key] = (V, K)
    return V, K


def surface_curls(asm: SurfaceMesh) -> list[sp.csr_matrix]:
    """Three sparse (nt, nv) matrices with the x, y, z components of the
    surface curl of every hat function on every triangle."""
    c = asm.corners
    two_a = 2.0 * asm.areas
    nt = asm.n_triangles
    rows = np.repeat(np.arange(nt), 3)
    cols = asm.triangles.ravel()
    # curl of the hat at local vertex a is (P_{a+1} - P_{a+2}) / (2A)
    curl = np.stack([c[:, 1] - c[:, 2], c[:, 2] - c[:, 0], c[:, 0] - c[:, 1]], axis=1) / two_a[:, None, None]
    return [sp.csr_matrix((curl[:, :, k].ravel(), (rows, cols)), shape=(nt, asm.n_vertices)) for k in range(3)]


def _check_same_mesh(*spaces):
    mesh = spaces[0].mesh
    if any(s.mesh is not mesh for s in spaces):
        raise ValueError("spaces are defined on different meshes")


def _require(space, primal, role):
    if space.kind.is_primal != primal:
        kind = "primal (P1)" if primal else "flux (DP0/DUAL0)"
        raise ValueError(f"{role} space must be {kind}, got {space.kind.value}")


def assemble_single_layer(test, trial, orders=QuadratureOrders()) -> np.ndarray:
    _check_same_mesh(test, trial)
    _require(test, False, "test")
    _require(trial, False, "trial")
    asm = assembly_mesh(test, trial)
    V_e, _ = element_operators(asm, orders)
    return np.asarray(representation(test, asm).T @ (representation(trial, asm).T @ V_e.T).T)


def assemble_double_layer(test, trial, orders=QuadratureOrders()) -> np.ndarray:
    """Rows: flux test functions; columns: primal trial functions."""
    _check_same_mesh(test, trial)
    _require(test, False, "test")
    _require(trial, True, "trial")
    asm = assembly_mesh(test, trial)
    _, K_e = element_operators(asm, orders)
    return np.asarray(representation(test, asm).T @ (representation(trial, asm).T @ K_e.T).T)


def assemble_adjoint_double_layer(test, trial, orders=QuadratureOrders()) -> np.ndarray:
    """Rows: primal test functions; columns: flux trial functions. Obtained
    as the transpose of the double layer with swapped roles."""
    return assemble_double_layer(trial, test, orders).T.copy()


def assemble_hypersingular(test, trial, orders=QuadratureOrders()) -> np.ndarray:
    _check_same_mesh(test, trial)
    for role, s in (("test", test), ("trial", trial)):
        if s.kind is not SpaceKind.P1:
            raise ValueError(f"hypersingular {role} space must be P1, got {s.kind.value}")
    asm = assembly_mesh(test, trial)
    V_e, _ = element_operators(asm, orders)
    W_e = np.zeros((asm.n_vertices, asm.n_vertices))
    for C in surface_curls(asm):
        W_e += C.T @ (C.T @ V_e.T).T
    return np.asarray(representation(test, asm).T @ (representation(trial, asm).T @ W_e.T).T)


def _region_mask(asm: SurfaceMesh, region: str) -> np.ndarray:
    if region == "all":
        return np.ones(asm.n_triangles, bool)
    if region == "dirichlet":
        return asm.bc_tags == DIRICHLET
    if region == "contact":
        return asm.bc_tags == CONTACT
    raise ValueError(f"region must be one of {REGIONS}, got {region!r}")


def _local_basis(space: FunctionSpace, asm: SurfaceMesh, tris, bary):
    """(values (nt, nq, nloc), assembly dof indices (nt, nloc)) for the
    assembly-level basis of a space."""
    if space.kind is SpaceKind.P1:
        return np.broadcast_to(bary, (len(tris),) + bary.shape), asm.triangles[tris]
    return np.ones((len(tris), len(bary), 1)), tris[:, None]


def assemble_mass(test, trial, region: str = "all") -> sp.csr_matrix:
    """Sparse L2 pairing restricted to a boundary region, by quadrature
    exact for the product of the two bases."""
    _check_same_mesh(test, trial)
    asm = assembly_mesh(test, trial)
    tris = np.flatnonzero(_region_mask(asm, region))
    rule = gauss_triangle(2)
    bt, it = _local_basis(test, asm, tris, rule.points)
    bs, js = _local_basis(trial, asm, tris, rule.points)
    local = np.einsum("q,tqa,tqb->tab", rule.weights, bt, bs) * (2 * asm.areas[tris])[:, None, None]
    rows = np.repeat(it, js.shape[1], axis=1).ravel()
    cols = np.tile(js, (1, it.shape[1])).ravel()
    n_test = asm.n_vertices if test.kind is SpaceKind.P1 else asm.n_triangles
    n_trial = asm.n_vertices if trial.kind is SpaceKind.P1 else asm.n_triangles
    M_e = sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n_test, n_trial))
    return (representation(test, asm).T @ M_e @ representation(trial, asm)).tocsr()


@dataclass
class OperatorBlocks:
    """Assembled operators for a primal/flux space pair.

    Matrix roles: ``V`` flux x flux, ``K`` flux-test x primal-trial, ``Kp``
    primal-test x flux-trial, ``W`` primal x primal. ``mass`` holds sparse
    pairings keyed by ``(test role, trial role, region)`` with roles
    ``"p"``/``"f"``.
    """

    primal: FunctionSpace
    flux: FunctionSpace
    V: np.ndarray
    K: np.ndarray
    Kp: np.ndarray
    W: np.ndarray
    mass: dict = field(default_factory=dict)
    orders: QuadratureOrders = QuadratureOrders()
    assembly_seconds: float = 0.0

    @property
    def n_primal(self) -> int:
        return self.primal.dof_count

    @property
    def n_flux(self) -> int:
        return self.flux.dof_count

    @property
    def size(self) -> int:
        return self.n_primal + self.n_flux

    def M(self, test: str, trial: str, region: str = "all") -> sp.csr_matrix:
        return self.mass[(test, trial, region)]

    def split(self, x):
        x = np.asarray(x, float)
        if x.shape != (self.size,):
            raise ValueError(f"expected vector of length {self.size}, got {x.shape}")
        return x[: self.n_primal], x[self.n_primal :]

    def multitrace_matrix(self) -> np.ndarray:
        """Dense [[W, K'], [-K, V]] in (primal-test, flux-test) row order."""
        return np.block([[self.W, self.Kp], [-self.K, self.V]])

    def off_role_mass(self, region: str = "all") -> sp.csr_matrix:
        """[[0, M_pf], [M_fp, 0]]: the pairing <u, mu> + <lambda, v>."""
        M_pf = self.M("p", "f", region)
        return sp.bmat([[None, M_pf], [M_pf.T, None]], format="csr")


def _mass_pairings(primal, flux):
    mass = {}
    for region in REGIONS:
        mass[("p", "p", region)] = assemble_mass(primal, primal, region)
        mass[("p", "f", region)] = assemble_mass(primal, flux, region)
        mass[("f", "p", region)] = mass[("p", "f", region)].T.tocsr()
        mass[("f", "f", region)] = assemble_mass(flux, flux, region)
    return mass


def assemble_blocks(primal: FunctionSpace, flux: FunctionSpace, orders=QuadratureOrders()) -> OperatorBlocks:
    if primal.kind is not SpaceKind.P1:
        raise ValueError("primal space must be P1")
    _require(flux, False, "flux")
    _check_same_mesh(primal, flux)
    start = time.perf_counter()
    V = assemble_single_layer(flux, flux, orders)
    K = assemble_double_layer(flux, primal, orders)
    W = assemble_hypersingular(primal, primal, orders)
    blocks = OperatorBlocks(primal, flux, V, K, K.T.copy(), W, _mass_pairings(primal, flux), orders)
    blocks.assembly_seconds = time.perf_counter() - start
    return blocks


def multitrace_apply(blocks: OperatorBlocks, v, mu):
    """Apply the multitrace operator to a primal/flux coefficient pair.

    Returns ``(W v + K' mu, -K v + V mu)``: rows tested with primal and flux
    functions respectively.
    """
    v = np.asarray(v, float)
    mu = np.asarray(mu, float)
    if v.shape != (blocks.n_primal,) or mu.shape != (blocks.n_flux,):
        raise ValueError(
            f"dimension mismatch: expected ({blocks.n_primal},), ({blocks.n_flux},); got {v.shape}, {mu.shape}"
        )
    return blocks.W @ v + blocks.Kp @ mu, -blocks.K @ v + blocks.V @ mu


def calderon_residual(blocks: OperatorBlocks, u, lam) -> float:
    """Relative defect of A[(u, lam), .] = 1/2 <u, .> + 1/2 <lam, .>."""
    x = np.concatenate([u, lam])
    lhs = blocks.multitrace_matrix() @ x
    rhs = 0.5 * (blocks.off_role_mass() @ x)
    return float(np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs))


# Binary block dump: magic, count, then per matrix a 16-byte name, int64
# rows and cols, and row-major float64 data (little endian).
_MAGIC = b"SBEMBLK1"
_DENSE_NAMES = ("V", "K", "W")


def save_blocks(blocks: OperatorBlocks, path) -> None:
    entries = [(name, getattr(blocks, name)) for name in _DENSE_NAMES]
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<q", len(entries)))
        for name, mat in entries:
            mat = np.ascontiguousarray(mat, dtype="<f8")
            fh.write(name.encode().ljust(16, b"\0"))
            fh.write(struct.pack("<qq", *mat.shape))
            fh.write(mat.tobytes())


def load_blocks(path, primal: FunctionSpace, flux: FunctionSpace) -> OperatorBlocks:
    """Read dense operators from a dump; mass pairings are rebuilt from the
    spaces (they are cheap and exact)."""
    mats = {}
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError(f"{path}: not a block dump")
        (count,) = struct.unpack("<q", fh.read(8))
        for _ in range(count):
            name = fh.read(16).rstrip(b"\0").decode()
            rows, cols = struct.unpack("<qq", fh.read(16))
            data = np.frombuffer(fh.read(8 * rows * cols), dtype="<f8")
            if data.size != rows * cols:
                raise ValueError(f"{path}: truncated matrix {name}")
            mats[name] = data.reshape(rows, cols).astype(float)
    expected = {"V": (flux.dof_count,) * 2, "K": (flux.dof_count, primal.dof_count), "W": (primal.dof_count,) * 2}
    for name, shape in expected.items():
        if name not in mats:
            raise ValueError(f"{path}: missing block {name}")
        if mats[name].shape != shape:
            raise ValueError(f"{path}: block {name} has shape {mats[name].shape}, expected {shape}")
    K = mats["K"]
    return OperatorBlocks(primal, flux, mats["V"], K, K.T.copy(), mats["W"], _mass_pairings(primal, flux))
