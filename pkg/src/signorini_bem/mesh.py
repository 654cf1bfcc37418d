"""Closed triangulated surfaces: generation, validation, I/O and the
barycentric dual grid."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DIRICHLET = 0
CONTACT = 1
_TAG_CHARS = {DIRICHLET: "D", CONTACT: "C"}
_TAG_CODES = {"D": DIRICHLET, "C": CONTACT}

# relative threshold on triangle area, measured against h**2
DEGENERATE_AREA = 1e-14


class MeshError(ValueError):
    """Raised for malformed, non-manifold or badly oriented meshes."""


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Closed triangulated surface with per-triangle face and boundary tags.

    ``bc_tags`` holds ``DIRICHLET`` or ``CONTACT`` for every triangle. Arrays
    are made read-only on construction; derived geometry is computed lazily
    and cached on the instance.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    face_ids: np.ndarray
    bc_tags: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        vertices = np.ascontiguousarray(self.vertices, dtype=float)
        triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        face_ids = np.ascontiguousarray(self.face_ids, dtype=np.int64)
        bc_tags = np.ascontiguousarray(self.bc_tags, dtype=np.int64)
        for arr in (vertices, triangles, face_ids, bc_tags):
            arr.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)
        object.__setattr__(self, "face_ids", face_ids)
        object.__setattr__(self, "bc_tags", bc_tags)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def _cached(self, key, fn):
        if key not in self._cache:
            value = fn()
            if isinstance(value, np.ndarray):
                value.setflags(write=False)
            self._cache[key] = value
        return self._cache[key]

    @property
    def corners(self) -> np.ndarray:
        """Triangle corner coordinates, shape (nt, 3, 3)."""
        return self._cached("corners", lambda: self.vertices[self.triangles])

    @property
    def areas(self) -> np.ndarray:
        return self._cached("areas", lambda: 0.5 * np.linalg.norm(self._cross(), axis=1))

    @property
    def normals(self) -> np.ndarray:
        """Unit normals following the vertex ordering (outward when valid)."""

        def compute():
            c = self._cross()
            return c / np.linalg.norm(c, axis=1)[:, None]

        return self._cached("normals", compute)

    @property
    def centroids(self) -> np.ndarray:
        return self._cached("centroids", lambda: self.corners.mean(axis=1))

    @property
    def diameters(self) -> np.ndarray:
        """Longest edge of each triangle."""

        def compute():
            c = self.corners
            edges = np.stack([c[:, 1] - c[:, 0], c[:, 2] - c[:, 1], c[:, 0] - c[:, 2]], axis=1)
            return np.linalg.norm(edges, axis=2).max(axis=1)

        return self._cached("diameters", compute)

    def _cross(self):
        c = self.corners
        return np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])

    def total_area(self) -> float:
        return float(self.areas.sum())

    def signed_volume(self) -> float:
        """(1/3) * sum_T int_T x . nu, exact for flat triangles."""
        c = self.corners
        return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)

    def triangles_with_tag(self, tag: int) -> np.ndarray:
        return np.flatnonzero(self.bc_tags == tag)

    def __eq__(self, other):
        if not isinstance(other, SurfaceMesh):
            return NotImplemented
        return (
            np.array_equal(self.triangles, other.triangles)
            and np.array_equal(self.face_ids, other.face_ids)
            and np.array_equal(self.bc_tags, other.bc_tags)
            and self.vertices.shape == other.vertices.shape
            and np.allclose(self.vertices, other.vertices, rtol=0, atol=1e-12)
        )

    __hash__ = object.__hash__


def mesh_size(mesh: SurfaceMesh) -> float:
    """Largest triangle diameter h."""
    if mesh.n_triangles == 0:
        raise MeshError("empty mesh")
    return float(mesh.diameters.max())


def _edge_counts(triangles):
    directed = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    undirected = np.sort(directed, axis=1)
    uniq, counts = np.unique(undirected, axis=0, return_counts=True)
    return directed, uniq, counts


def validate_mesh(mesh: SurfaceMesh, *, check_orientation: bool = True) -> None:
    """Raise MeshError unless the mesh is a closed, consistently oriented,
    non-degenerate surface with face-constant boundary tags."""
    nv, tris = mesh.n_vertices, mesh.triangles
    if mesh.n_triangles == 0:
        raise MeshError("empty mesh")
    if tris.ndim != 2 or tris.shape[1] != 3:
        raise MeshError("triangles must be index triples")
    if tris.min() < 0 or tris.max() >= nv:
        raise MeshError("triangle vertex index out of range")
    if len(mesh.face_ids) != len(tris) or len(mesh.bc_tags) != len(tris):
        raise MeshError("face_id/bc_tag count does not match triangle count")
    if not np.all(np.isfinite(mesh.vertices)):
        raise MeshError("non-finite vertex coordinate")
    if np.any((tris[:, 0] == tris[:, 1]) | (tris[:, 1] == tris[:, 2]) | (tris[:, 0] == tris[:, 2])):
        raise MeshError("triangle with repeated vertex")
    if not np.all(np.isin(mesh.bc_tags, (DIRICHLET, CONTACT))):
        raise MeshError("unknown bc_tag")

    h = mesh_size(mesh)
    bad = np.flatnonzero(mesh.areas < DEGENERATE_AREA * h * h)
    if len(bad):
        raise MeshError(f"degenerate triangle {bad[0]}")

    directed, uniq, counts = _edge_counts(tris)
    if np.any(counts != 2):
        edge = uniq[np.flatnonzero(counts != 2)[0]]
        if counts.max() > 2:
            raise MeshError(f"non-manifold edge {tuple(int(i) for i in edge)}")
        raise MeshError(f"open boundary edge {tuple(int(i) for i in edge)}")
    if check_orientation:
        if len(np.unique(directed, axis=0)) != len(directed):
            raise MeshError("inconsistent triangle orientation")
        if mesh.signed_volume() <= 0:
            raise MeshError("inward orientation (negative signed volume)")

    for fid in np.unique(mesh.face_ids):
        tags = np.unique(mesh.bc_tags[mesh.face_ids == fid])
        if len(tags) > 1:
            raise MeshError(f"bc_tag not constant on face {int(fid)}")


def flip_orientation(mesh: SurfaceMesh) -> SurfaceMesh:
    return SurfaceMesh(mesh.vertices, mesh.triangles[:, [0, 2, 1]], mesh.face_ids, mesh.bc_tags)


def _orient(mesh: SurfaceMesh, orientation: str) -> SurfaceMesh:
    validate_mesh(mesh, check_orientation=False)
    directed, _, _ = _edge_counts(mesh.triangles)
    if len(np.unique(directed, axis=0)) != len(directed):
        raise MeshError("inconsistent triangle orientation")
    if mesh.signed_volume() <= 0:
        if orientation != "flip":
            raise MeshError("inward orientation (negative signed volume)")
        mesh = flip_orientation(mesh)
    validate_mesh(mesh)
    return mesh


# (outward normal axis, sign, first tangent axis, second tangent axis);
# tangent order chosen so that e1 x e2 points outward
_CUBE_FACES = [
    (2, 0, 1, 0),  # z = 0
    (2, 1, 0, 1),  # z = 1
    (0, 0, 2, 1),  # x = 0
    (0, 1, 1, 2),  # x = 1
    (1, 0, 0, 2),  # y = 0
    (1, 1, 2, 0),  # y = 1
]


def generate_cube_mesh(n: int) -> SurfaceMesh:
    """Structured mesh of the unit cube boundary with n segments per edge.

    Each square cell is split into two triangles; triangles on z = 1 carry
    the CONTACT tag, all others DIRICHLET.
    """
    if int(n) != n or n < 1:
        raise MeshError(f"n must be a positive integer, got {n}")
    n = int(n)
    index: dict[tuple[int, int, int], int] = {}
    lattice = []
    triangles, face_ids, tags = [], [], []

    def vid(p):
        key = tuple(p)
        if key not in index:
            index[key] = len(lattice)
            lattice.append(key)
        return index[key]

    for fid, (axis, side, t1, t2) in enumerate(_CUBE_FACES):
        tag = CONTACT if (axis == 2 and side == 1) else DIRICHLET
        for a in range(n):
            for b in range(n):
                ids = {}
                for da in (0, 1):
                    for db in (0, 1):
                        p = [0, 0, 0]
                        p[axis] = side * n
                        p[t1] = a + da
                        p[t2] = b + db
                        ids[da, db] = vid(p)
                triangles.append((ids[0, 0], ids[1, 0], ids[1, 1]))
                triangles.append((ids[0, 0], ids[1, 1], ids[0, 1]))
                face_ids += [fid, fid]
                tags += [tag, tag]

    mesh = SurfaceMesh(np.array(lattice, dtype=float) / n, np.array(triangles), np.array(face_ids), np.array(tags))
    validate_mesh(mesh)
    return mesh


@dataclass(frozen=True, eq=False)
class Refinement:
    """Barycentric refinement of a coarse mesh.

    Fine vertices are ordered: coarse vertices, then edge midpoints, then
    triangle barycenters. ``parent`` maps each fine triangle to its coarse
    triangle and ``owner`` to the single coarse vertex it touches.
    """

    coarse: SurfaceMesh
    fine: SurfaceMesh
    parent: np.ndarray
    owner: np.ndarray
    kind: np.ndarray  # per fine vertex: 0 coarse vertex, 1 midpoint, 2 barycenter
    edges: np.ndarray  # coarse edges (sorted vertex pairs) in midpoint order


def barycentric_refine(mesh: SurfaceMesh) -> Refinement:
    """Split every triangle into six via edge midpoints and barycenter."""
    cached = mesh._cache.get("refinement")
    if cached is not None:
        return cached
    nv, nt = mesh.n_vertices, mesh.n_triangles
    tris = mesh.triangles
    local_edges = tris[:, [[0, 1], [1, 2], [2, 0]]]  # (nt, 3, 2)
    edges, edge_of = np.unique(np.sort(local_edges.reshape(-1, 2), axis=1), axis=0, return_inverse=True)
    edge_of = edge_of.reshape(nt, 3)
    ne = len(edges)

    midpoints = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    vertices = np.concatenate([mesh.vertices, midpoints, mesh.centroids])
    kind = np.concatenate([np.zeros(nv, int), np.ones(ne, int), np.full(nt, 2)])

    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    m_ab, m_bc, m_ca = nv + edge_of[:, 0], nv + edge_of[:, 1], nv + edge_of[:, 2]
    g = nv + ne + np.arange(nt)
    # six sub-triangles per coarse triangle, same orientation as (a, b, c)
    fine = np.stack(
        [
            np.stack([a, m_ab, g], 1),
            np.stack([m_ab, b, g], 1),
            np.stack([b, m_bc, g], 1),
            np.stack([m_bc, c, g], 1),
            np.stack([c, m_ca, g], 1),
            np.stack([m_ca, a, g], 1),
        ],
        axis=1,
    ).reshape(-1, 3)
    owner = np.stack([a, b, b, c, c, a], axis=1).reshape(-1)
    parent = np.repeat(np.arange(nt), 6)
    fine_mesh = SurfaceMesh(vertices, fine, mesh.face_ids[parent], mesh.bc_tags[parent])
    ref = Refinement(mesh, fine_mesh, parent, owner, kind, edges)
    for arr in (parent, owner, kind, edges):
        arr.setflags(write=False)
    mesh._cache["refinement"] = ref
    return ref


@dataclass(frozen=True, eq=False)
class DualGrid:
    """Barycentric dual grid: one cell per primal vertex.

    Cells are unions of fine (flat) triangles of the barycentric refinement;
    ``cell_of`` gives the owning primal vertex of every fine triangle.
    """

    mesh: SurfaceMesh
    refinement: Refinement
    owners: np.ndarray
    cells: tuple

    @property
    def cell_of(self) -> np.ndarray:
        return self.refinement.owner

    @property
    def n_cells(self) -> int:
        return len(self.owners)

    def cell_areas(self) -> np.ndarray:
        return np.bincount(self.cell_of, weights=self.refinement.fine.areas, minlength=self.n_cells)


def build_dual_grid(mesh: SurfaceMesh) -> DualGrid:
    cached = mesh._cache.get("dual_grid")
    if cached is not None:
        return cached
    ref = barycentric_refine(mesh)
    order = np.argsort(ref.owner, kind="stable")
    bounds = np.searchsorted(ref.owner[order], np.arange(mesh.n_vertices + 1))
    cells = tuple(order[bounds[p] : bounds[p + 1]] for p in range(mesh.n_vertices))
    dual = DualGrid(mesh, ref, np.arange(mesh.n_vertices), cells)
    mesh._cache["dual_grid"] = dual
    return dual


def save_mesh(mesh: SurfaceMesh, path) -> None:
    lines = ["surfmesh 1", f"{mesh.n_vertices} {mesh.n_triangles}"]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    for (i, j, k), fid, tag in zip(mesh.triangles.tolist(), mesh.face_ids.tolist(), mesh.bc_tags.tolist()):
        lines.append(f"{i} {j} {k} {fid} {_TAG_CHARS[tag]}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path, orientation: str = "reject") -> SurfaceMesh:
    """Read the ASCII ``surfmesh 1`` format.

    ``orientation`` is ``"reject"`` (inward meshes raise) or ``"flip"``
    (inward meshes are reversed).
    """
    if orientation not in ("reject", "flip"):
        raise ValueError(f"orientation must be 'reject' or 'flip', got {orientation!r}")
    raw = Path(path).read_text().splitlines()
    lines = [(no, ln.split()) for no, ln in enumerate(raw, start=1) if ln.strip()]

    def fail(no, reason):
        raise MeshError(f"{path}:{no}: {reason}")

    if not lines or lines[0][1] != ["surfmesh", "1"]:
        fail(lines[0][0] if lines else 1, "expected header 'surfmesh 1'")
    if len(lines) < 2 or len(lines[1][1]) != 2:
        fail(lines[1][0] if len(lines) > 1 else 2, "expected '<nv> <nt>'")
    try:
        nv, nt = (int(t) for t in lines[1][1])
    except ValueError:
        fail(lines[1][0], "vertex/triangle counts must be integers")
    if nv < 3 or nt < 1:
        fail(lines[1][0], "too few vertices or triangles")
    if len(lines) != 2 + nv + nt:
        fail(lines[-1][0], f"expected {nv} vertex and {nt} triangle lines, found {len(lines) - 2} data lines")

    vertices = np.empty((nv, 3))
    for k, (no, tok) in enumerate(lines[2 : 2 + nv]):
        if len(tok) != 3:
            fail(no, "vertex line needs 3 coordinates")
        try:
            vertices[k] = [float(t) for t in tok]
        except ValueError:
            fail(no, "non-numeric vertex coordinate")
    triangles = np.empty((nt, 3), dtype=np.int64)
    face_ids = np.empty(nt, dtype=np.int64)
    tags = np.empty(nt, dtype=np.int64)
    for k, (no, tok) in enumerate(lines[2 + nv :]):
        if len(tok) != 5:
            fail(no, "triangle line needs 'i j k face_id bc_tag'")
        try:
            triangles[k] = [int(t) for t in tok[:3]]
            face_ids[k] = int(tok[3])
        except ValueError:
            fail(no, "non-integer triangle index or face_id")
        if tok[4] not in _TAG_CODES:
            fail(no, f"bc_tag must be D or C, got {tok[4]!r}")
        tags[k] = _TAG_CODES[tok[4]]
        if triangles[k].min() < 0 or triangles[k].max() >= nv:
            fail(no, "vertex index out of range")

    return _orient(SurfaceMesh(vertices, triangles, face_ids, tags), orientation)
