"""Triangle meshes and the cotangent Laplacian.

The stiffness matrix is stored with the positive semidefinite sign convention
(it discretizes ``-Laplace-Beltrami``), so generalized eigenvalues of
``L f = lambda M f`` are nonnegative.  The mass matrix is the barycentric lumped
mass.  Boundary edges simply receive a single cotangent term, which yields
natural (Neumann) boundary conditions.
"""

import hashlib
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse

from . import ply
from .errors import ContractError, DegenerateFaceError, MeshValidationError

COT_CLAMP = 1e6
DEGENERACY_RATIO = 1e-12


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


class TriangleMesh:
    """An oriented triangle mesh embedded in R^3.

    Parameters
    ----------
    vertices : array_like, shape (K, 3)
    faces : array_like, shape (F, 3)
        Vertex indices of each triangle, consistently oriented.
    check_degenerate : bool
        Raise :class:`DegenerateFaceError` for faces whose area is below
        ``1e-12`` times the mean face area.

    Geometry (areas, normals, adjacency) is computed lazily and cached; the
    vertex and face arrays are read-only.
    """

    def __init__(self, vertices, faces, check_degenerate=True):
        self.vertices = _frozen(vertices, float)
        self.faces = _frozen(faces, np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshValidationError("vertices must have shape (K, 3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise MeshValidationError("faces must have shape (F, 3)")
        if len(self.faces) == 0:
            raise MeshValidationError("mesh has no faces")
        self._validate_connectivity()
        if check_degenerate:
            bad = self.degenerate_faces()
            if len(bad):
                raise DegenerateFaceError(f"degenerate faces: {bad[:20].tolist()}", faces=bad)

    def __repr__(self):
        return f"TriangleMesh(n_vertices={self.n_vertices}, n_faces={self.n_faces})"

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def _validate_connectivity(self):
        f = self.faces
        k = self.n_vertices
        if f.min() < 0 or f.max() >= k:
            raise MeshValidationError("face index out of range")
        repeated = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        if repeated.any():
            idx = np.flatnonzero(repeated)
            raise MeshValidationError(f"faces with repeated vertices: {idx[:20].tolist()}")
        directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        und = np.sort(directed, axis=1)
        uniq, counts = np.unique(und, axis=0, return_counts=True)
        nonmanifold = uniq[counts > 2]
        if len(nonmanifold):
            raise MeshValidationError(
                f"{len(nonmanifold)} non-manifold edges (shared by more than two faces): "
                f"{[tuple(e) for e in nonmanifold[:20].tolist()]}",
                edges=[tuple(e) for e in nonmanifold.tolist()],
            )
        duniq, dcounts = np.unique(directed, axis=0, return_counts=True)
        flipped = duniq[dcounts > 1]
        if len(flipped):
            raise MeshValidationError(
                f"{len(flipped)} edges with inconsistent orientation: "
                f"{[tuple(e) for e in flipped[:20].tolist()]}",
                edges=[tuple(e) for e in flipped.tolist()],
            )

    def degenerate_faces(self, ratio=DEGENERACY_RATIO):
        """Indices of faces with area below ``ratio`` times the mean area."""
        areas = self.face_areas
        return np.flatnonzero(areas < ratio * areas.mean())

    @cached_property
    def _cross(self):
        v = self.vertices
        f = self.faces
        return np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])

    @cached_property
    def face_areas(self):
        return _frozen(0.5 * np.linalg.norm(self._cross, axis=1), float)

    @cached_property
    def face_normals(self):
        n = self._cross / np.maximum(2.0 * self.face_areas, np.finfo(float).tiny)[:, None]
        return _frozen(n, float)

    @cached_property
    def vertex_normals(self):
        """Area-weighted average of incident face normals, renormalized."""
        acc = np.zeros_like(self.vertices)
        for j in range(3):
            np.add.at(acc, self.faces[:, j], self._cross)
        norm = np.linalg.norm(acc, axis=1)
        return _frozen(acc / np.maximum(norm, np.finfo(float).tiny)[:, None], float)

    @cached_property
    def face_centroids(self):
        return _frozen(self.vertices[self.faces].mean(axis=1), float)

    @property
    def total_area(self):
        return float(self.face_areas.sum())

    @cached_property
    def _vertex_face_matrix(self):
        f = self.faces
        rows = f.ravel()
        cols = np.repeat(np.arange(len(f)), 3)
        return sparse.csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(self.n_vertices, len(f))
        )

    @cached_property
    def vertex_faces(self):
        """Tuple of arrays: faces incident to each vertex."""
        m = self._vertex_face_matrix
        return tuple(m.indices[m.indptr[i]:m.indptr[i + 1]].copy() for i in range(self.n_vertices))

    @cached_property
    def vertex_neighbors(self):
        """Tuple of arrays: vertices sharing an edge with each vertex."""
        f = self.faces
        i = np.concatenate([f[:, 0], f[:, 1], f[:, 2], f[:, 1], f[:, 2], f[:, 0]])
        j = np.concatenate([f[:, 1], f[:, 2], f[:, 0], f[:, 0], f[:, 1], f[:, 2]])
        adj = sparse.csr_matrix((np.ones(len(i)), (i, j)), shape=(self.n_vertices,) * 2)
        adj.sum_duplicates()
        return tuple(adj.indices[adj.indptr[k]:adj.indptr[k + 1]].copy()
                     for k in range(self.n_vertices))

    @cached_property
    def boundary_edges(self):
        """Undirected edges that belong to exactly one face, shape (E_b, 2)."""
        f = self.faces
        und = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        uniq, counts = np.unique(und, axis=0, return_counts=True)
        return uniq[counts == 1]

    @property
    def is_closed(self):
        return len(self.boundary_edges) == 0

    @cached_property
    def diameter(self):
        """Diameter of the vertex set's bounding box (cheap proxy for mesh size)."""
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    def checksum(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices).tobytes())
        h.update(np.ascontiguousarray(self.faces).tobytes())
        return h.hexdigest()


def load_ply(path):
    """Load and validate a triangle mesh from an ASCII or binary PLY file."""
    vertices, faces, _ = ply.read_ply_arrays(path)
    return TriangleMesh(vertices, faces)


def save_ply(path, mesh, vertex_attributes=None, binary=False):
    ply.write_ply(path, mesh.vertices, mesh.faces, vertex_attributes, binary=binary)


@dataclass(frozen=True)
class LaplacianPair:
    """Cotangent stiffness ``L`` (PSD, rows sum to zero) and lumped mass ``M``."""

    stiffness: sparse.csr_matrix
    mass: sparse.dia_matrix

    @property
    def mass_diagonal(self):
        return self.mass.diagonal()


def cotangents(mesh):
    """Cotangent of the interior angle at each corner, shape (F, 3).

    Column ``i`` is the angle at ``faces[:, i]``.  Values are clamped to
    ``[-1e6, 1e6]`` with a warning.
    """
    v = mesh.vertices
    f = mesh.faces
    cots = np.empty((len(f), 3))
    for i in range(3):
        a = v[f[:, i]]
        b = v[f[:, (i + 1) % 3]]
        c = v[f[:, (i + 2) % 3]]
        e1 = b - a
        e2 = c - a
        cross = np.linalg.norm(np.cross(e1, e2), axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            cots[:, i] = np.einsum("ij,ij->i", e1, e2) / cross
    bad = ~np.isfinite(cots) | (np.abs(cots) > COT_CLAMP)
    if bad.any():
        faces = np.unique(np.nonzero(bad)[0])
        warnings.warn(
            f"clamping cotangents of {len(faces)} near-degenerate faces "
            f"(first: {faces[:10].tolist()})",
            RuntimeWarning,
            stacklevel=2,
        )
        cots = np.nan_to_num(cots, nan=0.0, posinf=COT_CLAMP, neginf=-COT_CLAMP)
        cots = np.clip(cots, -COT_CLAMP, COT_CLAMP)
    return cots


def assemble_laplacian(mesh):
    """Assemble the cotangent stiffness and lumped mass matrices.

    Off-diagonal entry ``(j, k)`` is ``-(cot a + cot b) / 2`` over the angles
    opposite edge ``(j, k)``; the diagonal is the negated row sum.
    """
    bad = mesh.degenerate_faces()
    if len(bad):
        raise DegenerateFaceError(
            f"cannot assemble Laplacian: degenerate face(s) {bad[:20].tolist()}", faces=bad
        )
    f = mesh.faces
    n = mesh.n_vertices
    cots = cotangents(mesh)
    rows, cols, vals = [], [], []
    for i in range(3):
        j = f[:, (i + 1) % 3]
        k = f[:, (i + 2) % 3]
        w = -0.5 * cots[:, i]
        rows += [j, k]
        cols += [k, j]
        vals += [w, w]
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    off = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    off.sum_duplicates()
    diag = -np.asarray(off.sum(axis=1)).ravel()
    stiffness = (off + sparse.diags(diag)).tocsr()
    stiffness.sort_indices()
    lumped = np.zeros(n)
    np.add.at(lumped, f.ravel(), np.repeat(mesh.face_areas / 3.0, 3))
    return LaplacianPair(stiffness=stiffness, mass=sparse.diags(lumped))


def icosphere(subdivisions=3, radius=1.0):
    """Geodesic sphere obtained by repeated 4-to-1 subdivision of an icosahedron."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return TriangleMesh(radius * np.array(verts), np.array(faces))


def require_vertex_values(mesh, values):
    values = np.asarray(values, dtype=float)
    if values.shape[0] != mesh.n_vertices:
        raise ContractError(
            f"expected {mesh.n_vertices} vertex values, got {values.shape[0]}"
        )
    return values
