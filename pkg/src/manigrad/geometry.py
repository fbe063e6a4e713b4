"""Points, fields and interpolation on triangle meshes, plus sphere helpers.

Locations on a mesh are barycentric: a face index and three nonnegative
weights summing to one.  Vertex quantities are extended to faces by linear
(P1) interpolation, whose gradients are constant on each face.
"""

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .errors import ContractError, DegenerateFaceError, DegenerateFieldError
from .mesh_core import DEGENERACY_RATIO, require_vertex_values

FIELD_DEGENERACY = 1e-8


class BaryPoint(NamedTuple):
    face: int
    coords: tuple


class BaryPoints:
    """A batch of barycentric locations.

    Parameters
    ----------
    faces : array_like of int, shape (n,)
    coords : array_like, shape (n, 3)
        Rows must be nonnegative and sum to one (to 1e-12).
    """

    def __init__(self, faces, coords):
        faces = np.atleast_1d(np.asarray(faces, dtype=np.int64))
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        if coords.shape != (len(faces), 3):
            raise ContractError("coords must have shape (n, 3) matching faces")
        if len(coords) and (np.any(coords < -1e-12) or np.any(coords > 1 + 1e-12)
                            or np.any(np.abs(coords.sum(axis=1) - 1) > 1e-12)):
            raise ContractError("barycentric coordinates must be in [0, 1] and sum to 1")
        self.faces = faces
        self.coords = np.clip(coords, 0.0, 1.0)
        self.faces.setflags(write=False)
        self.coords.setflags(write=False)

    def __len__(self):
        return len(self.faces)

    def __getitem__(self, idx):
        if np.ndim(idx) == 0 and not isinstance(idx, slice):
            return BaryPoint(int(self.faces[idx]), tuple(self.coords[idx]))
        return BaryPoints(self.faces[idx], self.coords[idx])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __repr__(self):
        return f"BaryPoints(n={len(self)})"

    def ambient(self, mesh):
        """Embedded coordinates, shape (n, 3)."""
        v = mesh.vertices[mesh.faces[self.faces]]
        return np.einsum("ni,nij->nj", self.coords, v)

    def vertex_ids(self, mesh):
        """Vertex indices of each point's face, shape (n, 3)."""
        return mesh.faces[self.faces]

    @classmethod
    def at_vertices(cls, mesh, vertices):
        """Place a point exactly on each given vertex (first incident face)."""
        vertices = np.atleast_1d(np.asarray(vertices, dtype=np.int64))
        vf = mesh.vertex_faces
        faces = np.empty(len(vertices), dtype=np.int64)
        coords = np.zeros((len(vertices), 3))
        for i, k in enumerate(vertices):
            if len(vf[k]) == 0:
                raise ContractError(f"vertex {k} belongs to no face")
            f = vf[k][0]
            faces[i] = f
            coords[i, list(mesh.faces[f]).index(k)] = 1.0
        return cls(faces, coords)

    @classmethod
    def concatenate(cls, parts):
        parts = [as_bary_points(p) for p in parts]
        return cls(np.concatenate([p.faces for p in parts]),
                   np.concatenate([p.coords for p in parts]).reshape(-1, 3))


def as_bary_points(p):
    """Coerce a BaryPoint, a sequence of them, or BaryPoints into BaryPoints."""
    if isinstance(p, BaryPoints):
        return p
    if isinstance(p, BaryPoint) or (isinstance(p, tuple) and len(p) == 2 and np.ndim(p[0]) == 0):
        return BaryPoints([p[0]], [p[1]])
    p = list(p)
    if not p:
        return BaryPoints(np.empty(0, dtype=np.int64), np.empty((0, 3)))
    return BaryPoints([q[0] for q in p], [q[1] for q in p])


def _single(p):
    return isinstance(p, BaryPoint) or (isinstance(p, tuple) and len(p) == 2
                                        and np.ndim(p[0]) == 0)


def sample_barycentric(mesh, n, seed):
    """Draw ``n`` area-uniform locations on the mesh.

    Faces are drawn with probability proportional to area; within a face,
    ``(a1, a2) ~ U(0,1)^2`` is reflected to ``(1-a1, 1-a2)`` when
    ``a1 + a2 > 1`` and ``a3 = 1 - a1 - a2``.

    Parameters
    ----------
    seed : int or numpy.random.Generator
    """
    n = int(n)
    if n < 1:
        raise ContractError("n must be >= 1")
    areas = mesh.face_areas
    total = areas.sum()
    if not total > 0:
        raise ContractError("mesh has zero total area")
    rng = np.random.default_rng(seed)
    faces = rng.choice(len(areas), size=n, replace=True, p=areas / total)
    a1 = rng.random(n)
    a2 = rng.random(n)
    flip = a1 + a2 > 1
    a1[flip] = 1 - a1[flip]
    a2[flip] = 1 - a2[flip]
    a3 = np.clip(1 - a1 - a2, 0.0, 1.0)
    return BaryPoints(faces, np.column_stack([a1, a2, a3]))


def interpolate_scalar(mesh, vertex_values, p):
    """Barycentric interpolation of vertex values.

    ``vertex_values`` may be (K,) or (K, m).  Returns a scalar (or (m,)) for a
    single :class:`BaryPoint` and an array with leading dimension n otherwise.
    """
    values = require_vertex_values(mesh, vertex_values)
    pts = as_bary_points(p)
    vals = values[mesh.faces[pts.faces]]  # (n, 3, ...)
    out = np.einsum("ni,ni...->n...", pts.coords, vals)
    return out[0] if _single(p) else out


def eigenfunction_values(mesh, spectrum, points, T=None):
    """Eigenfunctions at vertex indices or barycentric points, shape (n, T+1)."""
    n = spectrum.size if T is None else T + 1
    if n > spectrum.size:
        raise ContractError(f"truncation T={n - 1} exceeds spectrum with {spectrum.size} pairs")
    if isinstance(points, (BaryPoints, BaryPoint)) or (
            isinstance(points, list) and points and isinstance(points[0], BaryPoint)):
        pts = as_bary_points(points)
        F = spectrum.eigenfunctions[:, :n]
        return np.einsum("ni,nil->nl", pts.coords, F[mesh.faces[pts.faces]])
    return spectrum.at_vertices(points, n - 1)


@dataclass(frozen=True)
class FaceGradientBasis:
    """Gradients of the three barycentric coordinates on one face (rows)."""

    face: int
    gradients: np.ndarray

    def __iter__(self):
        return iter(self.gradients)


def face_gradients(mesh, faces):
    """Barycentric-coordinate gradients for many faces, shape (n, 3, 3).

    ``out[j, i]`` is ``grad a^i`` on ``faces[j]``:
    ``grad a^1 = n x (v3 - v2) / (2A)`` and cyclically.
    """
    faces = np.atleast_1d(np.asarray(faces, dtype=np.int64))
    v = mesh.vertices[mesh.faces[faces]]
    cross = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    two_a = np.linalg.norm(cross, axis=1)
    thresh = 2 * DEGENERACY_RATIO * mesh.face_areas.mean()
    bad = two_a <= thresh
    if bad.any():
        raise DegenerateFaceError(f"degenerate face(s) {faces[bad][:20].tolist()}",
                                  faces=faces[bad])
    nrm = cross / two_a[:, None]
    out = np.empty((len(faces), 3, 3))
    for i in range(3):
        edge = v[:, (i + 2) % 3] - v[:, (i + 1) % 3]
        out[:, i] = np.cross(nrm, edge) / two_a[:, None]
    return out


def face_gradient_basis(mesh, face):
    """Constant in-plane gradients ``(grad a^1, grad a^2, grad a^3)`` of one face."""
    return FaceGradientBasis(int(face), face_gradients(mesh, [face])[0])


def eigenfunction_gradient_at(mesh, spectrum, p, T=None):
    """Per-face gradients ``grad f_l = sum_i grad a^i f_l(v_i)``.

    Returns shape (T+1, 3) for a single point, (n, T+1, 3) for a batch.
    """
    if spectrum.source != "mesh":
        raise ContractError("eigenfunction gradients need a mesh spectrum")
    n = spectrum.size if T is None else T + 1
    pts = as_bary_points(p)
    G = face_gradients(mesh, pts.faces)
    Fv = spectrum.eigenfunctions[mesh.faces[pts.faces], :n]  # (n, 3, L)
    out = np.einsum("nik,nil->nlk", G, Fv)
    return out[0] if _single(p) else out


def directional_eigen_derivatives(mesh, spectrum, points, directions, T=None):
    """``<grad f_l(x_j), V_j>`` for each point, shape (n, T+1)."""
    pts = as_bary_points(points)
    n = spectrum.size if T is None else T + 1
    V = np.atleast_2d(np.asarray(directions, dtype=float))
    if V.shape != (len(pts), 3):
        raise ContractError("directions must have shape (n, 3)")
    G = face_gradients(mesh, pts.faces)
    g = np.einsum("nik,nk->ni", G, V)
    Fv = spectrum.eigenfunctions[mesh.faces[pts.faces], :n]
    return np.einsum("ni,nil->nl", g, Fv)


def farthest_point_sample(points, n_g, seed_index=0):
    """Greedy max-min subsampling with Euclidean distances.

    Starts at ``seed_index``; each step adds the point farthest from the
    selected set, ties going to the lowest index.
    """
    X = np.asarray(points, dtype=float)
    n_g = int(n_g)
    if n_g < 1 or n_g > len(X):
        raise ContractError(f"n_g={n_g} must be in [1, {len(X)}]")
    if not 0 <= seed_index < len(X):
        raise ContractError("seed_index out of range")
    chosen = np.empty(n_g, dtype=np.int64)
    chosen[0] = seed_index
    dist = np.linalg.norm(X - X[seed_index], axis=1)
    for i in range(1, n_g):
        nxt = int(np.argmax(dist))
        chosen[i] = nxt
        np.minimum(dist, np.linalg.norm(X - X[nxt], axis=1), out=dist)
    return chosen


@dataclass(frozen=True, eq=False)
class TangentVectorField:
    """Unit tangent vectors at mesh vertices with a degeneracy mask."""

    vectors: np.ndarray
    degenerate: np.ndarray

    @property
    def degenerate_vertices(self):
        return np.flatnonzero(self.degenerate)


def tangent_field_from_vectors(mesh, vectors, normalize=True):
    """Project per-vertex ambient vectors onto vertex tangent planes.

    Vertices whose projected length falls below 1e-8 are flagged degenerate
    and carry a zero vector.
    """
    vec = np.asarray(vectors, dtype=float)
    if vec.shape == (3,):
        vec = np.broadcast_to(vec, (mesh.n_vertices, 3))
    if vec.shape != (mesh.n_vertices, 3):
        raise ContractError("vectors must have shape (3,) or (K, 3)")
    n = mesh.vertex_normals
    proj = vec - n * np.einsum("ij,ij->i", n, vec)[:, None]
    norm = np.linalg.norm(proj, axis=1)
    degenerate = norm < FIELD_DEGENERACY
    out = np.zeros_like(proj)
    ok = ~degenerate
    out[ok] = proj[ok] / norm[ok, None] if normalize else proj[ok]
    out.setflags(write=False)
    degenerate.setflags(write=False)
    return TangentVectorField(out, degenerate)


def project_reference_field(mesh, reference):
    """Tangent field ``(I - n_k n_k^T) e`` normalized at each vertex."""
    e = np.asarray(reference, dtype=float)
    if e.shape != (3,) or not np.linalg.norm(e) > 0:
        raise ContractError("reference must be a nonzero 3-vector")
    return tangent_field_from_vectors(mesh, e)


def interpolate_tangent_field(mesh, field, p):
    """Barycentric blend of vertex vectors, re-projected onto the face plane.

    Returns a unit vector (3,) for a single point or (n, 3) for a batch.
    """
    pts = as_bary_points(p)
    vid = mesh.faces[pts.faces]
    bad = field.degenerate[vid]
    if bad.any():
        verts = np.unique(vid[bad])
        raise DegenerateFieldError(
            f"tangent field is degenerate at vertex/vertices {verts[:20].tolist()}", vertices=verts)
    w = np.einsum("ni,nij->nj", pts.coords, field.vectors[vid])
    nrm = mesh.face_normals[pts.faces]
    w = w - nrm * np.einsum("ij,ij->i", nrm, w)[:, None]
    length = np.linalg.norm(w, axis=1)
    if np.any(length < FIELD_DEGENERACY):
        i = int(np.argmax(length < FIELD_DEGENERACY))
        raise DegenerateFieldError(
            f"interpolated field vanishes on face {int(pts.faces[i])}", vertices=vid[i])
    w = w / length[:, None]
    return w[0] if _single(p) else w


def rotational_field(x):
    """Rotation field ``(-x2, x1, 0)`` about the polar axis (zero at the poles)."""
    x = np.asarray(x, dtype=float)
    return np.stack([-x[..., 1], x[..., 0], np.zeros_like(x[..., 0])], axis=-1)


def sphere_exp(x, v, t):
    """Exponential map on the unit sphere, ``cos(t|v|) x + sin(t|v|) v/|v|``."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(x) - 1) > 1e-10:
        raise ContractError("x must be a unit vector")
    if abs(np.dot(x, v)) > 1e-10:
        raise ContractError("v must be tangent to the sphere at x")
    speed = np.linalg.norm(v)
    if speed == 0 or t == 0:
        return x.copy()
    s = t * speed
    y = np.cos(s) * x + np.sin(s) * v / speed
    return y / np.linalg.norm(y)


def sphere_chart(theta, phi):
    """``(sin th cos ph, sin th sin ph, cos th)`` for polar ``theta``, azimuth ``phi``."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def scatter_to_vertices(mesh, points, values):
    """Barycentric-weighted scatter: returns (weights W_k, weighted mean z_k)."""
    pts = as_bary_points(points)
    values = np.asarray(values, dtype=float)
    if values.shape != (len(pts),):
        raise ContractError("one value per sample is required")
    W = np.zeros(mesh.n_vertices)
    S = np.zeros(mesh.n_vertices)
    vid = mesh.faces[pts.faces].ravel()
    a = pts.coords.ravel()
    np.add.at(W, vid, a)
    np.add.at(S, vid, a * np.repeat(values, 3))
    z = np.divide(S, W, out=np.zeros_like(S), where=W > 0)
    return W, z


def scatter_and_smooth(mesh, lap, points, values, penalty=None):
    """Scatter samples to vertices and smooth with a Dirichlet-energy penalty.

    Solves ``(W + iota L) z = W z_scatter`` where ``W`` holds the accumulated
    barycentric weights.  ``penalty=None`` uses ``1e-3 * trace(M)``.
    """
    W, z0 = scatter_to_vertices(mesh, points, values)
    iota = 1e-3 * float(lap.mass_diagonal.sum()) if penalty is None else float(penalty)
    if iota < 0:
        raise ContractError("penalty must be nonnegative")
    if iota == 0:
        untouched = np.flatnonzero(W <= 0)
        if len(untouched):
            raise DegenerateFieldError(
                f"{len(untouched)} vertices receive no samples and penalty is zero: "
                f"{untouched[:20].tolist()}", vertices=untouched)
        return z0
    A = (sparse.diags(W) + iota * lap.stiffness).tocsc()
    return spsolve(A, W * z0)


def _closest_on_triangles(p, a, b, c):
    """Closest point barycentrics of p on each triangle (a, b, c rows)."""
    ab = b - a
    ac = c - a
    ap = p - a
    d00 = np.einsum("ij,ij->i", ab, ab)
    d01 = np.einsum("ij,ij->i", ab, ac)
    d11 = np.einsum("ij,ij->i", ac, ac)
    d20 = np.einsum("ij,ij->i", ap, ab)
    d21 = np.einsum("ij,ij->i", ap, ac)
    den = d00 * d11 - d01 ** 2
    v = (d11 * d20 - d01 * d21) / den
    w = (d00 * d21 - d01 * d20) / den
    bary = np.column_stack([1 - v - w, v, w])
    inside = (bary >= 0).all(axis=1)
    best = np.where(inside[:, None], bary, np.nan)
    # outside: closest point on the three edges
    cands = []
    for i, j in ((0, 1), (1, 2), (2, 0)):
        P = (a, b, c)
        e = P[j] - P[i]
        t = np.clip(np.einsum("ij,ij->i", p - P[i], e) / np.einsum("ij,ij->i", e, e), 0, 1)
        bc = np.zeros((len(a), 3))
        bc[:, i] = 1 - t
        bc[:, j] = t
        cands.append(bc)
    V = np.stack([a, b, c], axis=1)
    dists = [np.linalg.norm(np.einsum("ni,nij->nj", bc, V) - p, axis=1) for bc in cands]
    edge_best = np.stack(cands)[np.argmin(np.stack(dists), axis=0), np.arange(len(a))]
    best = np.where(inside[:, None], best, edge_best)
    pts = np.einsum("ni,nij->nj", best, V)
    return best, np.linalg.norm(pts - p, axis=1)


def project_to_mesh(mesh, xyz):
    """Nearest-face projection of ambient points to barycentric locations."""
    xyz = np.atleast_2d(np.asarray(xyz, dtype=float))
    V = mesh.vertices[mesh.faces]
    faces = np.empty(len(xyz), dtype=np.int64)
    coords = np.empty((len(xyz), 3))
    for i, p in enumerate(xyz):
        bc, d = _closest_on_triangles(p, V[:, 0], V[:, 1], V[:, 2])
        f = int(np.argmin(d))
        faces[i] = f
        c = np.clip(bc[f], 0, 1)
        coords[i] = c / c.sum()
    return BaryPoints(faces, coords)


def write_samples_csv(path, points, values, extra=None):
    """Write ``face_index,a1,a2,a3,value[,extra...]`` rows."""
    pts = as_bary_points(points)
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["face_index", "a1", "a2", "a3", "value", *extra])
        for i in range(len(pts)):
            w.writerow([int(pts.faces[i]), *(repr(float(c)) for c in pts.coords[i]),
                        repr(float(values[i])), *(repr(float(col[i])) for col in extra.values())])


def read_samples_csv(path, mesh=None):
    """Read barycentric or ambient sample CSV.

    Returns ``(points, values, columns)`` where ``columns`` maps every header
    name to a float array.  Ambient files (``x,y,z,value``) are projected to
    the nearest face, which requires ``mesh``.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ContractError(f"{path}: empty CSV")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    try:
        data = np.array(body, dtype=float).reshape(len(body), len(header))
    except ValueError as exc:
        raise ContractError(f"{path}: non-numeric or ragged rows") from exc
    cols = {h: data[:, i] for i, h in enumerate(header)}
    if "value" not in cols:
        raise ContractError(f"{path}: missing 'value' column")
    if {"face_index", "a1", "a2", "a3"} <= cols.keys():
        coords = np.column_stack([cols["a1"], cols["a2"], cols["a3"]])
        pts = BaryPoints(cols["face_index"].astype(np.int64), coords / coords.sum(axis=1, keepdims=True)
                         if len(coords) else coords)
    elif {"x", "y", "z"} <= cols.keys():
        if mesh is None:
            raise ContractError("ambient sample CSV needs a mesh for projection")
        pts = project_to_mesh(mesh, np.column_stack([cols["x"], cols["y"], cols["z"]]))
    else:
        raise ContractError(f"{path}: expected face_index,a1,a2,a3 or x,y,z columns")
    return pts, cols["value"], cols
