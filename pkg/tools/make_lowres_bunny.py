"""Build ``src/manigrad/data/bunny_453.ply`` from a closed Stanford Bunny mesh.

The input is the JSON mesh shipped in the ``bunny`` npm package (1839 vertices,
3674 faces, watertight)::

    npm pack bunny && tar xzf bunny-1.0.1.tgz
    node -e 'require("fs").writeFileSync("bunny.json",
             JSON.stringify(require("./package/index.js")))'
    python tools/make_lowres_bunny.py bunny.json

The mesh is rescaled to the bounding box of the original Stanford scan
(metres, y up) and simplified with quadric-error edge collapses to 453
vertices.
"""

import argparse
import heapq
import json

import numpy as np

from manigrad.mesh_core import TriangleMesh, assemble_laplacian
from manigrad.ply import write_ply

# bounding box of bun_zipper.ply from the Stanford 3D Scanning Repository
STANFORD_MIN = np.array([-0.0946899, 0.0329874, -0.0618736])
STANFORD_MAX = np.array([0.0610708, 0.187321, 0.0587997])


def fit_to_stanford_box(vertices):
    lo = vertices.min(axis=0)
    hi = vertices.max(axis=0)
    scale = np.mean((STANFORD_MAX - STANFORD_MIN) / (hi - lo))
    out = (vertices - lo) * scale
    center_shift = (STANFORD_MIN + STANFORD_MAX) / 2 - (out.min(axis=0) + out.max(axis=0)) / 2
    return out + center_shift


def face_quadric(p0, p1, p2):
    n = np.cross(p1 - p0, p2 - p0)
    area2 = np.linalg.norm(n)
    if area2 == 0:
        return np.zeros((4, 4))
    n = n / area2
    p = np.append(n, -n @ p0)
    return 0.5 * area2 * np.outer(p, p)


def decimate(vertices, faces, target, min_normal_dot=0.3):
    pos = [np.array(v, float) for v in vertices]
    faces = [list(f) for f in faces]
    alive_face = [True] * len(faces)
    alive_vert = [True] * len(pos)
    vf = [set() for _ in pos]
    for i, f in enumerate(faces):
        for v in f:
            vf[v].add(i)
    quad = [np.zeros((4, 4)) for _ in pos]
    for f in faces:
        q = face_quadric(pos[f[0]], pos[f[1]], pos[f[2]])
        for v in f:
            quad[v] += q
    version = [0] * len(pos)

    def neighbors(v):
        return {u for fi in vf[v] for u in faces[fi] if u != v}

    def cost(a, b):
        q = quad[a] + quad[b]
        cands = [pos[a], pos[b], 0.5 * (pos[a] + pos[b])]
        a3 = q[:3, :3]
        if np.linalg.cond(a3) < 1e8:
            cands.insert(0, np.linalg.solve(a3, -q[:3, 3]))
        best = None
        for c in cands:
            h = np.append(c, 1.0)
            e = h @ q @ h
            if best is None or e < best[0]:
                best = (e, c)
        return best

    heap = []

    def push(a, b):
        if a > b:
            a, b = b, a
        e, c = cost(a, b)
        heapq.heappush(heap, (e, a, b, version[a], version[b], tuple(c)))

    for v in range(len(pos)):
        for u in neighbors(v):
            if v < u:
                push(v, u)

    n_alive = len(pos)
    while n_alive > target and heap:
        e, a, b, va, vb, c = heapq.heappop(heap)
        if not (alive_vert[a] and alive_vert[b]) or version[a] != va or version[b] != vb:
            continue
        c = np.array(c)
        shared = vf[a] & vf[b]
        if len(shared) != 2:
            continue
        opposite = {u for fi in shared for u in faces[fi] if u not in (a, b)}
        if neighbors(a) & neighbors(b) != opposite:
            continue
        ok = True
        for v in (a, b):
            for fi in vf[v] - shared:
                f = faces[fi]
                old = [pos[u] for u in f]
                new = [c if u in (a, b) else pos[u] for u in f]
                n_old = np.cross(old[1] - old[0], old[2] - old[0])
                n_new = np.cross(new[1] - new[0], new[2] - new[0])
                ln = np.linalg.norm(n_new)
                if ln < 1e-14 or n_old @ n_new < min_normal_dot * np.linalg.norm(n_old) * ln:
                    ok = False
                    break
                edges = [np.linalg.norm(new[i] - new[(i + 1) % 3]) for i in range(3)]
                if ln / max(edges) ** 2 < 0.05:  # reject slivers
                    ok = False
                    break
            if not ok:
                break
        if not ok:
            continue
        for fi in shared:
            alive_face[fi] = False
            for u in faces[fi]:
                vf[u].discard(fi)
        for fi in vf[b]:
            faces[fi] = [a if u == b else u for u in faces[fi]]
            vf[a].add(fi)
        vf[b] = set()
        alive_vert[b] = False
        pos[a] = c
        quad[a] = quad[a] + quad[b]
        version[a] += 1
        n_alive -= 1
        for u in neighbors(a):
            version[u] += 1
        for u in neighbors(a):
            push(a, u)
            for w in neighbors(u):
                if w != a:
                    push(u, w)
    keep = [i for i, alive in enumerate(alive_vert) if alive]
    remap = {old: new for new, old in enumerate(keep)}
    verts = np.array([pos[i] for i in keep])
    out_faces = np.array([[remap[u] for u in f] for f, alive in zip(faces, alive_face) if alive])
    return verts, out_faces


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("source", help="bunny.json with 'positions' and 'cells'")
    parser.add_argument("--target", type=int, default=453)
    parser.add_argument("--out", default="src/manigrad/data/bunny_453.ply")
    args = parser.parse_args()
    with open(args.source) as fh:
        data = json.load(fh)
    verts = fit_to_stanford_box(np.asarray(data["positions"], float))
    faces = np.asarray(data["cells"], int)
    verts, faces = decimate(verts, faces, args.target)
    mesh = TriangleMesh(verts, faces)
    lap = assemble_laplacian(mesh)
    print(f"{mesh.n_vertices} vertices, {mesh.n_faces} faces, closed={mesh.is_closed}, "
          f"area={mesh.total_area:.5f}, min mass={lap.mass_diagonal.min():.3e}")
    write_ply(args.out, mesh.vertices, mesh.faces,
              comments=["Stanford Bunny (Stanford 3D Scanning Repository), "
                        f"simplified to {mesh.n_vertices} vertices"])


if __name__ == "__main__":
    main()
