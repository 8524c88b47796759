"""Incremental 3D convex hull and a 2D hull for support polygons.

Points are inserted in index order, so the output depends only on the input
array. A point is "outside" a face when its signed distance exceeds
``HULL_EPS`` times the extent of the point set; coplanar and interior points
are skipped.
"""
from __future__ import annotations

import numpy as np

from .mesh import TriMesh

HULL_EPS = 1e-12


class DegenerateHullError(ValueError):
    """Fewer than four non-coplanar points."""


def _initial_simplex(pts: np.ndarray, tol: float) -> list[int]:
    i0 = int(np.argmin(pts[:, 0]))
    d = np.linalg.norm(pts - pts[i0], axis=1)
    i1 = int(np.argmax(d))
    if d[i1] <= tol:
        raise DegenerateHullError("all points coincide")
    u = (pts[i1] - pts[i0]) / d[i1]
    rel = pts - pts[i0]
    perp = rel - np.outer(rel @ u, u)
    dl = np.linalg.norm(perp, axis=1)
    i2 = int(np.argmax(dl))
    if dl[i2] <= tol:
        raise DegenerateHullError("points are collinear")
    n = np.cross(pts[i1] - pts[i0], pts[i2] - pts[i0])
    n /= np.linalg.norm(n)
    dp = rel @ n
    i3 = int(np.argmax(np.abs(dp)))
    if abs(dp[i3]) <= tol:
        raise DegenerateHullError("points are coplanar")
    return [i0, i1, i2, i3]


def hull_faces(points) -> np.ndarray:
    """Outward-oriented hull triangles as index triples into ``points``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 4:
        raise DegenerateHullError(f"need at least 4 points, got {len(pts)}")
    extent = float(np.max(pts.max(axis=0) - pts.min(axis=0)))
    tol = HULL_EPS * max(extent, 1e-300)
    if extent == 0.0:
        raise DegenerateHullError("all points coincide")
    simplex = _initial_simplex(pts, max(tol, 1e-9 * extent))

    cap = 64
    faces = np.zeros((cap, 3), dtype=np.int64)
    normals = np.zeros((cap, 3))
    offsets = np.zeros(cap)
    alive = np.zeros(cap, dtype=bool)
    count = 0

    def add_face(a, b, c):
        nonlocal cap, faces, normals, offsets, alive, count
        if count == cap:
            cap *= 2
            faces = np.resize(faces, (cap, 3))
            normals = np.resize(normals, (cap, 3))
            offsets = np.resize(offsets, cap)
            grow = np.zeros(cap, dtype=bool)
            grow[:count] = alive[:count]
            alive = grow
        n = np.cross(pts[b] - pts[a], pts[c] - pts[a])
        nn = np.linalg.norm(n)
        n = n / nn if nn > 0 else n
        faces[count] = (a, b, c)
        normals[count] = n
        offsets[count] = n @ pts[a]
        alive[count] = True
        count += 1

    a, b, c, d = simplex
    centre = pts[simplex].mean(axis=0)
    for tri in ((a, b, c), (a, c, d), (a, d, b), (b, d, c)):
        p, q, r = tri
        n = np.cross(pts[q] - pts[p], pts[r] - pts[p])
        if n @ (centre - pts[p]) > 0:
            tri = (p, r, q)
        add_face(*tri)

    in_simplex = set(simplex)
    for i in range(len(pts)):
        if i in in_simplex:
            continue
        p = pts[i]
        live = np.flatnonzero(alive[:count])
        dist = normals[live] @ p - offsets[live]
        visible = live[dist > tol]
        if visible.size == 0:
            continue
        vis_faces = faces[visible]
        directed = set()
        for f in vis_faces.tolist():
            directed.update(((f[0], f[1]), (f[1], f[2]), (f[2], f[0])))
        alive[visible] = False
        # Horizon edges keep the winding of the visible face they came from.
        for f in vis_faces.tolist():
            for e in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
                if (e[1], e[0]) not in directed:
                    add_face(e[0], e[1], i)

    return faces[:count][alive[:count]].copy()


def convex_hull(points) -> TriMesh:
    """Convex hull as a compact watertight mesh.

    Hull vertices keep the relative order they had in ``points``; use
    :func:`hull_vertex_indices` to map back.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    f = hull_faces(pts)
    used = np.unique(f)
    remap = np.full(len(pts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriMesh(pts[used], remap[f])


def hull_vertex_indices(points) -> np.ndarray:
    return np.unique(hull_faces(points))


def signed_distances(hull: TriMesh, points) -> np.ndarray:
    """Max signed distance of each point over the hull's face planes (<= 0 inside)."""
    n = hull.face_normals()
    off = np.einsum("ij,ij->i", n, hull.vertices[hull.faces[:, 0]])
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    return (pts @ n.T - off).max(axis=1)


# --- 2D -------------------------------------------------------------------------

def convex_hull_2d(points, tol: float = 1e-12) -> np.ndarray:
    """Andrew's monotone chain. Returns indices, counter-clockwise, no collinear points.

    Degenerate inputs return 1 index (all coincident) or 2 (collinear).
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    if len(order) == 0:
        return order
    uniq = [int(order[0])]
    for k in order[1:]:
        if np.max(np.abs(pts[k] - pts[uniq[-1]])) > tol:
            uniq.append(int(k))
    if len(uniq) <= 2:
        return np.array(uniq, dtype=np.int64)

    def cross(o, a, b):
        return (pts[a, 0] - pts[o, 0]) * (pts[b, 1] - pts[o, 1]) - (pts[a, 1] - pts[o, 1]) * (pts[b, 0] - pts[o, 0])

    lower: list[int] = []
    for k in uniq:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], k) <= tol:
            lower.pop()
        lower.append(k)
    upper: list[int] = []
    for k in reversed(uniq):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], k) <= tol:
            upper.pop()
        upper.append(k)
    ring = lower[:-1] + upper[:-1]
    if len(ring) < 3:
        # Collinear: return the two extreme points.
        return np.array([uniq[0], uniq[-1]], dtype=np.int64)
    return np.array(ring, dtype=np.int64)
