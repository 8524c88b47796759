"""Triangle meshes, OBJ exchange and mass properties."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

MIN_FACE_AREA = 1e-12


class MeshError(ValueError):
    pass


class ObjParseError(MeshError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Vertices in meters, ``(N, 3)`` float; faces ``(M, 3)`` int, counter-clockwise seen from outside."""

    vertices: np.ndarray
    faces: np.ndarray
    watertight: bool = field(init=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError(f"face index out of range for {len(v)} vertices")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "watertight", _is_watertight(f))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def triangles(self) -> np.ndarray:
        """``(M, 3, 3)`` array of face corner positions."""
        return self.vertices[self.faces]

    def face_areas(self) -> np.ndarray:
        t = self.triangles()
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    def face_normals(self) -> np.ndarray:
        t = self.triangles()
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def transformed(self, R, t=(0.0, 0.0, 0.0)) -> "TriMesh":
        return TriMesh(self.vertices @ np.asarray(R, dtype=float).T + np.asarray(t, dtype=float), self.faces)

    def n_components(self) -> int:
        """Number of connected components over shared vertices."""
        parent = list(range(self.n_vertices))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for a, b, c in self.faces.tolist():
            ra, rb, rc = find(a), find(b), find(c)
            parent[rb] = ra
            parent[find(rc)] = ra
        used = np.unique(self.faces)
        return len({find(int(i)) for i in used})

    def has_degenerate_faces(self) -> bool:
        return bool(np.any(self.face_areas() < MIN_FACE_AREA))


def _is_watertight(faces: np.ndarray) -> bool:
    """Every directed edge appears once and its reverse appears once."""
    if len(faces) == 0:
        return False
    n = int(faces.max()) + 1
    src = faces.reshape(-1)
    dst = faces[:, [1, 2, 0]].reshape(-1)
    codes = src * n + dst
    uniq, counts = np.unique(codes, return_counts=True)
    if np.any(counts != 1):
        return False
    return bool(np.all(np.isin(dst * n + src, uniq, assume_unique=True)))


def merge_meshes(meshes) -> TriMesh:
    verts, faces, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        offset += m.n_vertices
    return TriMesh(np.concatenate(verts), np.concatenate(faces))


# --- OBJ subset: v and f records only ------------------------------------------

def load_obj(path) -> TriMesh:
    vertices: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tag, *rest = line.split()
            if tag == "v":
                if len(rest) < 3:
                    raise ObjParseError(path, lineno, "vertex record needs 3 coordinates")
                try:
                    vertices.append([float(x) for x in rest[:3]])
                except ValueError as exc:
                    raise ObjParseError(path, lineno, f"bad vertex coordinate: {exc}") from None
            elif tag == "f":
                if len(rest) < 3:
                    raise ObjParseError(path, lineno, "face record needs at least 3 vertices")
                idx = []
                for tok in rest:
                    head = tok.split("/", 1)[0]
                    try:
                        k = int(head)
                    except ValueError:
                        raise ObjParseError(path, lineno, f"bad face index {tok!r}") from None
                    if k == 0:
                        raise ObjParseError(path, lineno, "face index 0 is invalid (OBJ indices are 1-based)")
                    k = k - 1 if k > 0 else len(vertices) + k
                    if not 0 <= k < len(vertices):
                        raise ObjParseError(path, lineno, f"face index {tok!r} refers to an undefined vertex")
                    idx.append(k)
                # Fan triangulation for polygons.
                for j in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[j], idx[j + 1]))
            # Other record types (vn, vt, o, g, s, usemtl, ...) are ignored.
    if not vertices:
        raise ObjParseError(path, 0, "no vertices")
    return TriMesh(np.array(vertices, dtype=float), np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_obj(mesh: TriMesh, path, header: str | None = None) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for x, y, z in mesh.vertices.tolist():
            fh.write(f"v {x!r} {y!r} {z!r}\n")
        for a, b, c in mesh.faces.tolist():
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


# --- mass properties ---------------------------------------------------------------

def volume_centroid(mesh: TriMesh) -> tuple[float, np.ndarray]:
    """Volume and centroid of a closed, outward-oriented mesh of uniform density.

    Signed tetrahedra against a reference point inside the bounding box keep
    the sums well conditioned for meshes far from the origin.
    """
    if not mesh.watertight:
        raise MeshError("volume_centroid requires a watertight mesh")
    lo, hi = mesh.bounds()
    ref = 0.5 * (lo + hi)
    t = mesh.triangles() - ref
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    six_vol = np.einsum("ij,ij->i", a, np.cross(b, c))
    volume = float(six_vol.sum()) / 6.0
    if not volume > 0:
        raise MeshError(f"mesh encloses non-positive volume {volume!r}; faces may be inward-oriented")
    centroid = (six_vol[:, None] * (a + b + c)).sum(axis=0) / (24.0 * volume) + ref
    return volume, centroid


# --- primitive builders --------------------------------------------------------------

def box_mesh(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriMesh:
    sx, sy, sz = (0.5 * float(s) for s in size)
    v = np.array([[x, y, z] for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)])
    # vertex index = 4*ix + 2*iy + iz
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    f = []
    for a, b, c, d in quads:
        f += [(a, b, c), (a, c, d)]
    return TriMesh(v + np.asarray(center, dtype=float), np.array(f))


def revolve_profile(profile, segments: int = 24) -> TriMesh:
    """Closed surface of revolution about +z.

    ``profile`` is a sequence of ``(r, z)`` points running from a point on
    the axis to another point on the axis; intermediate points must have
    ``r > 0``. Faces are oriented outward when the profile runs bottom-to-top
    along the outside (counter-clockwise in the r-z half plane).
    """
    prof = np.asarray(profile, dtype=float)
    if len(prof) < 3 or prof[0, 0] != 0.0 or prof[-1, 0] != 0.0:
        raise MeshError("profile must start and end on the axis (r = 0)")
    inner = prof[1:-1]
    if np.any(inner[:, 0] <= 0):
        raise MeshError("interior profile points must have r > 0")
    ang = 2.0 * np.pi * np.arange(segments) / segments
    cos, sin = np.cos(ang), np.sin(ang)
    rings = [np.column_stack([r * cos, r * sin, np.full(segments, z)]) for r, z in inner]
    bottom = np.array([[0.0, 0.0, prof[0, 1]]])
    top = np.array([[0.0, 0.0, prof[-1, 1]]])
    verts = np.concatenate([bottom, *rings, top])
    n_rings = len(rings)
    top_idx = len(verts) - 1

    def ring(k, j):
        return 1 + k * segments + (j % segments)

    faces = []
    for j in range(segments):
        faces.append((0, ring(0, j + 1), ring(0, j)))
    for k in range(n_rings - 1):
        for j in range(segments):
            a, b = ring(k, j), ring(k, j + 1)
            c, d = ring(k + 1, j + 1), ring(k + 1, j)
            faces.append((a, b, c))
            faces.append((a, c, d))
    for j in range(segments):
        faces.append((top_idx, ring(n_rings - 1, j), ring(n_rings - 1, j + 1)))
    mesh = TriMesh(verts, np.array(faces))
    if _signed_volume(mesh) < 0:
        mesh = TriMesh(verts, np.array(faces)[:, ::-1])
    return mesh


def _signed_volume(mesh: TriMesh) -> float:
    t = mesh.triangles()
    return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum()) / 6.0


def cylinder_mesh(radius: float, height: float, segments: int = 24) -> TriMesh:
    """Cylinder with its base on z = 0."""
    return revolve_profile([(0.0, 0.0), (radius, 0.0), (radius, height), (0.0, height)], segments)


def cone_mesh(radius: float, height: float, segments: int = 32) -> TriMesh:
    """Cone with its base disc on z = 0 and apex at (0, 0, height)."""
    return revolve_profile([(0.0, 0.0), (radius, 0.0), (0.0, height)], segments)


def icosphere(radius: float = 1.0, subdivisions: int = 3, center=(0.0, 0.0, 0.0)) -> TriMesh:
    t = (1.0 + math.sqrt(5.0)) / 2.0
    v = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=float)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ])
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(subdivisions):
        edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        uniq, inverse = np.unique(edges, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        mids = v[uniq[:, 0]] + v[uniq[:, 1]]
        mids /= np.linalg.norm(mids, axis=1, keepdims=True)
        m = inverse.reshape(3, -1).T + len(v)
        a, b, c = f[:, 0], f[:, 1], f[:, 2]
        ab, bc, ca = m[:, 0], m[:, 1], m[:, 2]
        f = np.concatenate([
            np.column_stack([a, ab, ca]),
            np.column_stack([b, bc, ab]),
            np.column_stack([c, ca, bc]),
            np.column_stack([ab, bc, ca]),
        ])
        v = np.concatenate([v, mids])
    return TriMesh(v * radius + np.asarray(center, dtype=float), f)
