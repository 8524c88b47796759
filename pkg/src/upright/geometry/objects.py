"""Object models and the procedural household-object generator.

Every generated object is a watertight mesh in its upright frame (upright
vector ``+z``), sized to fit a 6-20 cm bounding box, and verified to come to
rest upright when released upright.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .hull import convex_hull
from .mesh import MeshError, TriMesh, box_mesh, cone_mesh, cylinder_mesh, icosphere, merge_meshes, revolve_profile, volume_centroid

FAMILIES = ("bottle", "mug", "bowl", "jar", "pitcher")
ALL_FAMILIES = FAMILIES + ("test_solid",)
DEFAULT_SCALE_RANGE = (0.06, 0.20)
SEGMENTS = 24
MAX_ATTEMPTS = 50


@dataclass(frozen=True, eq=False)
class ObjectModel:
    mesh: TriMesh
    upright: np.ndarray
    name: str
    family: str
    seed: int | None = None
    com: np.ndarray = field(init=False)
    volume: float = field(init=False)

    def __post_init__(self):
        if self.family not in ALL_FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        u = np.asarray(self.upright, dtype=float).reshape(3)
        if abs(np.linalg.norm(u) - 1.0) > 1e-9:
            raise ValueError("upright vector must be unit length")
        object.__setattr__(self, "upright", u)
        vol, com = volume_centroid(self.mesh)
        object.__setattr__(self, "volume", vol)
        object.__setattr__(self, "com", com)

    @cached_property
    def hull(self) -> TriMesh:
        return convex_hull(self.mesh.vertices)

    @cached_property
    def hull_points(self) -> np.ndarray:
        """Hull vertices relative to the centre of mass, object frame."""
        return self.hull.vertices - self.com

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.mesh.bounds()

    def manifest_entry(self) -> dict:
        lo, hi = self.bbox()
        return {
            "name": self.name,
            "family": self.family,
            "seed": self.seed,
            "upright": [float(x) for x in self.upright],
            "bbox_min": [float(x) for x in lo],
            "bbox_max": [float(x) for x in hi],
            "n_vertices": self.mesh.n_vertices,
            "n_faces": self.mesh.n_faces,
        }


def write_manifest(objects, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for obj in objects:
            fh.write(json.dumps(obj.manifest_entry(), sort_keys=True) + "\n")


def read_manifest(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# --- profile helpers -----------------------------------------------------------

def _smooth(p0, p1, n):
    """Cosine-eased radius transition from p0 to p1 (exclusive of p0)."""
    out = []
    for k in range(1, n + 1):
        s = k / n
        e = 0.5 - 0.5 * math.cos(math.pi * s)
        out.append((p0[0] + (p1[0] - p0[0]) * e, p0[1] + (p1[1] - p0[1]) * s))
    return out


def _handle(x_wall, wall_t, z_mid, reach, half_height, tube_r, n_path=14, n_ring=8) -> TriMesh:
    """Closed tube swept along a half-ellipse in the xz-plane, ends sunk into the wall."""
    delta = math.asin(min(0.9, 0.5 * wall_t / reach))
    psis = np.linspace(math.pi / 2 + delta, -math.pi / 2 - delta, n_path)
    path = np.column_stack([x_wall + reach * np.cos(psis), np.zeros(n_path), z_mid + half_height * np.sin(psis)])
    tang = np.gradient(path, axis=0)
    tang /= np.linalg.norm(tang, axis=1, keepdims=True)
    b = np.array([0.0, 1.0, 0.0])
    normal = np.cross(b, tang)
    normal /= np.linalg.norm(normal, axis=1, keepdims=True)
    phi = 2.0 * np.pi * np.arange(n_ring) / n_ring
    rings = path[:, None, :] + tube_r * (np.cos(phi)[None, :, None] * normal[:, None, :] + np.sin(phi)[None, :, None] * b)
    verts = np.concatenate([rings.reshape(-1, 3), path[[0, -1]]])
    start, end = len(verts) - 2, len(verts) - 1
    faces = []
    for k in range(n_path - 1):
        for j in range(n_ring):
            a, c = k * n_ring + j, k * n_ring + (j + 1) % n_ring
            d, e = (k + 1) * n_ring + (j + 1) % n_ring, (k + 1) * n_ring + j
            faces += [(a, c, d), (a, d, e)]
    last = (n_path - 1) * n_ring
    for j in range(n_ring):
        faces.append((start, (j + 1) % n_ring, j))
        faces.append((end, last + j, last + (j + 1) % n_ring))
    mesh = TriMesh(verts, np.array(faces))
    try:
        volume_centroid(mesh)
    except MeshError:
        mesh = TriMesh(verts, np.array(faces)[:, ::-1])
    return mesh


# --- families --------------------------------------------------------------------

def _bottle(rng, height):
    rb = height * rng.uniform(0.13, 0.19)
    rn = rb * rng.uniform(0.30, 0.42)
    body = height * rng.uniform(0.50, 0.62)
    shoulder = height * rng.uniform(0.10, 0.18)
    punt = height * rng.uniform(0.015, 0.03)
    foot_in = rb * rng.uniform(0.66, 0.80)
    heel = 0.08 * rb
    prof = [(0.0, punt), (0.5 * foot_in, 0.55 * punt), (foot_in, 0.0), (rb - heel, 0.0), (rb, heel)]
    prof += _smooth((rb, heel), (rb * rng.uniform(0.96, 1.04), body), 3)
    prof += _smooth(prof[-1], (rn, body + shoulder), 5)
    lip = 0.04 * height
    prof += [(rn, height - lip), (rn * 1.12, height - 0.6 * lip), (rn * 1.12, height), (0.0, height)]
    return revolve_profile(prof, SEGMENTS)


def _jar(rng, height):
    rb = height * rng.uniform(0.32, 0.42)
    recess = rng.uniform(0.003, 0.005)
    foot_in = rb * rng.uniform(0.55, 0.70)
    heel = 0.06 * rb
    shoulder_z = height * rng.uniform(0.70, 0.78)
    rn = rb * rng.uniform(0.80, 0.90)
    rl = rn * rng.uniform(1.00, 1.06)
    lid_h = height * rng.uniform(0.08, 0.12)
    prof = [(0.0, recess), (foot_in, recess), (foot_in, 0.0), (rb - heel, 0.0), (rb, heel), (rb, shoulder_z)]
    prof += _smooth((rb, shoulder_z), (rn, height - lid_h - 0.01 * height), 3)
    prof += [(rl, height - lid_h), (rl, height - 0.1 * lid_h), (rl - 0.1 * lid_h, height), (0.0, height)]
    return revolve_profile(prof, SEGMENTS)


def _mug(rng, height):
    r = height * rng.uniform(0.36, 0.46)
    t = rng.uniform(0.003, 0.005)
    tb = rng.uniform(0.005, 0.008)
    prof = [(0.0, 0.0), (0.93 * r, 0.0), (r, 0.006), (r, height), (r - t, height), (r - t, tb), (0.0, tb)]
    body = revolve_profile(prof, SEGMENTS)
    handle = _handle(r, t, height * rng.uniform(0.5, 0.58), reach=height * rng.uniform(0.22, 0.3),
                     half_height=height * rng.uniform(0.25, 0.32), tube_r=rng.uniform(0.004, 0.006))
    return merge_meshes([body, handle])


def _bowl(rng, width):
    rr = 0.5 * width
    depth = rr * rng.uniform(0.45, 0.65)
    t = rng.uniform(0.003, 0.005)
    rs = (rr * rr + depth * depth) / (2.0 * depth)
    rf = rr * rng.uniform(0.35, 0.5)
    sag = rs - math.sqrt(rs * rs - rf * rf)
    hf = sag + rng.uniform(0.002, 0.004)
    zc = hf + math.sqrt(rs * rs - rf * rf)
    z_rim = zc - math.sqrt(max(rs * rs - rr * rr, 0.0))
    prof = [(0.0, 0.0), (rf, 0.0)]
    for r in np.linspace(rf, rr, 9):
        prof.append((float(r), zc - math.sqrt(rs * rs - r * r)))
    ri = rs - t
    r_in_rim = math.sqrt(max(ri * ri - (zc - z_rim) ** 2, 0.0))
    prof.append((r_in_rim, z_rim))
    for r in np.linspace(r_in_rim, 0.0, 9)[1:-1]:
        prof.append((float(r), zc - math.sqrt(ri * ri - r * r)))
    prof.append((0.0, zc - ri))
    return revolve_profile(prof, SEGMENTS)


def _pitcher(rng, height):
    rb = height * rng.uniform(0.26, 0.34)
    t = rng.uniform(0.003, 0.005)
    tb = rng.uniform(0.006, 0.009)
    belly = rb * rng.uniform(1.0, 1.08)
    waist = rb * rng.uniform(0.74, 0.86)
    rim = rb * rng.uniform(0.9, 1.0)
    outer = [(0.93 * rb, 0.0), (rb, 0.006), (belly, 0.35 * height), (waist, 0.75 * height), (rim, height)]
    inner = [(rim - t, height), (waist - t, 0.75 * height), (belly - t, 0.35 * height), (rb - t, tb + 0.004), (rb - t - 0.004, tb)]
    prof = [(0.0, 0.0)] + outer + inner + [(0.0, tb)]
    body = revolve_profile(prof, SEGMENTS)
    handle = _handle(waist + 0.15 * (belly - waist), t, height * 0.58, reach=height * rng.uniform(0.18, 0.24),
                     half_height=height * rng.uniform(0.24, 0.3), tube_r=rng.uniform(0.004, 0.006))
    return merge_meshes([body, handle])


_BUILDERS = {"bottle": _bottle, "jar": _jar, "mug": _mug, "bowl": _bowl, "pitcher": _pitcher}
# Nominal size range per family (largest dimension, meters) before clipping to scale_range.
_SIZES = {"bottle": (0.12, 0.20), "jar": (0.08, 0.16), "mug": (0.08, 0.12), "bowl": (0.12, 0.18), "pitcher": (0.12, 0.20)}


def _fits(mesh: TriMesh, scale_range) -> bool:
    lo, hi = mesh.bounds()
    ext = float(np.max(hi - lo))
    return scale_range[0] <= ext <= scale_range[1]


def generate_object(family: str, seed: int, scale_range=DEFAULT_SCALE_RANGE) -> ObjectModel:
    """Deterministic procedural object for ``(family, seed, scale_range)``.

    Profiles that fail validation (size, watertightness, coming to rest
    upright from the upright orientation) are resampled from the same
    generator stream.
    """
    from ..resting import is_upright, settle

    if family not in _BUILDERS:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    lo_s, hi_s = float(scale_range[0]), float(scale_range[1])
    if not 0 < lo_s <= hi_s:
        raise ValueError(f"bad scale_range {scale_range!r}")
    rng = np.random.default_rng([FAMILIES.index(family), int(seed) & 0xFFFFFFFF, int(seed) >> 32 & 0xFFFFFFFF])
    f_lo, f_hi = _SIZES[family]
    size_lo, size_hi = max(f_lo, lo_s), min(f_hi, hi_s)
    if size_lo > size_hi:
        size_lo, size_hi = lo_s, hi_s
    for _ in range(MAX_ATTEMPTS):
        size = rng.uniform(size_lo, size_hi)
        mesh = _BUILDERS[family](rng, size)
        if not (mesh.watertight and not mesh.has_degenerate_faces() and _fits(mesh, (lo_s, hi_s))):
            continue
        obj = ObjectModel(mesh, np.array([0.0, 0.0, 1.0]), f"{family}_{int(seed):03d}", family, int(seed))
        rest = settle(obj, np.eye(3))
        if rest.settled and is_upright(obj, rest.orientation):
            return obj
    raise RuntimeError(f"could not generate a valid {family} for seed {seed} in {MAX_ATTEMPTS} attempts")


def generate_object_set(families=FAMILIES, per_family: int = 5, seed: int = 0, scale_range=DEFAULT_SCALE_RANGE) -> list[ObjectModel]:
    """``per_family`` objects for each family; object seeds are ``seed * 1000 + k``."""
    out = []
    for fam in families:
        for k in range(per_family):
            out.append(generate_object(fam, seed * 1000 + k, scale_range))
    return out


# --- test solids ------------------------------------------------------------------

def make_test_solid(kind: str, **dims) -> ObjectModel:
    """Simple solids with upright +z: ``cube``, ``box``, ``cone``, ``cylinder``, ``sphere``."""
    if kind == "cube":
        mesh = box_mesh((dims.get("size", 1.0),) * 3)
    elif kind == "box":
        mesh = box_mesh(dims.get("size", (0.08, 0.04, 0.04)))
    elif kind == "cone":
        mesh = cone_mesh(dims.get("radius", 0.04), dims.get("height", 0.08), dims.get("segments", 32))
    elif kind == "cylinder":
        mesh = cylinder_mesh(dims.get("radius", 0.03), dims.get("height", 0.1), dims.get("segments", 24))
    elif kind == "sphere":
        mesh = icosphere(dims.get("radius", 0.05), dims.get("subdivisions", 3))
    else:
        raise ValueError(f"unknown test solid {kind!r}")
    return ObjectModel(mesh, np.array([0.0, 0.0, 1.0]), f"test_{kind}", "test_solid")
