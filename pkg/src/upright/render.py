"""Ray-cast depth cameras, normalized depth images and unprojection.

Depth is z-depth along the camera's optical axis. Each pixel casts a single
ray through its centre; object depths are min-max normalized per image to
[-0.5, 0.5] and misses become background (+0.5, masked).

Depth image file layout (all little-endian)::

    offset  size   field
    0       12     magic b"UPRDEPTH\\0\\0\\0\\0"
    12      4      uint32 format version (1)
    16      4      uint32 camera id
    20      8      float64 raw_range min (m)
    28      8      float64 raw_range max (m)
    36      16384  4096 float32 pixels, row-major (row 0 is the top of the image)
    16420   512    background mask, row-major, np.packbits bit order (MSB first)

Total 16932 bytes.
"""
from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry.mesh import TriMesh
from .geometry.pointcloud import PointCloud

RESOLUTION = 64
DEFAULT_FOV = 60.0
RIG_RADIUS = 0.25
NEAR = 1e-6
MAGIC = b"UPRDEPTH\x00\x00\x00\x00"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<12sIIdd")
N_PIXELS = RESOLUTION * RESOLUTION
FILE_SIZE = _HEADER.size + 4 * N_PIXELS + N_PIXELS // 8

# Azimuths (degrees, counter-clockwise from +x) of the rig positions in fill order.
RIG_AZIMUTHS = {"left": 90.0, "front": 0.0, "right": -90.0, "back": 180.0}
RIG_ORDER = ("left", "front", "right", "back")


class DepthFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Camera:
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    fov: float = DEFAULT_FOV
    resolution: int = RESOLUTION

    def __post_init__(self):
        for name in ("position", "look_at", "up"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))
        if not 10.0 < self.fov < 120.0:
            raise ValueError(f"fov must be in (10, 120) degrees, got {self.fov}")
        fwd = self.look_at - self.position
        if np.linalg.norm(fwd) == 0.0:
            raise ValueError("camera position equals look_at")
        f = fwd / np.linalg.norm(fwd)
        r = np.cross(f, self.up)
        if np.linalg.norm(r) < 1e-9:
            raise ValueError("camera up vector is parallel to the viewing direction")
        r /= np.linalg.norm(r)
        object.__setattr__(self, "_basis", np.stack([r, np.cross(r, f), f]))

    @property
    def basis(self) -> np.ndarray:
        """Rows: right, up, forward (world frame)."""
        return self._basis

    def pixel_offsets(self) -> tuple[np.ndarray, np.ndarray]:
        """Image-plane coordinates (x right, y up) of pixel centres at unit z-depth."""
        n = self.resolution
        h = math.tan(math.radians(self.fov) / 2.0)
        c = (np.arange(n) + 0.5) / n * 2.0 - 1.0
        x = np.broadcast_to(c * h, (n, n))
        y = np.broadcast_to((-c * h)[:, None], (n, n))
        return x, y

    def ray_directions(self) -> np.ndarray:
        """(n, n, 3) world-frame ray directions scaled to unit z-depth."""
        x, y = self.pixel_offsets()
        r, u, f = self.basis
        return x[..., None] * r + y[..., None] * u + f

    def to_camera(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.position) @ self.basis.T


@dataclass(frozen=True, eq=False)
class CameraRig:
    cameras: tuple[Camera, ...]
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        if not self.cameras:
            raise ValueError("a rig needs at least one camera")

    def __len__(self) -> int:
        return len(self.cameras)

    @classmethod
    def standard(cls, n_cameras: int = 3, radius: float = RIG_RADIUS, center=(0.0, 0.0, 0.0), fov: float = DEFAULT_FOV) -> "CameraRig":
        """Left, front, right, back cameras (the first ``n_cameras``) aimed at ``center``."""
        if not 1 <= n_cameras <= 4:
            raise ValueError(f"rig size must be 1-4, got {n_cameras}")
        c = np.asarray(center, dtype=float)
        cams = []
        for name in RIG_ORDER[:n_cameras]:
            a = math.radians(RIG_AZIMUTHS[name])
            cams.append(Camera(c + radius * np.array([math.cos(a), math.sin(a), 0.0]), c, fov=fov))
        return cls(tuple(cams), c)

    @classmethod
    def six_axis(cls, radius: float = RIG_RADIUS, center=(0.0, 0.0, 0.0), fov: float = DEFAULT_FOV) -> "CameraRig":
        """Cameras on +-x, +-y, +-z, used by the flat-plane baseline."""
        c = np.asarray(center, dtype=float)
        cams = []
        for axis in range(3):
            for sign in (1.0, -1.0):
                d = np.zeros(3)
                d[axis] = sign
                up = np.array([1.0, 0.0, 0.0]) if axis == 2 else np.array([0.0, 0.0, 1.0])
                cams.append(Camera(c + radius * d, c, up=up, fov=fov))
        return cls(tuple(cams), c)


@dataclass(frozen=True, eq=False)
class DepthImage:
    pixels: np.ndarray
    background_mask: np.ndarray
    camera_id: int
    raw_range: tuple[float, float]

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        mask = np.asarray(self.background_mask, dtype=bool)
        if px.shape != mask.shape or px.ndim != 2:
            raise ValueError(f"pixel/mask shape mismatch {px.shape} vs {mask.shape}")
        px.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "background_mask", mask)
        object.__setattr__(self, "raw_range", (float(self.raw_range[0]), float(self.raw_range[1])))

    @property
    def empty(self) -> bool:
        return bool(self.background_mask.all())

    def metric_depth(self) -> np.ndarray:
        """Metric z-depth per pixel; NaN on background."""
        lo, hi = self.raw_range
        d = lo + (self.pixels.astype(np.float64) + 0.5) * (hi - lo)
        return np.where(self.background_mask, np.nan, d)

    def to_bytes(self) -> bytes:
        if self.pixels.shape != (RESOLUTION, RESOLUTION):
            raise DepthFormatError(f"file format is fixed at {RESOLUTION}x{RESOLUTION}")
        head = _HEADER.pack(MAGIC, FORMAT_VERSION, self.camera_id, *self.raw_range)
        body = self.pixels.astype("<f4").tobytes()
        return head + body + np.packbits(self.background_mask.reshape(-1)).tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "DepthImage":
        if len(data) != FILE_SIZE:
            raise DepthFormatError(f"expected {FILE_SIZE} bytes, got {len(data)}")
        magic, version, cam, lo, hi = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise DepthFormatError("bad magic")
        if version != FORMAT_VERSION:
            raise DepthFormatError(f"unsupported version {version}")
        off = _HEADER.size
        px = np.frombuffer(data, dtype="<f4", count=N_PIXELS, offset=off).reshape(RESOLUTION, RESOLUTION)
        bits = np.frombuffer(data, dtype=np.uint8, offset=off + 4 * N_PIXELS)
        mask = np.unpackbits(bits)[:N_PIXELS].reshape(RESOLUTION, RESOLUTION).astype(bool)
        return cls(px.astype(np.float32), mask, cam, (lo, hi))


def save_depth(img: DepthImage, path) -> None:
    with open(path, "wb") as fh:
        fh.write(img.to_bytes())


def load_depth(path) -> DepthImage:
    with open(path, "rb") as fh:
        return DepthImage.from_bytes(fh.read())


def _pixel_pairs(lo_i, hi_i, lo_j, hi_j, n):
    """Expand per-triangle pixel boxes into flat (triangle, pixel) pairs."""
    hi_i = np.minimum(hi_i, n - 1)
    hi_j = np.minimum(hi_j, n - 1)
    lo_i = np.maximum(lo_i, 0)
    lo_j = np.maximum(lo_j, 0)
    hgt = np.maximum(hi_i - lo_i + 1, 0)
    wid = np.maximum(hi_j - lo_j + 1, 0)
    counts = hgt * wid
    tri = np.repeat(np.arange(len(counts)), counts)
    starts = np.cumsum(counts) - counts
    local = np.arange(int(counts.sum())) - np.repeat(starts, counts)
    w = wid[tri]
    ii = lo_i[tri] + local // np.maximum(w, 1)
    jj = lo_j[tri] + local % np.maximum(w, 1)
    return tri, ii, jj


def cast_depth(world_triangles: np.ndarray, camera: Camera) -> np.ndarray:
    """Metric z-depth per pixel (inf on miss) for world-frame triangles (T, 3, 3)."""
    n = camera.resolution
    depth = np.full(n * n, np.inf)
    if len(world_triangles) == 0:
        return depth.reshape(n, n)
    tri_c = camera.to_camera(world_triangles.reshape(-1, 3)).reshape(-1, 3, 3)
    h = math.tan(math.radians(camera.fov) / 2.0)
    z = tri_c[:, :, 2]
    front = np.all(z > NEAR, axis=1)
    if not np.any(z > NEAR):
        return depth.reshape(n, n)

    lo_i = np.zeros(len(tri_c), dtype=np.int64)
    lo_j = np.zeros(len(tri_c), dtype=np.int64)
    hi_i = np.full(len(tri_c), n - 1, dtype=np.int64)
    hi_j = np.full(len(tri_c), n - 1, dtype=np.int64)
    # Continuous pixel-index coordinates of the projected vertices.
    zf = np.where(front[:, None], z, 1.0)
    jc = (tri_c[:, :, 0] / zf / h + 1.0) * 0.5 * n - 0.5
    ic = (1.0 - tri_c[:, :, 1] / zf / h) * 0.5 * n - 0.5
    pad = 1e-6
    lo_i[front] = np.ceil(ic[front].min(axis=1) - pad)
    hi_i[front] = np.floor(ic[front].max(axis=1) + pad)
    lo_j[front] = np.ceil(jc[front].min(axis=1) - pad)
    hi_j[front] = np.floor(jc[front].max(axis=1) + pad)
    behind = np.all(z <= NEAR, axis=1)
    hi_i[behind] = -1

    tri, ii, jj = _pixel_pairs(lo_i, hi_i, lo_j, hi_j, n)
    if tri.size == 0:
        return depth.reshape(n, n)
    c = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    d = np.column_stack([c[jj] * h, -c[ii] * h, np.ones(len(ii))])

    # Moller-Trumbore with ray origin at the camera centre; d has unit z, so t is z-depth.
    v0 = tri_c[tri, 0]
    e1 = tri_c[tri, 1] - v0
    e2 = tri_c[tri, 2] - v0
    p = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, p)
    ok = np.abs(det) > 1e-18
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = -v0
    u = np.einsum("ij,ij->i", s, p) * inv
    q = np.cross(s, e1)
    v = np.einsum("ij,ij->i", d, q) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    hit = ok & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > NEAR)
    if np.any(hit):
        np.minimum.at(depth, ii[hit] * n + jj[hit], t[hit])
    return depth.reshape(n, n)


def normalize_depth(depth: np.ndarray, camera_id: int) -> DepthImage:
    mask = ~np.isfinite(depth)
    if mask.all():
        return DepthImage(np.full(depth.shape, 0.5, dtype=np.float32), mask, camera_id, (0.0, 0.0))
    obj = depth[~mask]
    lo, hi = float(obj.min()), float(obj.max())
    px = np.full(depth.shape, 0.5)
    if hi > lo:
        px[~mask] = (obj - lo) / (hi - lo) - 0.5
    else:
        px[~mask] = 0.0
    return DepthImage(px.astype(np.float32), mask, camera_id, (lo, hi))


def place_mesh(mesh: TriMesh, com, R, t) -> np.ndarray:
    """World-frame triangles of ``mesh`` rotated by R about ``com`` and moved so com lands at t."""
    verts = (mesh.vertices - np.asarray(com, dtype=float)) @ np.asarray(R, dtype=float).T + np.asarray(t, dtype=float)
    return verts[mesh.faces]


def render_depth(obj, R, t, rig: CameraRig) -> list[DepthImage]:
    """One normalized depth image per rig camera.

    ``obj`` may be None for an empty scene. The object's centre of mass is
    placed at ``t`` (world frame), typically the rig centre.
    """
    if obj is None:
        tris = np.zeros((0, 3, 3))
    else:
        tris = place_mesh(obj.mesh, obj.com, R, t)
    images = []
    for k, cam in enumerate(rig.cameras):
        img = normalize_depth(cast_depth(tris, cam), k)
        if obj is not None and img.empty:
            warnings.warn(f"object is outside the frustum of camera {k}", RuntimeWarning, stacklevel=2)
        images.append(img)
    return images


def depth_to_point_cloud(img: DepthImage, camera: Camera) -> PointCloud:
    """World-frame points for every object pixel."""
    keep = ~img.background_mask
    if not keep.any():
        return PointCloud(np.zeros((0, 3)))
    z = img.metric_depth()[keep]
    rays = camera.ray_directions()[keep]
    return PointCloud(camera.position + z[:, None] * rays)
