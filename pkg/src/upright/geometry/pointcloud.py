"""Point clouds, k-NN normal estimation and largest-plane extraction."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

DEFAULT_K = 16
RANSAC_DIST_TOL = 0.002
RANSAC_ANGLE_TOL = math.radians(10.0)
RANSAC_ITERATIONS = 500


class PlaneNotFoundError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "points", p)
        if self.normals is not None:
            n = np.asarray(self.normals, dtype=float).reshape(-1, 3)
            if len(n) != len(p):
                raise ValueError(f"{len(n)} normals for {len(p)} points")
            if len(n) and np.max(np.abs(np.linalg.norm(n, axis=1) - 1.0)) > 1e-6:
                raise ValueError("normals must be unit length")
            object.__setattr__(self, "normals", n)

    def __len__(self) -> int:
        return len(self.points)

    @staticmethod
    def concatenate(clouds) -> "PointCloud":
        clouds = list(clouds)
        pts = np.concatenate([c.points for c in clouds]) if clouds else np.zeros((0, 3))
        if clouds and all(c.normals is not None for c in clouds):
            return PointCloud(pts, np.concatenate([c.normals for c in clouds]))
        return PointCloud(pts)


def estimate_normals(cloud: PointCloud, k: int = DEFAULT_K) -> PointCloud:
    """Per-point normal from the smallest eigenvector of the k-NN covariance.

    The neighbourhood includes the point itself. Normals are flipped to point
    away from the cloud centroid.
    """
    pts = cloud.points
    if len(pts) < k + 1:
        raise ValueError(f"normal estimation with k={k} needs at least {k + 1} points, got {len(pts)}")
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k + 1)
    nb = pts[idx]
    centred = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centred, centred)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    outward = pts - pts.mean(axis=0)
    flip = np.einsum("ij,ij->i", normals, outward) < 0
    normals[flip] *= -1.0
    return PointCloud(pts, normals)


def largest_flat_plane(
    cloud: PointCloud,
    angle_tol: float = RANSAC_ANGLE_TOL,
    dist_tol: float = RANSAC_DIST_TOL,
    iterations: int = RANSAC_ITERATIONS,
    rng: np.random.Generator | None = None,
    return_inliers: bool = False,
):
    """RANSAC plane with the most inliers.

    A point is an inlier when it lies within ``dist_tol`` of the plane and its
    normal is within ``angle_tol`` of the plane normal, where the plane normal
    is oriented like the first sampled point's normal. Returns the
    unit-normalised mean of the inlier normals and the inlier count (and the
    inlier mask when ``return_inliers``).
    """
    if cloud.normals is None:
        raise ValueError("largest_flat_plane needs a cloud with normals")
    pts, nrm = cloud.points, cloud.normals
    if len(pts) < 3:
        raise PlaneNotFoundError(f"need at least 3 points, got {len(pts)}")
    rng = np.random.default_rng(0) if rng is None else rng
    n_pts = len(pts)
    cos_tol = math.cos(angle_tol)

    samples = np.array([rng.choice(n_pts, size=3, replace=False) for _ in range(iterations)])
    p0, p1, p2 = pts[samples[:, 0]], pts[samples[:, 1]], pts[samples[:, 2]]
    hyp = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(hyp, axis=1)
    scale = np.linalg.norm(p1 - p0, axis=1) * np.linalg.norm(p2 - p0, axis=1)
    valid = norm > 1e-9 * np.maximum(scale, 1e-300)
    if not np.any(valid):
        raise PlaneNotFoundError("every sampled triple is collinear")
    hyp = hyp[valid] / norm[valid, None]
    p0 = p0[valid]
    ref = nrm[samples[valid, 0]]
    hyp *= np.where(np.einsum("ij,ij->i", hyp, ref) < 0, -1.0, 1.0)[:, None]

    best_count, best_h = -1, -1
    chunk = max(1, 2_000_000 // n_pts)
    for start in range(0, len(hyp), chunk):
        h = hyp[start:start + chunk]
        off = np.einsum("ij,ij->i", h, p0[start:start + chunk])
        dist = np.abs(h @ pts.T - off[:, None])
        agree = (h @ nrm.T) >= cos_tol
        counts = np.count_nonzero((dist <= dist_tol) & agree, axis=1)
        j = int(np.argmax(counts))
        if counts[j] > best_count:
            best_count, best_h = int(counts[j]), start + j
    if best_count < 3:
        raise PlaneNotFoundError(f"largest plane has only {best_count} inliers")
    h = hyp[best_h]
    off = h @ p0[best_h]
    mask = (np.abs(pts @ h - off) <= dist_tol) & ((nrm @ h) >= cos_tol)
    avg = nrm[mask].sum(axis=0)
    avg /= np.linalg.norm(avg)
    if return_inliers:
        return avg, int(mask.sum()), mask
    return avg, int(mask.sum())


def plane_fit_residual(points) -> tuple[np.ndarray, float]:
    """Least-squares plane normal and RMS orthogonal residual."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    c = pts - pts.mean(axis=0)
    _, s, vt = np.linalg.svd(c, full_matrices=False)
    return vt[-1], float(s[-1] / math.sqrt(len(pts)))
