"""Quasi-static resting poses on the infinite horizontal plane.

An object released at the lowest possible height pivots under gravity about
its lowest contact feature until its centre of mass projects inside the
support polygon. Only the convex hull participates; there is no friction,
restitution or dynamics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry.hull import convex_hull_2d
from .geometry.objects import ObjectModel
from .so3 import Z_AXIS, axis_angle_to_matrix, geodesic_distance, is_rotation, orthonormalize, rot_x, rot_y, upright_angle

UPRIGHT_TOL = math.radians(15.0)


@dataclass(frozen=True)
class SettleParams:
    contact_eps: float = 1e-6
    stability_margin: float = 1e-4
    max_tips: int = 64
    perturb_angle: float = math.radians(3.0)
    stability_tol: float = math.radians(15.0)


DEFAULT_PARAMS = SettleParams()


@dataclass(frozen=True, eq=False)
class RestState:
    orientation: np.ndarray
    support_set: tuple[int, ...]
    tips: int
    settled: bool
    margin: float
    # COM height above the plane before each tip and at rest.
    com_heights: tuple[float, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "orientation": [float(x) for x in self.orientation.reshape(-1)],
            "support_set": list(self.support_set),
            "tips": self.tips,
            "settled": self.settled,
            "margin": float(self.margin),
        }


def _support_query(poly: np.ndarray):
    """Signed margin of the origin w.r.t. a CCW polygon, plus the tipping feature.

    Returns ``(margin, q, d)`` where ``margin`` is positive inside, ``q`` is
    the nearest boundary point and ``d`` the horizontal tipping direction.
    """
    c = np.zeros(2)
    if len(poly) == 1:
        q = poly[0]
        off = c - q
        dist = math.hypot(*off)
        d = off / dist if dist > 0 else np.array([1.0, 0.0])
        return -dist, q, d
    if len(poly) == 2:
        a, b = poly
        e = b - a
        t = float(np.clip((c - a) @ e / (e @ e), 0.0, 1.0))
        q = a + t * e
        off = c - q
        dist = math.hypot(*off)
        if dist > 0:
            d = off / dist
        else:
            el = math.hypot(*e)
            d = np.array([-e[1], e[0]]) / el
        return -dist, q, d

    a = poly
    b = np.roll(poly, -1, axis=0)
    e = b - a
    el = np.hypot(e[:, 0], e[:, 1])
    # Outward normals of a CCW polygon.
    outward = np.column_stack([e[:, 1], -e[:, 0]]) / el[:, None]
    signed = -np.einsum("ij,ij->i", c - a, outward)  # positive inside
    t = np.clip(np.einsum("ij,ij->i", c - a, e) / (el * el), 0.0, 1.0)
    q_all = a + t[:, None] * e
    dist_all = np.hypot(*(c - q_all).T)
    k = int(np.argmin(dist_all))
    if np.all(signed >= 0):
        k_in = int(np.argmin(signed))
        return float(signed[k_in]), q_all[k_in], outward[k_in]
    q = q_all[k]
    off = c - q
    return -float(dist_all[k]), q, off / dist_all[k]


def settle(obj: ObjectModel, start, params: SettleParams = DEFAULT_PARAMS) -> RestState:
    """Rest orientation reached from ``start`` by energy-descent tipping."""
    H = obj.hull_points
    R = np.array(start, dtype=float)
    if not is_rotation(R):
        R = orthonormalize(R)
    heights: list[float] = []
    tips = 0
    while True:
        P = H @ R.T
        z = P[:, 2]
        zmin = float(z.min())
        heights.append(-zmin)
        support = np.flatnonzero(z - zmin <= params.contact_eps)
        xy = P[support, :2]
        ring = convex_hull_2d(xy)
        margin, q, d = _support_query(xy[ring])
        if margin >= params.stability_margin:
            return RestState(R, tuple(int(i) for i in support), tips, True, margin, tuple(heights))
        if tips >= params.max_tips:
            return RestState(R, tuple(int(i) for i in support), tips, False, margin, tuple(heights))

        pivot = np.array([q[0], q[1], zmin])
        rel = P - pivot
        u = rel[:, :2] @ d
        w = z - zmin
        cand = u > 1e-12
        cand[support] = False
        if not np.any(cand):
            return RestState(R, tuple(int(i) for i in support), tips, False, margin, tuple(heights))
        phi = float(np.min(np.arctan2(w[cand], u[cand])))
        axis = np.array([-d[1], d[0], 0.0])  # z x d
        R_next = orthonormalize(axis_angle_to_matrix(axis, phi) @ R)
        new_height = -float((H @ R_next.T)[:, 2].min())
        if not new_height < heights[-1]:
            # Only reachable when the COM sits inside the polygon closer than
            # the stability margin: tipping cannot lower it, so it stays put.
            return RestState(R, tuple(int(i) for i in support), tips, True, margin, tuple(heights))
        R = R_next
        tips += 1


def is_upright(obj: ObjectModel, R, tol: float = UPRIGHT_TOL) -> bool:
    return upright_angle(R, obj.upright) <= tol


def placement_quality_label(obj: ObjectModel, R, params: SettleParams = DEFAULT_PARAMS, tol: float = UPRIGHT_TOL) -> bool:
    """True when releasing ``obj`` at orientation ``R`` leaves it resting upright."""
    rest = settle(obj, R, params)
    return rest.settled and is_upright(obj, rest.orientation, tol)


def stability_check(obj: ObjectModel, R_rest, params: SettleParams = DEFAULT_PARAMS) -> bool:
    """Local stability: small tilts about x and y re-settle near ``R_rest``."""
    R_rest = np.asarray(R_rest, dtype=float)
    delta = params.perturb_angle
    for P in (rot_x(delta), rot_x(-delta), rot_y(delta), rot_y(-delta)):
        rest = settle(obj, P @ R_rest, params)
        if not rest.settled or geodesic_distance(rest.orientation, R_rest) > params.stability_tol:
            return False
    return True


def rest_face_normal(obj: ObjectModel, rest: RestState) -> np.ndarray:
    """World-frame outward normal of the hull face the object rests on (approximately -z)."""
    P = obj.hull_points @ rest.orientation.T
    pts = P[list(rest.support_set)]
    if len(pts) < 3:
        return -Z_AXIS.copy()
    c = pts - pts.mean(axis=0)
    n = np.linalg.svd(c)[2][-1]
    return n if n[2] < 0 else -n
