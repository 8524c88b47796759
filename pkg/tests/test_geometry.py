import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from upright.geometry.hull import DegenerateHullError, convex_hull, convex_hull_2d, hull_vertex_indices, signed_distances
from upright.geometry.mesh import (
    MeshError,
    ObjParseError,
    TriMesh,
    box_mesh,
    cone_mesh,
    icosphere,
    load_obj,
    revolve_profile,
    save_obj,
    volume_centroid,
)
from upright.geometry.objects import FAMILIES, ObjectModel, generate_object, make_test_solid, read_manifest, write_manifest
from upright.geometry.pointcloud import (
    PlaneNotFoundError,
    PointCloud,
    estimate_normals,
    largest_flat_plane,
    plane_fit_residual,
)
from upright.resting import is_upright, settle
from upright.so3 import random_rotation

CUBE_OBJ = """# unit cube
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 3 2
f 1 4 3
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 2 3 7
f 2 7 6
f 3 4 8
f 3 8 7
f 4 1 5
f 4 5 8
"""


def unit_sphere_points(n, seed):
    p = np.random.default_rng(seed).normal(size=(n, 3))
    return p / np.linalg.norm(p, axis=1, keepdims=True)


# --- OBJ -------------------------------------------------------------------------

def test_load_minimal_cube(tmp_path):
    path = tmp_path / "cube.obj"
    path.write_text(CUBE_OBJ)
    m = load_obj(path)
    assert (m.n_vertices, m.n_faces) == (8, 12)
    assert m.watertight
    assert volume_centroid(m)[0] == pytest.approx(1.0, abs=1e-12)


def test_quads_fan_triangulated(tmp_path):
    path = tmp_path / "quad.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\nf 1/1/1 2//1 3\n")
    m = load_obj(path)
    assert m.n_faces == 3
    assert m.faces[:2].tolist() == [[0, 1, 2], [0, 2, 3]]
    assert not m.watertight


def test_index_zero_reports_line(tmp_path):
    path = tmp_path / "bad.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\n\nf 0 1 2\n")
    with pytest.raises(ObjParseError) as info:
        load_obj(path)
    assert info.value.lineno == 5
    assert ":5:" in str(info.value)


def test_undefined_index_and_bad_vertex(tmp_path):
    path = tmp_path / "bad.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")
    with pytest.raises(ObjParseError):
        load_obj(path)
    path.write_text("v 0 0\n")
    with pytest.raises(ObjParseError):
        load_obj(path)


def test_obj_round_trip(tmp_path):
    obj = generate_object("pitcher", 3)
    path = tmp_path / "p.obj"
    save_obj(obj.mesh, path, header="pitcher")
    back = load_obj(path)
    assert np.max(np.abs(back.vertices - obj.mesh.vertices)) <= 1e-6
    assert np.array_equal(back.faces, obj.mesh.faces)


# --- hull -------------------------------------------------------------------------

def test_cube_hull():
    corners = box_mesh((1, 1, 1), (0.5, 0.5, 0.5)).vertices
    hull = convex_hull(corners)
    assert hull.n_faces == 12
    assert hull.watertight
    assert volume_centroid(hull)[0] == pytest.approx(1.0, abs=1e-12)


def test_interior_point_excluded():
    corners = box_mesh((1, 1, 1), (0.5, 0.5, 0.5)).vertices
    pts = np.vstack([corners, [0.5, 0.5, 0.5]])
    assert 8 not in hull_vertex_indices(pts)
    assert convex_hull(pts).n_faces == 12


def test_sphere_points_on_hull():
    pts = unit_sphere_points(1000, 0)
    hull = convex_hull(pts)
    d = signed_distances(hull, pts)
    assert np.max(d) <= 1e-9
    # Every point is a genuine hull vertex, so it lies on the surface.
    assert len(hull_vertex_indices(pts)) == 1000
    assert np.min(d) >= -1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(5, 200))
def test_hull_matches_scipy(seed, n):
    pts = np.random.default_rng(seed).normal(size=(n, 3))
    hull = convex_hull(pts)
    ref = ConvexHull(pts)
    assert hull.watertight
    assert volume_centroid(hull)[0] == pytest.approx(ref.volume, rel=1e-9)
    assert set(hull_vertex_indices(pts)) == set(ref.vertices.tolist())
    assert np.max(signed_distances(hull, pts)) <= 1e-9


def test_hull_outward_orientation():
    pts = np.random.default_rng(5).normal(size=(50, 3))
    hull = convex_hull(pts)
    centre = pts.mean(axis=0)
    assert np.all(signed_distances(hull, centre[None]) < 0)


@pytest.mark.parametrize("pts", [
    np.zeros((5, 3)),
    np.outer(np.arange(6), [1.0, 2.0, 3.0]),
    np.column_stack([np.random.default_rng(0).random((10, 2)), np.zeros(10)]),
    np.eye(3),
])
def test_degenerate_hull(pts):
    with pytest.raises(DegenerateHullError):
        convex_hull(pts)


def test_hull_deterministic():
    pts = np.random.default_rng(9).normal(size=(300, 3))
    a, b = convex_hull(pts), convex_hull(pts.copy())
    assert np.array_equal(a.faces, b.faces) and np.array_equal(a.vertices, b.vertices)


def test_hull_2d():
    pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5], [0.5, 0]])
    ring = convex_hull_2d(pts)
    assert sorted(ring.tolist()) == [0, 1, 2, 3]
    p = pts[ring]
    area = 0.5 * np.sum(p[:, 0] * np.roll(p[:, 1], -1) - np.roll(p[:, 0], -1) * p[:, 1])
    assert area == pytest.approx(1.0)  # counter-clockwise
    assert convex_hull_2d([[0, 0], [0, 0]]).tolist() == [0]
    assert sorted(convex_hull_2d([[0, 0], [1, 1], [2, 2]]).tolist()) == [0, 2]


# --- mass properties ---------------------------------------------------------------

def test_unit_cube_volume_centroid():
    vol, c = volume_centroid(box_mesh((1, 1, 1)))
    assert vol == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(c, 0.0, atol=1e-12)


def test_translated_cube_centroid():
    vol, c = volume_centroid(box_mesh((1, 1, 1), (1, 2, 3)))
    assert np.allclose(c, [1, 2, 3], atol=1e-12)


def test_cone_centroid_quarter_height():
    # A pyramid over any polygonal base has its centroid at a quarter of the height.
    vol, c = volume_centroid(cone_mesh(1.0, 1.0, 64))
    assert c[2] == pytest.approx(0.25, abs=1e-12)
    base_area = 0.5 * 64 * math.sin(2 * math.pi / 64)
    assert vol == pytest.approx(base_area / 3.0, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["box", "cone", "cylinder", "sphere"]))
def test_centroid_equivariance(seed, kind):
    rng = np.random.default_rng(seed)
    mesh = make_test_solid(kind).mesh
    R, t = random_rotation(rng), rng.normal(size=3)
    vol, c = volume_centroid(mesh)
    vol2, c2 = volume_centroid(mesh.transformed(R, t))
    assert vol2 == pytest.approx(vol, rel=1e-9)
    assert np.max(np.abs(c2 - (R @ c + t))) <= 1e-9


def test_volume_centroid_rejects_open_mesh():
    m = box_mesh()
    with pytest.raises(MeshError):
        volume_centroid(TriMesh(m.vertices, m.faces[:-1]))


def test_mesh_rejects_bad_indices():
    with pytest.raises(MeshError):
        TriMesh(np.zeros((3, 3)), [[0, 1, 3]])


def test_revolve_profile_closed():
    m = revolve_profile([(0, 0), (1, 0), (1, 1), (0, 1)], 32)
    assert m.watertight and not m.has_degenerate_faces()
    vol, c = volume_centroid(m)
    assert vol == pytest.approx(0.5 * 32 * math.sin(2 * math.pi / 32), rel=1e-12)
    assert c[2] == pytest.approx(0.5, abs=1e-12)


# --- generated objects ---------------------------------------------------------------

def test_generation_deterministic():
    a, b = generate_object("bottle", 7), generate_object("bottle", 7)
    assert a.mesh.vertices.tobytes() == b.mesh.vertices.tobytes()
    assert a.mesh.faces.tobytes() == b.mesh.faces.tobytes()


def test_different_seeds_differ():
    assert generate_object("jar", 1).mesh.vertices.tobytes() != generate_object("jar", 2).mesh.vertices.tobytes()


@pytest.mark.parametrize("family", FAMILIES)
def test_generator_contract(family):
    for seed in range(6):
        obj = generate_object(family, seed)
        lo, hi = obj.bbox()
        assert 0.06 <= np.max(hi - lo) <= 0.20
        assert np.max(hi - lo) <= 0.20
        assert obj.mesh.watertight and not obj.mesh.has_degenerate_faces()
        assert np.array_equal(obj.upright, [0, 0, 1])
        assert obj.volume > 0
        rest = settle(obj, np.eye(3))
        assert rest.settled and is_upright(obj, rest.orientation)


def test_bowls_single_component():
    for seed in range(6):
        obj = generate_object("bowl", seed)
        assert obj.mesh.n_components() == 1 and obj.mesh.watertight


def test_bottles_have_narrow_neck():
    obj = generate_object("bottle", 0)
    v = obj.mesh.vertices
    r = np.hypot(v[:, 0], v[:, 1])
    top = v[:, 2] > 0.9 * v[:, 2].max()
    assert r[top].max() < 0.6 * r.max()


def test_unknown_family():
    with pytest.raises(ValueError):
        generate_object("teapot", 0)


def test_object_model_rejects_non_unit_upright():
    with pytest.raises(ValueError):
        ObjectModel(box_mesh(), np.array([0, 0, 2.0]), "x", "test_solid")


def test_manifest_round_trip(tmp_path):
    objs = [generate_object("mug", 0), generate_object("bowl", 1)]
    path = tmp_path / "m.jsonl"
    write_manifest(objs, path)
    rows = read_manifest(path)
    assert [r["name"] for r in rows] == ["mug_000", "bowl_001"]
    assert rows[0]["upright"] == [0.0, 0.0, 1.0]


# --- point clouds -----------------------------------------------------------------

def test_point_cloud_validation():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((3, 3)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        PointCloud(np.zeros((1, 3)), [[0, 0, 2.0]])


def test_plane_normals():
    g = np.stack(np.meshgrid(np.linspace(0, 1, 20), np.linspace(0, 1, 20)), -1).reshape(-1, 2)
    pts = np.column_stack([g, np.zeros(len(g))])
    cloud = estimate_normals(PointCloud(pts), 16)
    assert np.allclose(np.abs(cloud.normals[:, 2]), 1.0, atol=1e-12)


@pytest.mark.parametrize("k", [3, 5, 16, 40])
def test_exact_plane_normals_perpendicular(k):
    rng = np.random.default_rng(k)
    R = random_rotation(rng)
    pts = np.column_stack([rng.random((200, 2)), np.zeros(200)]) @ R.T
    n = estimate_normals(PointCloud(pts), k).normals
    assert np.max(np.abs(n @ R[:, :2])) <= 1e-6


def test_sphere_normals_radial():
    pts = unit_sphere_points(3000, 1) * 0.05
    n = estimate_normals(PointCloud(pts), 16).normals
    radial = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    ang = np.degrees(np.arccos(np.clip(np.einsum("ij,ij->i", n, radial), -1, 1)))
    assert ang.max() <= 5.0


def test_parallel_planes():
    g = np.stack(np.meshgrid(np.linspace(0, 1, 15), np.linspace(0, 1, 15)), -1).reshape(-1, 2)
    pts = np.vstack([np.column_stack([g, np.zeros(len(g))]), np.column_stack([g, np.full(len(g), 0.5)])])
    n = estimate_normals(PointCloud(pts), 8).normals
    assert np.allclose(np.abs(n[:, 2]), 1.0, atol=1e-9)
    # Oriented away from the centroid: bottom plane down, top plane up.
    assert np.all(n[: len(g), 2] < 0) and np.all(n[len(g):, 2] > 0)


def test_too_few_points_for_k():
    with pytest.raises(ValueError):
        estimate_normals(PointCloud(np.random.default_rng(0).random((10, 3))), 16)


def box_surface_cloud(size, step):
    """Grid samples on the faces of an axis-aligned box with exact outward normals."""
    size = np.asarray(size, dtype=float)
    pts, nrm, face_ids = [], [], []
    for axis in range(3):
        a, b = [i for i in range(3) if i != axis]
        ua = (np.arange(int(round(size[a] / step))) + 0.5) * step
        ub = (np.arange(int(round(size[b] / step))) + 0.5) * step
        A, B = np.meshgrid(ua, ub)
        for sign in (0.0, 1.0):
            p = np.zeros((A.size, 3))
            p[:, a], p[:, b], p[:, axis] = A.ravel(), B.ravel(), sign * size[axis]
            n = np.zeros((A.size, 3))
            n[:, axis] = 1.0 if sign else -1.0
            pts.append(p)
            nrm.append(n)
            face_ids.append(np.full(A.size, 2 * axis + int(sign)))
    return np.vstack(pts), np.vstack(nrm), np.concatenate(face_ids)


def test_box_largest_plane_is_long_face():
    pts, nrm, fid = box_surface_cloud((0.02, 0.01, 0.01), 0.0005)
    normal, count = largest_flat_plane(PointCloud(pts, nrm))
    face_counts = np.bincount(fid)
    # The 2x1 faces (normals along y or z) carry twice the samples of the 1x1 faces.
    assert abs(normal[0]) < 1e-9
    assert max(abs(normal[1]), abs(normal[2])) == pytest.approx(1.0)
    assert count == face_counts.max() == 2 * face_counts.min()


def test_plane_with_outliers():
    rng = np.random.default_rng(3)
    R = random_rotation(rng)
    n_in = 950
    plane = np.column_stack([rng.uniform(-0.05, 0.05, (n_in, 2)), rng.normal(0, 2e-4, n_in)]) @ R.T
    out = rng.uniform(-0.05, 0.05, (50, 3))
    cloud = estimate_normals(PointCloud(np.vstack([plane, out])), 16)
    # A lone plane has no inside; orient it as a one-sided surface seen from +n.
    flip = np.where(cloud.normals @ R[:, 2] < 0, -1.0, 1.0)
    normal, count = largest_flat_plane(PointCloud(cloud.points, cloud.normals * flip[:, None]))
    assert math.degrees(math.acos(min(1.0, abs(normal @ R[:, 2])))) <= 2.0
    assert count >= 0.9 * n_in


def test_collinear_cloud_rejected():
    pts = np.outer(np.linspace(0, 1, 30), [1.0, 0.0, 0.0])
    nrm = np.tile([0.0, 0.0, 1.0], (30, 1))
    with pytest.raises(PlaneNotFoundError):
        largest_flat_plane(PointCloud(pts, nrm))


def test_plane_fit_residual():
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.random((100, 2)), np.zeros(100)])
    n, rms = plane_fit_residual(pts)
    assert abs(abs(n[2]) - 1) < 1e-12 and rms < 1e-12


def test_icosphere_watertight():
    m = icosphere(0.05, 3)
    assert m.watertight
    assert np.allclose(np.linalg.norm(m.vertices, axis=1), 0.05)
