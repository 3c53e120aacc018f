"""Ray-cast renderer and procedural scene generator."""

import numpy as np
import pytest

from brrp.geometry import CameraIntrinsics, backproject
from brrp.meshops import point_mesh_distance
from brrp.primitives import box, default_pool, icosphere
from brrp.render import build_bvh, pixel_rays, raycast, render
from brrp.scenegen import (
    SceneGenConfig,
    default_intrinsics,
    generate_scene,
    look_at,
    table_quad,
    yaw_rotation,
)


def small_intrinsics(w=32, h=24, fov=60.0):
    f = (w / 2.0) / np.tan(np.radians(fov) / 2.0)
    return CameraIntrinsics(fx=f, fy=f, cx=(w - 1) / 2, cy=(h - 1) / 2, width=w, height=h)


def brute_raycast(dirs, a, b, c):
    """Reference Moller-Trumbore over every (ray, triangle) pair."""
    e1 = b - a
    e2 = c - a
    t_best = np.full(len(dirs), np.inf)
    hit = np.full(len(dirs), -1, dtype=np.int64)
    for ti in range(len(a)):
        pvec = np.cross(dirs, e2[ti])
        det = pvec @ e1[ti]
        ok = np.abs(det) > 1e-12
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = -a[ti]
        u = (pvec @ tvec) * inv
        qvec = np.cross(tvec[None, :], e1[ti])[0]
        v = (dirs @ qvec) * inv
        t = (e2[ti] @ qvec) * inv
        good = ok & (u >= 0) & (v >= 0) & (u + v <= 1.0) & (t > 1e-12)
        better = good & (t < t_best)
        t_best[better] = t[better]
        hit[better] = ti
    return t_best, hit


class TestRaycast:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        mesh = icosphere(0.4, 2, center=(0.05, -0.1, 1.2))
        a, b, c = mesh.triangle_corners()
        dirs = np.column_stack(
            [rng.uniform(-0.4, 0.4, (300, 2)), np.ones(300)]
        )
        bvh = build_bvh(a, b, c)
        t_fast, _ = raycast(dirs, a, b, c, bvh)
        t_ref, _ = brute_raycast(dirs, a, b, c)
        np.testing.assert_allclose(t_fast, t_ref, atol=1e-12)

    def test_axis_parallel_rays_no_nan(self):
        mesh = box((0.5, 0.5, 0.5), center=(0.0, 0.0, 2.0))
        a, b, c = mesh.triangle_corners()
        dirs = np.array([[0.0, 0, 1.0], [0.0, 0.2, 1.0], [1.0, 0, 0.0]])
        t, tri = raycast(dirs, a, b, c, build_bvh(a, b, c))
        assert not np.isnan(t).any()
        assert t[0] == pytest.approx(1.75)  # front face of the box
        assert tri[2] == -1  # sideways ray misses

    def test_nearest_of_stacked_surfaces(self):
        near = box((1.0, 1.0, 0.01), center=(0, 0, 1.0))
        far = box((1.0, 1.0, 0.01), center=(0, 0, 2.0))
        verts = np.concatenate([near.vertices, far.vertices])
        faces = np.concatenate([near.triangles, far.triangles + len(near.vertices)])
        from brrp.geometry import TriangleMesh

        both = TriangleMesh(verts, faces)
        a, b, c = both.triangle_corners()
        t, _ = raycast(np.array([[0.0, 0, 1.0]]), a, b, c, build_bvh(a, b, c))
        assert t[0] == pytest.approx(0.995)


class TestRender:
    def test_overhead_cube_depth(self):
        # unit cube resting on z=0 in world, camera straight above at height h
        h = 2.0
        cam = look_at(eye=(0.0, 0, h), target=(0.0, 0, 0))
        cube = box((1.0, 1.0, 1.0), center=(0.0, 0, 0.5)).transformed(cam)
        intr = small_intrinsics()
        depth, seg = render([cube], [1], intr)
        cy, cx = int(round(intr.cy)), int(round(intr.cx))
        assert depth[cy, cx] == pytest.approx(h - 1.0, abs=1e-6)
        assert seg[cy, cx] == 1

    def test_background_pixels_zero(self):
        cam = look_at(eye=(0.0, 0, 2.0), target=(0.0, 0, 0))
        cube = box((0.2, 0.2, 0.2), center=(0.0, 0, 0.1)).transformed(cam)
        depth, seg = render([cube], [1], small_intrinsics())
        corner_depth = depth[0, 0]
        assert corner_depth == 0.0 and seg[0, 0] == 0

    def test_mismatched_labels(self):
        with pytest.raises(ValueError):
            render([box()], [1, 2], small_intrinsics())

    def test_backprojection_lands_on_mesh(self):
        cam = look_at(eye=(0.6, 0.4, 1.2), target=(0.0, 0, 0))
        world = icosphere(0.3, 2, center=(0.0, 0, 0.3))
        meshcam = world.transformed(cam)
        intr = small_intrinsics(w=48, h=36)
        depth, seg = render([meshcam], [1], intr)
        cloud = backproject(depth, intr, seg, 1)
        d = point_mesh_distance(cloud.points, meshcam)
        assert d.max() < 1e-5


class TestLookAt:
    def test_rotation_orthonormal(self):
        cam = look_at(eye=(1.0, 2.0, 3.0), target=(0.0, 0, 0))
        r = cam.rotation
        np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(r) == pytest.approx(1.0)

    def test_target_lands_on_optical_axis(self):
        cam = look_at(eye=(0.5, -0.8, 1.5), target=(0.1, 0.2, 0.0))
        p = cam.apply(np.array([[0.1, 0.2, 0.0]]))[0]
        assert p[0] == pytest.approx(0.0, abs=1e-12)
        assert p[1] == pytest.approx(0.0, abs=1e-12)
        assert p[2] > 0

    def test_straight_down_view_handled(self):
        cam = look_at(eye=(0.0, 0, 2.0), target=(0.0, 0, 0))
        p = cam.apply(np.array([[0.0, 0, 0.0]]))[0]
        np.testing.assert_allclose(p, [0, 0, 2.0], atol=1e-12)


class TestSceneGen:
    def test_default_intrinsics_formula(self):
        config = SceneGenConfig(image_width=160, image_height=120, fov_deg=60.0)
        intr = default_intrinsics(config)
        assert intr.fx == pytest.approx((160 / 2) / np.tan(np.radians(30.0)))
        assert intr.fx == intr.fy
        assert intr.cx == pytest.approx(79.5)
        assert intr.cy == pytest.approx(59.5)

    def test_yaw_rotation_is_planar(self):
        r = yaw_rotation(0.7)
        np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(r[2], [0, 0, 1.0])

    def test_table_quad_flat(self):
        quad = table_quad(2.0)
        assert (quad.vertices[:, 2] == 0).all()
        assert len(quad.triangles) == 2

    def test_generated_scene_invariants(self, pool):
        record, info = generate_scene(pool, SceneGenConfig(max_objects=4, seed=11))
        labels = sorted(set(record.segmentation.ravel().tolist()) - {0})
        assert labels == list(range(1, len(record.ground_truth) + 1))
        assert info["placed"] == len(record.ground_truth)
        assert info["placed"] + info["skipped"] == info["requested"]
        assert (record.depth[record.segmentation > 0] > 0).all()

    def test_objects_rest_on_table(self, pool, pool_dict):
        record, info = generate_scene(pool, SceneGenConfig(max_objects=3, seed=5))
        # invert the camera transform per object: lowest vertex at z=0 world
        eye = np.asarray(info["camera_eye"])
        for gt in record.ground_truth:
            verts_cam = gt.transform.apply(pool_dict[gt.mesh_id].vertices)
            cam = look_at(eye, np.array([0.0, 0.0, 0.05]))
            world = cam.inverse().apply(verts_cam)
            assert world[:, 2].min() == pytest.approx(0.0, abs=1e-9)

    def test_footprints_disjoint(self, pool, pool_dict):
        record, info = generate_scene(pool, SceneGenConfig(max_objects=6, seed=8))
        eye = np.asarray(info["camera_eye"])
        cam = look_at(eye, np.array([0.0, 0.0, 0.05]))
        circles = []
        for gt in record.ground_truth:
            verts = cam.inverse().apply(gt.transform.apply(pool_dict[gt.mesh_id].vertices))
            center = verts[:, :2].mean(axis=0)
            radius = np.linalg.norm(verts[:, :2] - center, axis=1).max()
            circles.append((center, radius))
        for i in range(len(circles)):
            for j in range(i + 1, len(circles)):
                gap = np.linalg.norm(circles[i][0] - circles[j][0])
                # generous: centers farther apart than the larger radius
                assert gap > max(circles[i][1], circles[j][1]) * 0.5

    def test_segmentation_backprojects_onto_gt_mesh(self, pool, pool_dict):
        record, _ = generate_scene(pool, SceneGenConfig(max_objects=2, seed=3))
        for i, gt in enumerate(record.ground_truth, start=1):
            cloud = backproject(record.depth, record.intrinsics, record.segmentation, i)
            meshcam = pool_dict[gt.mesh_id].transformed(gt.transform)
            d = point_mesh_distance(cloud.points, meshcam)
            assert d.max() < 1e-5

    def test_same_seed_identical_scene(self, pool):
        a, _ = generate_scene(pool, SceneGenConfig(max_objects=3, seed=21))
        b, _ = generate_scene(pool, SceneGenConfig(max_objects=3, seed=21))
        np.testing.assert_array_equal(a.depth, b.depth)
        np.testing.assert_array_equal(a.segmentation, b.segmentation)
        np.testing.assert_array_equal(a.rgb, b.rgb)

    def test_empty_pool_rejected(self):
        with pytest.raises(ValueError):
            generate_scene([], SceneGenConfig())

    def test_rgb_palette_consistency(self, pool):
        record, _ = generate_scene(pool, SceneGenConfig(max_objects=3, seed=2))
        for label in range(1, len(record.ground_truth) + 1):
            colors = record.rgb[record.segmentation == label]
            assert (colors == colors[0]).all()
