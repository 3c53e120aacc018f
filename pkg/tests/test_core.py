"""Geometry value types, camera backprojection, and scene/mesh file IO."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brrp.errors import EmptyCloudError, EmptySegmentError, SceneFormatError
from brrp.geometry import (
    CameraIntrinsics,
    PointCloud,
    SceneRecord,
    SimilarityTransform,
    TriangleMesh,
    apply_transform,
    backproject,
)
from brrp.mesh_io import load_mesh, save_mesh_ply
from brrp.primitives import box, icosphere
from brrp.scene_io import load_scene, save_scene

from conftest import random_rotation


def intrinsics(fx=100.0, fy=100.0, cx=4.0, cy=4.0, w=9, h=9):
    return CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=w, height=h)


class TestBackproject:
    def test_principal_point_maps_to_optical_axis(self):
        cam = intrinsics()
        depth = np.zeros((9, 9))
        depth[4, 4] = 1.0
        seg = (depth > 0).astype(np.int32)
        cloud = backproject(depth, cam, seg, 1)
        np.testing.assert_allclose(cloud.points, [[0.0, 0.0, 1.0]], atol=1e-12)

    def test_unit_tangent_offset(self):
        cam = intrinsics(fx=2.0, fy=2.0, cx=2.0, cy=4.0)
        depth = np.zeros((9, 9))
        depth[4, 4] = 2.0  # u = cx + fx
        seg = (depth > 0).astype(np.int32)
        cloud = backproject(depth, cam, seg, 1)
        np.testing.assert_allclose(cloud.points, [[2.0, 0.0, 2.0]], atol=1e-12)

    def test_fronto_parallel_plane(self):
        cam = intrinsics(w=4, h=4, cx=1.5, cy=1.5)
        depth = np.full((4, 4), 0.5)
        seg = np.ones((4, 4), dtype=np.int32)
        cloud = backproject(depth, cam, seg, 1)
        assert len(cloud) == 16
        np.testing.assert_allclose(cloud.points[:, 2], 0.5)

    def test_absent_label_raises(self):
        cam = intrinsics()
        with pytest.raises(EmptySegmentError):
            backproject(np.ones((9, 9)), cam, np.zeros((9, 9), np.int32), 7)

    def test_all_invalid_depth_raises(self):
        cam = intrinsics()
        with pytest.raises(EmptyCloudError):
            backproject(np.zeros((9, 9)), cam, np.ones((9, 9), np.int32), 1)


class TestSimilarityTransform:
    def test_identity(self):
        t = SimilarityTransform.identity()
        pts = np.random.default_rng(0).normal(size=(5, 3))
        np.testing.assert_allclose(t.apply(pts), pts)

    def test_scale_only(self):
        t = SimilarityTransform(np.eye(3), np.zeros(3), 2.0)
        np.testing.assert_allclose(t.apply([[1.0, 0, 0]]), [[2.0, 0, 0]])

    def test_rejects_improper_rotation(self):
        flip = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            SimilarityTransform(flip, np.zeros(3))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_compose_inverse_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        t = SimilarityTransform(
            random_rotation(rng), rng.normal(size=3), float(rng.uniform(0.2, 3.0))
        )
        pts = rng.normal(size=(10, 3))
        round_trip = t.compose(t.inverse()).apply(pts)
        np.testing.assert_allclose(round_trip, pts, atol=1e-9)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_distance_ratios_preserved(self, seed):
        rng = np.random.default_rng(seed)
        scale = float(rng.uniform(0.2, 3.0))
        t = SimilarityTransform(random_rotation(rng), rng.normal(size=3), scale)
        a, b = rng.normal(size=(2, 3))
        lhs = np.linalg.norm(t.apply([a])[0] - t.apply([b])[0])
        rhs = scale * np.linalg.norm(a - b)
        assert lhs == pytest.approx(rhs, rel=1e-9)

    def test_apply_transform_rotates_normals_without_scale(self):
        rng = np.random.default_rng(1)
        r = random_rotation(rng)
        t = SimilarityTransform(r, np.array([1.0, 2.0, 3.0]), 2.5)
        cloud = PointCloud(rng.normal(size=(4, 3)), normals=np.tile([0.0, 0.0, 1.0], (4, 1)))
        moved = apply_transform(t, cloud)
        np.testing.assert_allclose(moved.normals, np.tile(r[:, 2], (4, 1)), atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(moved.normals, axis=1), 1.0)


class TestPointCloud:
    def test_centroid_and_bounding_radius(self):
        cloud = PointCloud(np.array([[0.0, 0, 0], [2.0, 0, 0]]))
        np.testing.assert_allclose(cloud.centroid, [1.0, 0, 0])
        assert cloud.bounding_radius == pytest.approx(1.0)

    def test_empty_centroid_raises(self):
        with pytest.raises(EmptyCloudError):
            _ = PointCloud(np.zeros((0, 3))).centroid


class TestTriangleMesh:
    def test_rejects_zero_area_triangle(self):
        v = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
        with pytest.raises(ValueError):
            TriangleMesh(v, [[0, 1, 2]])

    def test_rejects_out_of_range_index(self):
        v = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]])
        with pytest.raises(ValueError):
            TriangleMesh(v, [[0, 1, 5]])

    def test_transform_scales_diagonal(self):
        mesh = box()
        t = SimilarityTransform(np.eye(3), np.zeros(3), 3.0)
        assert mesh.transformed(t).bbox_diagonal == pytest.approx(3 * mesh.bbox_diagonal)


class TestSceneRecord:
    def test_dimension_mismatch_rejected(self):
        cam = intrinsics(w=4, h=4)
        with pytest.raises(ValueError):
            SceneRecord(
                rgb=np.zeros((4, 4, 3), np.uint8),
                depth=np.zeros((5, 4)),
                segmentation=np.zeros((4, 4), np.int32),
                intrinsics=cam,
            )

    def test_object_labels_sorted_without_background(self):
        cam = intrinsics(w=4, h=4)
        seg = np.array([[0, 2], [1, 2]], np.int32)
        seg = np.kron(seg, np.ones((2, 2), np.int32))
        scene = SceneRecord(
            rgb=np.zeros((4, 4, 3), np.uint8),
            depth=np.ones((4, 4)),
            segmentation=seg,
            intrinsics=cam,
        )
        assert scene.object_labels() == [1, 2]


class TestSceneIo:
    def test_round_trip(self, tmp_path, two_object_scene):
        save_scene(tmp_path / "s", two_object_scene)
        loaded = load_scene(tmp_path / "s")
        np.testing.assert_array_equal(loaded.rgb, two_object_scene.rgb)
        np.testing.assert_array_equal(loaded.segmentation, two_object_scene.segmentation)
        # depth quantized to millimeters on disk
        np.testing.assert_allclose(loaded.depth, two_object_scene.depth, atol=5.1e-4)
        assert len(loaded.ground_truth) == len(two_object_scene.ground_truth)
        for a, b in zip(loaded.ground_truth, two_object_scene.ground_truth):
            assert a.mesh_id == b.mesh_id
            np.testing.assert_allclose(
                a.transform.rotation, b.transform.rotation, atol=1e-9
            )

    def test_missing_camera_json_names_file(self, tmp_path, two_object_scene):
        save_scene(tmp_path / "s", two_object_scene)
        (tmp_path / "s" / "camera.json").unlink()
        with pytest.raises(SceneFormatError, match="camera.json"):
            load_scene(tmp_path / "s")

    def test_reload_is_bit_stable(self, tmp_path, two_object_scene):
        save_scene(tmp_path / "a", two_object_scene)
        save_scene(tmp_path / "b", load_scene(tmp_path / "a"))
        for name in ("rgb.png", "depth.png", "seg.png", "camera.json"):
            assert (tmp_path / "a" / name).read_bytes() == (
                tmp_path / "b" / name
            ).read_bytes()


class TestMeshIo:
    def test_ply_round_trip(self, tmp_path):
        mesh = icosphere(radius=0.5, subdivisions=1)
        save_mesh_ply(tmp_path / "m.ply", mesh)
        loaded = load_mesh(tmp_path / "m.ply")
        np.testing.assert_allclose(loaded.vertices, mesh.vertices, atol=1e-6)
        np.testing.assert_array_equal(loaded.triangles, mesh.triangles)

    def test_obj_load(self, tmp_path):
        (tmp_path / "tri.obj").write_text(
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"
        )
        mesh = load_mesh(tmp_path / "tri.obj")
        assert mesh.num_triangles == 1
        np.testing.assert_allclose(mesh.vertices[1], [1.0, 0, 0])
