"""Reconstruction metrics and the segmentation perturbation.

IoU compares dense voxel classifications of the predicted occupancy field
and the ground-truth mesh; chamfer compares area-weighted surface samples
symmetrically, in centimeters. Sampling draws are seeded and scale along
with the geometry, so the chamfer is exactly homogeneous under uniform
scaling of both meshes.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .geometry import SceneRecord, TriangleMesh
from .meshops import surface_sample, voxel_occupancy

BOUNDS_INFLATION = 1.15
DEFAULT_IOU_RESOLUTION = 64
DEFAULT_CHAMFER_SAMPLES = 2048


def gt_bounds(mesh: TriangleMesh, inflation: float = BOUNDS_INFLATION):
    lo, hi = mesh.bounds()
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) * inflation
    return center - half, center + half


def grid_centers(lo, hi, n: int) -> np.ndarray:
    """Voxel-center lattice over [lo, hi], shape (n^3, 3), x fastest last."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    step = (hi - lo) / n
    axes = [lo[k] + (np.arange(n) + 0.5) * step[k] for k in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])


def iou(
    occupancy_fn: Callable[[np.ndarray], np.ndarray],
    gt_mesh: TriangleMesh,
    n: int = DEFAULT_IOU_RESOLUTION,
    bounds=None,
    threshold: float = 0.5,
) -> float:
    """Voxel IoU of {occupancy >= threshold} against the mesh interior.

    Both sets are evaluated at the centers of an n^3 grid over bounds
    (default: gt bounding box inflated 15%). Empty-vs-empty counts as 1.
    """
    if n < 16:
        raise ValueError("IoU grid resolution must be at least 16")
    lo, hi = gt_bounds(gt_mesh) if bounds is None else bounds
    centers = grid_centers(lo, hi, n)
    chunk = 65536  # bound the (chunk, features) intermediate
    pred = np.concatenate(
        [
            np.asarray(occupancy_fn(centers[i : i + chunk])) >= threshold
            for i in range(0, len(centers), chunk)
        ]
    )
    gt = voxel_occupancy(gt_mesh, lo, hi, n).ravel()
    union = int(np.logical_or(pred, gt).sum())
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def chamfer(
    mesh_a: TriangleMesh | None,
    mesh_b: TriangleMesh | None,
    n_samples: int = DEFAULT_CHAMFER_SAMPLES,
    seed: int = 0,
) -> float:
    """Symmetric mean nearest-sample distance in cm; inf for empty meshes.

    Each mesh is sampled with its own identically seeded stream, so
    identical meshes draw identical points and compare at exactly zero.
    """
    if (
        mesh_a is None
        or mesh_b is None
        or len(mesh_a.triangles) == 0
        or len(mesh_b.triangles) == 0
    ):
        return float("inf")
    pa, _, _ = surface_sample(
        mesh_a, n_samples, np.random.default_rng(np.random.SeedSequence(entropy=seed))
    )
    pb, _, _ = surface_sample(
        mesh_b, n_samples, np.random.default_rng(np.random.SeedSequence(entropy=seed))
    )
    d_ab, _ = cKDTree(pb).query(pa)
    d_ba, _ = cKDTree(pa).query(pb)
    return float(100.0 * 0.5 * (d_ab.mean() + d_ba.mean()))


def shift_segmentation(segmentation: np.ndarray, dx: int) -> np.ndarray:
    """Translate all labels horizontally; vacated columns become background."""
    if abs(dx) >= segmentation.shape[1]:
        raise ValueError("shift must be smaller than the image width")
    out = np.zeros_like(segmentation)
    if dx > 0:
        out[:, dx:] = segmentation[:, :-dx]
    elif dx < 0:
        out[:, :dx] = segmentation[:, -dx:]
    else:
        out[:] = segmentation
    return out


def shifted_scene(scene: SceneRecord, dx: int) -> SceneRecord:
    """Scene with perturbed segmentation; depth and ground truth untouched."""
    if dx == 0:
        return scene
    return SceneRecord(
        rgb=scene.rgb,
        depth=scene.depth,
        segmentation=shift_segmentation(scene.segmentation, dx),
        intrinsics=scene.intrinsics,
        ground_truth=scene.ground_truth,
    )


def split_visible_surface(
    scene: SceneRecord,
    label: int,
    mesh_camera_frame: TriangleMesh,
    n_samples: int = 2048,
    depth_tol: float = 0.01,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Partition mesh surface samples into (visible, hidden) under the view.

    A sample is visible when it projects into the image onto its own
    object's segment and agrees with the rendered depth; everything else
    (backside, occluded, out of frame) is hidden.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    pts, _, _ = surface_sample(mesh_camera_frame, n_samples, rng)
    intr = scene.intrinsics
    z = pts[:, 2]
    ok = z > 1e-6
    u = np.full(len(pts), -1, dtype=np.int64)
    v = np.full(len(pts), -1, dtype=np.int64)
    u[ok] = np.round(pts[ok, 0] / z[ok] * intr.fx + intr.cx).astype(np.int64)
    v[ok] = np.round(pts[ok, 1] / z[ok] * intr.fy + intr.cy).astype(np.int64)
    inside = ok & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    visible = np.zeros(len(pts), dtype=bool)
    ui, vi = u[inside], v[inside]
    seg_hit = scene.segmentation[vi, ui] == label
    depth_hit = np.abs(scene.depth[vi, ui] - z[inside]) <= depth_tol
    visible[inside] = seg_hit & depth_hit
    return pts[visible], pts[~visible]
