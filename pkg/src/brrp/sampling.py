"""Negative sampling: turn one segmented depth image into labeled
occupied/unoccupied 3D points for a single object.

Sources, per object: the surface endpoint of every object pixel ray
(occupied), stratified free-space samples along each ray (unoccupied),
and a ball of samples just below the table plane (occupied, so the map
closes underneath). A grid subsample bounds the set size.

Mask pixels whose points land inside the fitted table's inlier band are
table returns, not object surface; a loose mask always drags in a strip
of them, so they are reassigned to the background before sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyCloudError, EmptySegmentError, PlaneFitError, TooFewPointsError
from .geometry import CameraIntrinsics, PointCloud, SceneRecord, as_points, backproject

BALL_RADIUS_FRACTION = 0.5
SPHERE_INFLATION = 1.2
RAY_FALLBACK_DEPTH = 0.15
MIN_SURFACE_POINTS = 10
MIN_PLANE_INLIER_RATIO = 0.2


@dataclass(frozen=True)
class SamplingConfig:
    n_ray: int = 16
    ball_draws: int = 128
    cell_size: float = 0.015
    plane_threshold: float = 0.008
    plane_iterations: int = 500
    max_rays: int = 2000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if self.n_ray < 1 or self.ball_draws < 0 or self.max_rays < 1:
            raise ValueError("sample counts must be positive")


@dataclass(frozen=True)
class PlaneModel:
    """Plane n.x = offset with unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self) -> None:
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(n)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError("plane normal must be unit length")
        n.flags.writeable = False
        object.__setattr__(self, "normal", n)

    def signed_distance(self, points) -> np.ndarray:
        return as_points(points) @ self.normal - self.offset


@dataclass(frozen=True)
class ObservationSamples:
    """Labeled training points for one object; label 1 means occupied."""

    points: np.ndarray
    labels: np.ndarray
    object_id: int

    def __post_init__(self) -> None:
        pts = as_points(self.points)
        lab = np.asarray(self.labels)
        if len(lab) != len(pts):
            raise ValueError("points and labels must have equal length")
        if not np.isin(lab, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        lab = lab.astype(np.uint8)
        if not (lab == 1).any() or not (lab == 0).any():
            raise TooFewPointsError(
                f"object {self.object_id}: need both occupied and unoccupied samples"
            )
        pts.flags.writeable = False
        lab.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lab)


def fit_table_plane(
    background_points,
    threshold: float = 0.008,
    iterations: int = 500,
    rng: np.random.Generator | None = None,
    orient_toward=None,
) -> PlaneModel:
    """RANSAC plane over background points, least-squares refit on inliers.

    The normal is flipped so orient_toward points (object centroids) sit on
    the positive side.
    """
    pts = as_points(background_points)
    n = len(pts)
    if n < 3:
        raise PlaneFitError(f"need at least 3 background points, got {n}")
    rng = np.random.default_rng(0) if rng is None else rng
    idx = rng.integers(0, n, size=(iterations, 3))
    a, b, c = pts[idx[:, 0]], pts[idx[:, 1]], pts[idx[:, 2]]
    normals = np.cross(b - a, c - a)
    lens = np.linalg.norm(normals, axis=1)
    ok = lens > 1e-12
    normals[ok] /= lens[ok, None]
    offsets = np.einsum("ij,ij->i", normals, a)
    best_count = -1
    best = None
    chunk = max(1, int(2e6 // n))
    for lo in range(0, iterations, chunk):
        nrm = normals[lo : lo + chunk]
        off = offsets[lo : lo + chunk]
        d = np.abs(pts @ nrm.T - off[None, :])  # (n, chunk)
        counts = (d <= threshold).sum(axis=0)
        counts[~ok[lo : lo + chunk]] = -1
        i = int(np.argmax(counts))
        if counts[i] > best_count:
            best_count = int(counts[i])
            best = (nrm[i], off[i])
    if best is None or best_count < MIN_PLANE_INLIER_RATIO * n:
        raise PlaneFitError(
            f"best plane has {max(best_count, 0)}/{n} inliers, below "
            f"{MIN_PLANE_INLIER_RATIO:.0%}"
        )
    inliers = pts[np.abs(pts @ best[0] - best[1]) <= threshold]
    centroid = inliers.mean(axis=0)
    _, _, vt = np.linalg.svd(inliers - centroid, full_matrices=False)
    normal = vt[-1] / np.linalg.norm(vt[-1])
    if orient_toward is not None:
        targets = as_points(orient_toward)
        if float(np.mean(targets @ normal - centroid @ normal)) < 0:
            normal = -normal
    return PlaneModel(normal, float(centroid @ normal))


def sample_rays(
    depth: np.ndarray,
    intrinsics: CameraIntrinsics,
    segmentation: np.ndarray,
    object_id: int,
    config: SamplingConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Occupied surface endpoints plus stratified free-space ray samples.

    Free samples live strictly between the camera and the surface hit,
    restricted to the chord where the ray crosses the object's bounding
    sphere inflated by 20% (last 15 cm before the hit when degenerate).
    """
    mask = (segmentation == object_id) & (depth > 0)
    vs, us = np.nonzero(mask)
    if len(vs) == 0:
        raise EmptySegmentError(f"object {object_id} has no valid pixels")
    if len(vs) > config.max_rays:
        keep = np.sort(rng.choice(len(vs), size=config.max_rays, replace=False))
        vs, us = vs[keep], us[keep]
    z = depth[vs, us].astype(np.float64)
    dirs = np.column_stack(
        [
            (us - intrinsics.cx) / intrinsics.fx,
            (vs - intrinsics.cy) / intrinsics.fy,
            np.ones(len(us)),
        ]
    )
    endpoints = z[:, None] * dirs
    d_len = np.linalg.norm(dirs, axis=1)
    unit = dirs / d_len[:, None]
    t_hit = z * d_len

    center = endpoints.mean(axis=0)
    sphere_r = SPHERE_INFLATION * float(
        np.linalg.norm(endpoints - center, axis=1).max(initial=0.0)
    )
    proj = unit @ center
    disc = proj**2 - (center @ center - sphere_r**2)
    entry = np.where(disc > 0, proj - np.sqrt(np.maximum(disc, 0.0)), np.nan)
    lo = np.maximum(entry, 0.0)
    bad = ~np.isfinite(entry) | (lo >= t_hit)
    lo[bad] = np.maximum(t_hit[bad] - RAY_FALLBACK_DEPTH, 0.0)
    # stratified draw in [lo, t_hit): one sample per stratum, jitter kept
    # off the stratum edges so depths stay strictly increasing
    strata = (np.arange(config.n_ray) + 0.0)[None, :]
    u = 0.01 + 0.98 * rng.random((len(t_hit), config.n_ray))
    t = lo[:, None] + (t_hit - lo)[:, None] * (strata + u) / config.n_ray
    free = (t[..., None] * unit[:, None, :]).reshape(-1, 3)
    points = np.concatenate([endpoints, free])
    labels = np.concatenate(
        [np.ones(len(endpoints), dtype=np.uint8), np.zeros(len(free), dtype=np.uint8)]
    )
    return points, labels


def sample_below_object(
    object_points, plane: PlaneModel, config: SamplingConfig, rng: np.random.Generator
) -> np.ndarray:
    """Occupied filler samples in a ball pushed under the table plane."""
    pts = as_points(object_points)
    centroid = pts.mean(axis=0)
    radius = BALL_RADIUS_FRACTION * float(
        np.linalg.norm(pts - centroid, axis=1).max(initial=0.0)
    )
    if radius <= 0:
        return np.empty((0, 3))
    center = centroid - plane.signed_distance(centroid[None])[0] * plane.normal
    center = center - 0.5 * radius * plane.normal
    draws = rng.standard_normal((config.ball_draws, 3))
    draws /= np.linalg.norm(draws, axis=1, keepdims=True)
    draws *= radius * rng.random((config.ball_draws, 1)) ** (1.0 / 3.0)
    ball = center + draws
    return ball[plane.signed_distance(ball) < 0]


def grid_subsample(
    points, labels, cell_size: float
) -> tuple[np.ndarray, np.ndarray]:
    """One representative per (grid cell, label): the member nearest the
    group centroid, ties resolved by input order. Idempotent."""
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    pts = as_points(points)
    lab = np.asarray(labels)
    if len(pts) == 0:
        return pts.copy(), lab.copy()
    keys = np.floor(pts / cell_size).astype(np.int64)
    rows = np.column_stack([keys, lab.astype(np.int64)])
    _, group, counts = np.unique(rows, axis=0, return_inverse=True, return_counts=True)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, group, pts)
    centroids = sums / counts[:, None]
    dist = np.linalg.norm(pts - centroids[group], axis=1)
    order = np.lexsort((np.arange(len(pts)), dist, group))
    first = order[np.searchsorted(group[order], np.arange(len(counts)))]
    first = np.sort(first)
    return pts[first], lab[first]


def _object_pixels(
    scene: SceneRecord, object_id: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pixel indices and camera-frame points for one segment."""
    seg = np.asarray(scene.segmentation)
    present = seg == object_id
    if not present.any():
        raise EmptySegmentError(f"label {object_id} not present in segmentation")
    depth = np.asarray(scene.depth, dtype=np.float64)
    mask = present & (depth > 0)
    if not mask.any():
        raise EmptyCloudError(f"label {object_id} has no valid depth")
    vs, us = np.nonzero(mask)
    z = depth[vs, us]
    intr = scene.intrinsics
    points = np.column_stack(
        [z * (us - intr.cx) / intr.fx, z * (vs - intr.cy) / intr.fy, z]
    )
    return vs, us, points


def _object_rng(config: SamplingConfig, object_id: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=config.seed, spawn_key=(object_id,))
    )


def _scene_plane(
    scene: SceneRecord, orient_toward, config: SamplingConfig, rng: np.random.Generator
) -> PlaneModel:
    try:
        background = backproject(scene.depth, scene.intrinsics, scene.segmentation, 0)
    except EmptySegmentError as exc:
        raise PlaneFitError("scene has no background pixels for the table fit") from exc
    return fit_table_plane(
        background.points,
        threshold=config.plane_threshold,
        iterations=config.plane_iterations,
        rng=rng,
        orient_toward=orient_toward,
    )


def _table_keep(
    points: np.ndarray, plane: PlaneModel, config: SamplingConfig, object_id: int
) -> np.ndarray:
    """Boolean keep mask: points clear of the table's inlier band."""
    keep = plane.signed_distance(points) > config.plane_threshold
    if keep.sum() < MIN_SURFACE_POINTS:
        raise TooFewPointsError(
            f"object {object_id}: {int(keep.sum())} surface points off the "
            f"table, need {MIN_SURFACE_POINTS}"
        )
    return keep


def segment_surface(
    scene: SceneRecord,
    object_id: int,
    config: SamplingConfig,
    plane: PlaneModel | None = None,
) -> PointCloud:
    """Backprojected cloud for one object with table returns removed.

    Keeping table points would inflate the object's frame and plant
    occupied labels behind the true surface, so anything within the
    plane-inlier band (or under the plane) is dropped. Raises
    ``TooFewPointsError`` when too few points survive.
    """
    _, _, points = _object_pixels(scene, object_id)
    if len(points) < MIN_SURFACE_POINTS:
        raise TooFewPointsError(
            f"object {object_id}: {len(points)} surface points, "
            f"need {MIN_SURFACE_POINTS}"
        )
    if plane is None:
        plane = _scene_plane(
            scene, points.mean(axis=0)[None], config, _object_rng(config, object_id)
        )
    return PointCloud(points[_table_keep(points, plane, config, object_id)])


def build_observation(
    scene: SceneRecord, object_id: int, config: SamplingConfig
) -> ObservationSamples:
    """Full negative-sampling pass for one object of a scene."""
    rng = _object_rng(config, object_id)
    vs, us, points = _object_pixels(scene, object_id)
    if len(points) < MIN_SURFACE_POINTS:
        raise TooFewPointsError(
            f"object {object_id}: {len(points)} surface points, "
            f"need {MIN_SURFACE_POINTS}"
        )
    plane = _scene_plane(scene, points.mean(axis=0)[None], config, rng)
    keep = _table_keep(points, plane, config, object_id)
    seg = np.zeros(np.asarray(scene.segmentation).shape, dtype=np.int32)
    seg[vs[keep], us[keep]] = object_id
    ray_pts, ray_lab = sample_rays(
        scene.depth, scene.intrinsics, seg, object_id, config, rng
    )
    below = sample_below_object(points[keep], plane, config, rng)
    points = np.concatenate([ray_pts, below])
    labels = np.concatenate([ray_lab, np.ones(len(below), dtype=np.uint8)])
    points, labels = grid_subsample(points, labels, config.cell_size)
    return ObservationSamples(points, labels, object_id)
