"""Core geometric and image container types shared by every other module.

Conventions: camera frame is +z forward, +x right, +y down (pinhole
standard).  File-based scenes carry no extrinsics, so the camera frame is
the working world frame; the table plane is recovered by RANSAC rather
than assumed.  Depth is meters in memory (uint16 millimeters only on
disk).  Segmentation label 0 is background/table, objects are 1..N.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyCloudError, EmptySegmentError

_ORTHO_TOL = 1e-6
_NORMAL_TOL = 1e-6
_MIN_TRI_AREA = 1e-12  # m^2


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def as_points(a, name: str = "points") -> np.ndarray:
    """Coerce to a finite (N, 3) float64 array."""
    pts = np.asarray(a, dtype=np.float64)
    if pts.ndim == 1 and pts.size == 3:
        pts = pts.reshape(1, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError(f"{name} contains non-finite values")
    return pts


@dataclass(frozen=True)
class PointCloud:
    """Immutable set of 3D points with optional unit normals and colors."""

    points: np.ndarray
    normals: np.ndarray | None = None
    colors: np.ndarray | None = None

    def __post_init__(self):
        pts = as_points(self.points).copy()
        object.__setattr__(self, "points", _freeze(pts))
        if self.normals is not None:
            nrm = as_points(self.normals, "normals").copy()
            if len(nrm) != len(pts):
                raise ValueError("normals length must match points")
            lens = np.linalg.norm(nrm, axis=1)
            if np.any(np.abs(lens - 1.0) > _NORMAL_TOL):
                raise ValueError("normals must have unit norm")
            object.__setattr__(self, "normals", _freeze(nrm))
        if self.colors is not None:
            col = np.asarray(self.colors)
            if len(col) != len(pts):
                raise ValueError("colors length must match points")
            object.__setattr__(self, "colors", _freeze(col.copy()))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def centroid(self) -> np.ndarray:
        if len(self) == 0:
            raise EmptyCloudError("centroid of empty cloud")
        return self.points.mean(axis=0)

    @property
    def bounding_radius(self) -> float:
        """Max distance from the centroid to any point."""
        d = np.linalg.norm(self.points - self.centroid, axis=1)
        return float(d.max())


@dataclass(frozen=True)
class SimilarityTransform:
    """x -> scale * R @ x + translation, with R a proper rotation."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.abs(r.T @ r - np.eye(3)).max() > _ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation must have determinant +1")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError("scale must be a positive real")
        object.__setattr__(self, "rotation", _freeze(r.copy()))
        object.__setattr__(self, "translation", _freeze(t.copy()))
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(np.eye(3), np.zeros(3), 1.0)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = as_points(points)
        return self.scale * (pts @ self.rotation.T) + self.translation

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """Return self after other: (self.compose(other))(x) = self(other(x))."""
        return SimilarityTransform(
            rotation=self.rotation @ other.rotation,
            translation=self.scale * (self.rotation @ other.translation)
            + self.translation,
            scale=self.scale * other.scale,
        )

    def inverse(self) -> "SimilarityTransform":
        rt = self.rotation.T
        return SimilarityTransform(
            rotation=rt,
            translation=-(rt @ self.translation) / self.scale,
            scale=1.0 / self.scale,
        )


def apply_transform(t: SimilarityTransform, cloud: PointCloud) -> PointCloud:
    """Map a cloud through a similarity transform; normals rotate only."""
    normals = None
    if cloud.normals is not None:
        normals = cloud.normals @ t.rotation.T
    return PointCloud(t.apply(cloud.points), normals=normals, colors=cloud.colors)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle mesh; rejects out-of-range and degenerate triangles."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = as_points(self.vertices, "vertices").copy()
        f = np.asarray(self.triangles, dtype=np.int64)
        if f.size == 0:
            f = f.reshape(0, 3)
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError("triangles must have shape (T, 3)")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("triangle index out of range")
        if f.size:
            a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
            areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
            if np.any(areas <= _MIN_TRI_AREA):
                raise ValueError("mesh contains zero-area triangles")
        object.__setattr__(self, "vertices", _freeze(v))
        object.__setattr__(self, "triangles", _freeze(f.copy()))

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def triangle_corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        f = self.triangles
        v = self.vertices
        return v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]

    def triangle_areas(self) -> np.ndarray:
        a, b, c = self.triangle_corners()
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def bbox_diagonal(self) -> float:
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo))

    def transformed(self, t: SimilarityTransform) -> "TriangleMesh":
        return TriangleMesh(t.apply(self.vertices), self.triangles)


@dataclass(frozen=True)
class GroundTruthObject:
    """Canonical mesh id plus its similarity pose in the scene frame."""

    mesh_id: str
    transform: SimilarityTransform


@dataclass(frozen=True)
class SceneRecord:
    """Single segmented RGBD observation, optionally with ground truth.

    ``ground_truth[i]`` corresponds to segmentation label ``i + 1``.
    """

    rgb: np.ndarray
    depth: np.ndarray
    segmentation: np.ndarray
    intrinsics: CameraIntrinsics
    ground_truth: tuple[GroundTruthObject, ...] | None = None

    def __post_init__(self):
        rgb = np.asarray(self.rgb, dtype=np.uint8)
        depth = np.asarray(self.depth, dtype=np.float64)
        seg = np.asarray(self.segmentation, dtype=np.int32)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ValueError("rgb must be H x W x 3")
        if depth.shape != rgb.shape[:2] or seg.shape != rgb.shape[:2]:
            raise ValueError("rgb, depth and segmentation must share dimensions")
        if (rgb.shape[1], rgb.shape[0]) != (self.intrinsics.width, self.intrinsics.height):
            raise ValueError("image size disagrees with intrinsics")
        if np.any(depth < 0) or not np.all(np.isfinite(depth)):
            raise ValueError("depth must be finite and nonnegative")
        if np.any(seg < 0):
            raise ValueError("segmentation labels must be nonnegative")
        object.__setattr__(self, "rgb", _freeze(rgb.copy()))
        object.__setattr__(self, "depth", _freeze(depth.copy()))
        object.__setattr__(self, "segmentation", _freeze(seg.copy()))
        if self.ground_truth is not None:
            object.__setattr__(self, "ground_truth", tuple(self.ground_truth))

    def object_labels(self) -> list[int]:
        labels = np.unique(self.segmentation)
        return [int(l) for l in labels if l != 0]


def backproject(
    depth: np.ndarray,
    intrinsics: CameraIntrinsics,
    segmentation: np.ndarray,
    label: int,
) -> PointCloud:
    """Backproject every valid-depth pixel of one segment into the camera frame.

    Pixel (u, v) with depth z maps to (z*(u-cx)/fx, z*(v-cy)/fy, z).
    Raises ``EmptySegmentError`` if the label has no pixels and
    ``EmptyCloudError`` if all its depths are invalid (zero).
    """
    depth = np.asarray(depth, dtype=np.float64)
    seg = np.asarray(segmentation)
    mask = seg == label
    if not mask.any():
        raise EmptySegmentError(f"label {label} not present in segmentation")
    mask &= depth > 0
    if not mask.any():
        raise EmptyCloudError(f"label {label} has no valid depth")
    v, u = np.nonzero(mask)
    z = depth[v, u]
    x = z * (u - intrinsics.cx) / intrinsics.fx
    y = z * (v - intrinsics.cy) / intrinsics.fy
    return PointCloud(np.column_stack([x, y, z]))
