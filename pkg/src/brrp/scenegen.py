"""Procedural tabletop scenes with exact ground truth.

Objects from a mesh pool are placed upright on the z=0 table plane with
random yaw, scale and non-overlapping footprints, then rendered from a
random viewpoint. Everything on disk and in the SceneRecord lives in the
camera frame (the scene format carries no extrinsics); the world frame
with the table at z=0 exists only inside this generator.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import (
    CameraIntrinsics,
    GroundTruthObject,
    SceneRecord,
    SimilarityTransform,
    TriangleMesh,
)
from .render import render

BACKGROUND_COLOR = (30, 30, 40)
TABLE_COLOR = (120, 120, 120)
OBJECT_PALETTE = (
    (205, 60, 50),
    (70, 130, 200),
    (70, 170, 90),
    (230, 190, 60),
    (160, 90, 180),
    (240, 140, 70),
    (90, 200, 200),
    (200, 110, 150),
)


@dataclass(frozen=True)
class SceneGenConfig:
    max_objects: int = 10
    table_extent: float = 0.28  # half-extent of the placement square (m)
    table_size: float = 1.5  # half-extent of the rendered table quad (m)
    image_width: int = 160
    image_height: int = 120
    fov_deg: float = 60.0
    camera_distance: tuple[float, float] = (0.75, 1.05)
    camera_elevation_deg: tuple[float, float] = (30.0, 55.0)
    scale_range: tuple[float, float] = (0.9, 1.15)
    placement_margin: float = 0.015
    max_rejections: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_objects < 1:
            raise ValueError("max_objects must be at least 1")

    def with_seed(self, seed: int) -> "SceneGenConfig":
        return replace(self, seed=seed)


def default_intrinsics(config: SceneGenConfig) -> CameraIntrinsics:
    f = (config.image_width / 2.0) / np.tan(np.radians(config.fov_deg) / 2.0)
    return CameraIntrinsics(
        fx=f,
        fy=f,
        cx=(config.image_width - 1) / 2.0,
        cy=(config.image_height - 1) / 2.0,
        width=config.image_width,
        height=config.image_height,
    )


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> SimilarityTransform:
    """Camera-from-world transform: +z toward target, +x right, +y down."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])
    return SimilarityTransform(rotation, -rotation @ eye, 1.0)


def yaw_rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def table_quad(half: float) -> TriangleMesh:
    verts = np.array(
        [[-half, -half, 0.0], [half, -half, 0.0], [half, half, 0.0], [-half, half, 0.0]]
    )
    return TriangleMesh(verts, np.array([[0, 1, 2], [0, 2, 3]]))


def generate_scene(
    pool: list[tuple[str, TriangleMesh]], config: SceneGenConfig
) -> tuple[SceneRecord, dict]:
    """Place, render and package one scene; info reports skipped placements."""
    if not pool:
        raise ValueError("mesh pool is empty")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed))
    n_target = int(rng.integers(1, config.max_objects + 1))

    placed: list[tuple[str, TriangleMesh, SimilarityTransform, int]] = []
    footprints: list[tuple[float, float, float]] = []  # x, y, radius
    skipped = 0
    for _ in range(n_target):
        pool_idx = int(rng.integers(0, len(pool)))
        name, mesh = pool[pool_idx]
        scale = float(rng.uniform(*config.scale_range))
        theta = float(rng.uniform(0.0, 2.0 * np.pi))
        lo, _ = mesh.bounds()
        radius = scale * float(np.linalg.norm(mesh.vertices[:, :2], axis=1).max())
        spot = None
        for _try in range(config.max_rejections):
            x, y = rng.uniform(-config.table_extent, config.table_extent, size=2)
            if all(
                np.hypot(x - fx, y - fy) >= radius + fr + config.placement_margin
                for fx, fy, fr in footprints
            ):
                spot = (x, y)
                break
        if spot is None:
            skipped += 1
            continue
        pose = SimilarityTransform(
            yaw_rotation(theta),
            np.array([spot[0], spot[1], -scale * lo[2]]),
            scale,
        )
        placed.append((name, mesh, pose, pool_idx))
        footprints.append((spot[0], spot[1], radius))

    target = np.array([0.0, 0.0, 0.05])
    azimuth = rng.uniform(0.0, 2.0 * np.pi)
    elevation = np.radians(rng.uniform(*config.camera_elevation_deg))
    distance = rng.uniform(*config.camera_distance)
    eye = target + distance * np.array(
        [
            np.cos(azimuth) * np.cos(elevation),
            np.sin(azimuth) * np.cos(elevation),
            np.sin(elevation),
        ]
    )
    cam = look_at(eye, target)

    intrinsics = default_intrinsics(config)
    meshes = [table_quad(config.table_size).transformed(cam)]
    labels = [0]
    gt = []
    palette = []
    for label, (name, mesh, pose, pool_idx) in enumerate(placed, start=1):
        cam_pose = cam.compose(pose)
        meshes.append(mesh.transformed(cam_pose))
        labels.append(label)
        gt.append(GroundTruthObject(mesh_id=name, transform=cam_pose))
        palette.append(OBJECT_PALETTE[pool_idx % len(OBJECT_PALETTE)])
    depth, seg = render(meshes, labels, intrinsics)

    rgb = np.empty((config.image_height, config.image_width, 3), dtype=np.uint8)
    rgb[:] = BACKGROUND_COLOR
    rgb[(seg == 0) & (depth > 0)] = TABLE_COLOR
    for label, color in enumerate(palette, start=1):
        rgb[seg == label] = color

    record = SceneRecord(
        rgb=rgb,
        depth=depth,
        segmentation=seg,
        intrinsics=intrinsics,
        ground_truth=tuple(gt),
    )
    info = {
        "requested": n_target,
        "placed": len(placed),
        "skipped": skipped,
        "camera_eye": eye.tolist(),
    }
    return record, info
