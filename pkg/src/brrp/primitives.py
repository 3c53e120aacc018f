"""Procedural primitive meshes used for tests and synthetic scene pools."""

from __future__ import annotations

import numpy as np

from .geometry import TriangleMesh


def box(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    sx, sy, sz = np.asarray(size, dtype=np.float64) / 2.0
    cx, cy, cz = center
    corners = np.array(
        [
            [-sx, -sy, -sz],
            [sx, -sy, -sz],
            [sx, sy, -sz],
            [-sx, sy, -sz],
            [-sx, -sy, sz],
            [sx, -sy, sz],
            [sx, sy, sz],
            [-sx, sy, sz],
        ]
    ) + np.array([cx, cy, cz])
    quads = [
        (0, 3, 2, 1),  # bottom (-z), outward
        (4, 5, 6, 7),  # top
        (0, 1, 5, 4),  # -y
        (2, 3, 7, 6),  # +y
        (1, 2, 6, 5),  # +x
        (3, 0, 4, 7),  # -x
    ]
    tris = []
    for a, b, c, d in quads:
        tris.append([a, b, c])
        tris.append([a, c, d])
    return TriangleMesh(corners, np.asarray(tris, dtype=np.int64))


def icosphere(radius: float = 1.0, subdivisions: int = 3, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Unit icosahedron subdivided and projected onto the sphere."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    for _ in range(subdivisions):
        verts, faces = _subdivide(verts, faces)
        verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    return TriangleMesh(verts * radius + np.asarray(center, dtype=np.float64), faces)


def _subdivide(verts: np.ndarray, faces: np.ndarray):
    edge_mid: dict[tuple[int, int], int] = {}
    new_verts = [v for v in verts]
    new_faces = []

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key not in edge_mid:
            new_verts.append((verts[i] + verts[j]) / 2.0)
            edge_mid[key] = len(new_verts) - 1
        return edge_mid[key]

    for a, b, c in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
    return np.asarray(new_verts), np.asarray(new_faces, dtype=np.int64)


def cylinder(radius: float = 0.5, height: float = 1.0, segments: int = 32) -> TriangleMesh:
    """Closed cylinder along +z, centered at the origin."""
    angles = np.linspace(0.0, 2.0 * np.pi, segments, endpoint=False)
    ring = np.column_stack([radius * np.cos(angles), radius * np.sin(angles)])
    bottom = np.column_stack([ring, np.full(segments, -height / 2.0)])
    top = np.column_stack([ring, np.full(segments, height / 2.0)])
    verts = np.vstack([bottom, top, [[0, 0, -height / 2.0]], [[0, 0, height / 2.0]]])
    bc, tc = 2 * segments, 2 * segments + 1
    tris = []
    for i in range(segments):
        j = (i + 1) % segments
        tris += [[i, j, segments + i], [j, segments + j, segments + i]]
        tris += [[bc, j, i], [tc, segments + i, segments + j]]
    return TriangleMesh(verts, np.asarray(tris, dtype=np.int64))


def cone(radius: float = 0.5, height: float = 1.0, segments: int = 32) -> TriangleMesh:
    """Closed cone along +z with base at z = -height/2."""
    angles = np.linspace(0.0, 2.0 * np.pi, segments, endpoint=False)
    base = np.column_stack(
        [radius * np.cos(angles), radius * np.sin(angles), np.full(segments, -height / 2.0)]
    )
    verts = np.vstack([base, [[0, 0, -height / 2.0]], [[0, 0, height / 2.0]]])
    bc, apex = segments, segments + 1
    tris = []
    for i in range(segments):
        j = (i + 1) % segments
        tris += [[bc, j, i], [apex, i, j]]
    return TriangleMesh(verts, np.asarray(tris, dtype=np.int64))


def capsule(radius: float = 0.3, height: float = 0.8, subdivisions: int = 2) -> TriangleMesh:
    """Sphere stretched along z into a capsule-like solid."""
    sph = icosphere(radius=radius, subdivisions=subdivisions)
    v = sph.vertices.copy()
    shift = max(height / 2.0 - radius, 0.0)
    v[:, 2] += np.where(v[:, 2] > 0, shift, -shift)
    return TriangleMesh(v, sph.triangles)


def default_pool() -> dict[str, TriangleMesh]:
    """Small desk-scale mesh pool keyed by mesh id."""
    return {
        "box": box(size=(0.08, 0.1, 0.14)),
        "slab": box(size=(0.16, 0.1, 0.05)),
        "ball": icosphere(radius=0.05, subdivisions=2),
        "can": cylinder(radius=0.035, height=0.12, segments=24),
        "cone": cone(radius=0.05, height=0.12, segments=24),
        "capsule": capsule(radius=0.035, height=0.14),
    }


DEFAULT_DESCRIPTIONS = {
    "box": "a tall rectangular box",
    "slab": "a flat wide slab",
    "ball": "a small round ball",
    "can": "a cylindrical can",
    "cone": "a pointed cone",
    "capsule": "a pill shaped capsule",
}
