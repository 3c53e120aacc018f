"""Depth and segmentation rendering by ray casting.

Geometry is given in the camera frame. Pixel (u, v) casts the ray
t * ((u-cx)/fx, (v-cy)/fy, 1) from the origin, so the stored depth is the
hit's z coordinate and backprojection reproduces the hit point exactly
(no half-pixel offset on either side). A BVH over triangles is traversed
wavefront-style: batches of rays descend the tree together.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, TriangleMesh

_EPS = 1e-12
LEAF_SIZE = 8


@dataclass
class Bvh:
    node_lo: np.ndarray  # (M, 3)
    node_hi: np.ndarray  # (M, 3)
    node_left: np.ndarray  # (M,) child index or -1 for leaf
    node_right: np.ndarray
    node_start: np.ndarray  # (M,) triangle range for leaves
    node_count: np.ndarray
    order: np.ndarray  # triangle permutation


def build_bvh(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> Bvh:
    n = len(a)
    centroids = (a + b + c) / 3.0
    tri_lo = np.minimum(np.minimum(a, b), c)
    tri_hi = np.maximum(np.maximum(a, b), c)
    order = np.arange(n)
    lo_list, hi_list, left, right, start, count = [], [], [], [], [], []

    def add_node() -> int:
        lo_list.append(np.zeros(3))
        hi_list.append(np.zeros(3))
        left.append(-1)
        right.append(-1)
        start.append(0)
        count.append(0)
        return len(left) - 1

    stack = [(add_node(), 0, n)]
    while stack:
        node, s, e = stack.pop()
        idx = order[s:e]
        lo_list[node] = tri_lo[idx].min(axis=0)
        hi_list[node] = tri_hi[idx].max(axis=0)
        if e - s <= LEAF_SIZE:
            start[node] = s
            count[node] = e - s
            continue
        cen = centroids[idx]
        axis = int(np.argmax(cen.max(axis=0) - cen.min(axis=0)))
        mid = (e - s) // 2
        part = np.argpartition(cen[:, axis], mid)
        order[s:e] = idx[part]
        ln = add_node()
        rn = add_node()
        left[node] = ln
        right[node] = rn
        stack.append((ln, s, s + mid))
        stack.append((rn, s + mid, e))
    return Bvh(
        node_lo=np.array(lo_list),
        node_hi=np.array(hi_list),
        node_left=np.array(left),
        node_right=np.array(right),
        node_start=np.array(start),
        node_count=np.array(count),
        order=order,
    )


def pixel_rays(intrinsics: CameraIntrinsics) -> np.ndarray:
    """Unnormalized ray directions with z = 1 for every pixel, (H*W, 3)."""
    us, vs = np.meshgrid(
        np.arange(intrinsics.width), np.arange(intrinsics.height), indexing="xy"
    )
    return np.column_stack(
        [
            ((us - intrinsics.cx) / intrinsics.fx).ravel(),
            ((vs - intrinsics.cy) / intrinsics.fy).ravel(),
            np.ones(intrinsics.width * intrinsics.height),
        ]
    )


def raycast(
    dirs: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray, bvh: Bvh
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest intersection per ray from the origin; returns (t, triangle id).

    t is in units of the given direction vectors (z-depth for z=1 dirs);
    misses get t = inf and id = -1.
    """
    n_rays = len(dirs)
    parallel = np.abs(dirs) <= _EPS
    inv = np.where(parallel, np.inf, 1.0 / np.where(parallel, 1.0, dirs))
    t_best = np.full(n_rays, np.inf)
    hit_tri = np.full(n_rays, -1, dtype=np.int64)
    e1 = b - a
    e2 = c - a
    stack: list[tuple[int, np.ndarray]] = [(0, np.arange(n_rays))]
    while stack:
        node, rays = stack.pop()
        sub_inv = inv[rays]
        with np.errstate(invalid="ignore"):
            t0 = bvh.node_lo[node] * sub_inv
            t1 = bvh.node_hi[node] * sub_inv
        par = parallel[rays]
        if par.any():
            # parallel to a slab: inside it for all t, or never
            inside = (bvh.node_lo[node] <= 0) & (bvh.node_hi[node] >= 0)
            t0 = np.where(par, np.where(inside, -np.inf, np.inf), t0)
            t1 = np.where(par, np.where(inside, np.inf, -np.inf), t1)
        near = np.minimum(t0, t1).max(axis=1)
        far = np.maximum(t0, t1).min(axis=1)
        alive = (near <= far) & (far > _EPS) & (near < t_best[rays])
        rays = rays[alive]
        if len(rays) == 0:
            continue
        if bvh.node_left[node] < 0:
            s = bvh.node_start[node]
            tris = bvh.order[s : s + bvh.node_count[node]]
            _leaf_hits(dirs, rays, tris, a, e1, e2, t_best, hit_tri)
        else:
            stack.append((int(bvh.node_left[node]), rays))
            stack.append((int(bvh.node_right[node]), rays))
    return t_best, hit_tri


def _leaf_hits(dirs, rays, tris, a, e1, e2, t_best, hit_tri) -> None:
    d = dirs[rays]  # (R, 3)
    ta, te1, te2 = a[tris], e1[tris], e2[tris]
    pvec = np.cross(d[:, None, :], te2[None, :, :])  # (R, L, 3)
    det = np.einsum("lj,rlj->rl", te1, pvec)
    ok = np.abs(det) > _EPS
    inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = -ta[None, :, :]  # origin at zero
    u = np.einsum("rlj,rlj->rl", tvec, pvec) * inv_det
    qvec = np.cross(tvec, te1[None, :, :])
    v = np.einsum("ri,rli->rl", d, qvec) * inv_det
    t = np.einsum("lj,rlj->rl", te2, qvec) * inv_det
    good = ok & (u >= 0) & (v >= 0) & (u + v <= 1.0) & (t > _EPS)
    t = np.where(good, t, np.inf)
    best = t.argmin(axis=1)
    t_min = t[np.arange(len(rays)), best]
    better = t_min < t_best[rays]
    upd = rays[better]
    t_best[upd] = t_min[better]
    hit_tri[upd] = tris[best[better]]


def render(
    meshes: list[TriangleMesh],
    labels: list[int],
    intrinsics: CameraIntrinsics,
) -> tuple[np.ndarray, np.ndarray]:
    """Render camera-frame meshes to (depth, segmentation) images.

    Pixels with no hit get depth 0 and label 0; a mesh may itself carry
    label 0 (the table surface).
    """
    if len(meshes) != len(labels):
        raise ValueError("meshes and labels must align")
    corners = [m.triangle_corners() for m in meshes]
    a = np.concatenate([x[0] for x in corners])
    b = np.concatenate([x[1] for x in corners])
    c = np.concatenate([x[2] for x in corners])
    tri_label = np.concatenate(
        [np.full(len(m.triangles), lab, dtype=np.int64) for m, lab in zip(meshes, labels)]
    )
    bvh = build_bvh(a, b, c)
    dirs = pixel_rays(intrinsics)
    t, tri = raycast(dirs, a, b, c, bvh)
    depth = np.where(np.isfinite(t), t, 0.0).reshape(intrinsics.height, intrinsics.width)
    seg = np.where(tri >= 0, tri_label[np.maximum(tri, 0)], 0).reshape(
        intrinsics.height, intrinsics.width
    )
    return depth, seg.astype(np.int64)
