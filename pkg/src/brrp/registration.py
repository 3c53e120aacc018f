"""Similarity registration of a stored class cloud onto an observed segment.

Stages: PCA normals, FPFH descriptors, feature-matched RANSAC with batched
Kabsch solves, and a linear scan over 10 candidate scales. Fitness is
one-directional on purpose: only observed points vote, because the stored
model's backside has no counterpart in a single-view segment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import TooFewPointsError
from .geometry import PointCloud, SimilarityTransform, as_points
from .meshops import farthest_point_sample
from .prior_db import PriorClassRecord

N_SCALES = 10
SCALE_RANGE = (0.7, 1.4)
FPFH_BINS = 11


@dataclass(frozen=True)
class RegistrationParams:
    k_neighbors: int = 16
    feature_radius_factor: float = 0.4  # times cloud bounding radius
    inlier_threshold: float = 0.03  # 2x the observation grid cell
    hypotheses: int = 20000
    hypothesis_chunk: int = 4096
    n_probes: int = 16
    verify_top: int = 4
    early_exit_fitness: float = 0.95


@dataclass(frozen=True)
class RegistrationResult:
    transform: SimilarityTransform
    inlier_count: int
    scale_index: int
    fitness: float
    residual: float = float("inf")

    def __post_init__(self) -> None:
        if self.inlier_count < 0:
            raise ValueError("inlier_count must be nonnegative")
        if not 0 <= self.scale_index < N_SCALES:
            raise ValueError("scale_index outside the scanned set")

    @property
    def succeeded(self) -> bool:
        return self.fitness > 0.0


def failure_result(scale: float = 1.0) -> RegistrationResult:
    return RegistrationResult(
        transform=SimilarityTransform(np.eye(3), np.zeros(3), scale),
        inlier_count=0,
        scale_index=0,
        fitness=0.0,
    )


def estimate_normals(
    cloud: PointCloud,
    k_neighbors: int = 16,
    orient: str = "viewpoint",
    viewpoint=(0.0, 0.0, 0.0),
) -> tuple[PointCloud, np.ndarray]:
    """Per-point normals from k-NN covariance; returns (cloud, degenerate mask).

    orient="viewpoint" flips normals toward the given origin (sensor side of
    a single view); orient="outward" flips them away from the centroid.
    Near-collinear neighborhoods are flagged so matching can skip them.
    """
    pts = cloud.points
    if len(pts) < k_neighbors:
        raise TooFewPointsError(
            f"normal estimation needs {k_neighbors} points, got {len(pts)}"
        )
    tree = cKDTree(pts)
    _, nn = tree.query(pts, k=k_neighbors)
    nbrs = pts[nn]  # (N, k, 3)
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k_neighbors
    eigvals, eigvecs = np.linalg.eigh(cov)
    normals = eigvecs[:, :, 0]
    degenerate = eigvals[:, 1] <= 1e-9 * np.maximum(eigvals[:, 2], 1e-300)
    if orient == "viewpoint":
        toward = np.asarray(viewpoint, dtype=np.float64) - pts
    elif orient == "outward":
        toward = pts - pts.mean(axis=0)
    else:
        raise ValueError(f"unknown orientation {orient!r}")
    flip = np.einsum("ij,ij->i", normals, toward) < 0
    normals[flip] *= -1.0
    return PointCloud(pts, normals=normals, colors=cloud.colors), degenerate


def compute_fpfh(
    cloud: PointCloud, radius: float, degenerate: np.ndarray | None = None
) -> np.ndarray:
    """Fast point feature histograms, (N, 33) with 11 bins per angle.

    Two passes: raw SPFH histograms per point, then distance-weighted
    accumulation over neighbors, normalized so each 11-bin block sums to
    100. Points with no neighbors in radius stay all-zero.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if cloud.normals is None:
        raise ValueError("cloud must carry normals")
    pts = cloud.points
    nrm = cloud.normals
    n = len(pts)
    tree = cKDTree(pts)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    spfh = np.zeros((n, 3 * FPFH_BINS))
    n_nbrs = np.zeros(n, dtype=np.int64)
    if len(pairs):
        # directed copies so each endpoint accumulates the pair
        i = np.concatenate([pairs[:, 0], pairs[:, 1]])
        j = np.concatenate([pairs[:, 1], pairs[:, 0]])
        d = pts[j] - pts[i]
        dist = np.linalg.norm(d, axis=1)
        ok = dist > 1e-12
        i, j, d, dist = i[ok], j[ok], d[ok], dist[ok]
        dhat = d / dist[:, None]
        u = nrm[i]
        v = np.cross(dhat, u)
        vlen = np.linalg.norm(v, axis=1, keepdims=True)
        vlen[vlen == 0] = 1.0
        v /= vlen
        w = np.cross(u, v)
        nj = nrm[j]
        alpha = np.einsum("ij,ij->i", v, nj)
        phi = np.einsum("ij,ij->i", u, dhat)
        theta = np.arctan2(np.einsum("ij,ij->i", w, nj), np.einsum("ij,ij->i", u, nj))
        b_alpha = _bin_index(alpha, -1.0, 1.0)
        b_phi = _bin_index(phi, -1.0, 1.0)
        b_theta = _bin_index(theta, -np.pi, np.pi)
        flat = np.concatenate(
            [
                i * (3 * FPFH_BINS) + b_alpha,
                i * (3 * FPFH_BINS) + FPFH_BINS + b_phi,
                i * (3 * FPFH_BINS) + 2 * FPFH_BINS + b_theta,
            ]
        )
        spfh = np.bincount(flat, minlength=n * 3 * FPFH_BINS).astype(np.float64)
        spfh = spfh.reshape(n, 3 * FPFH_BINS)
        n_nbrs = np.bincount(i, minlength=n)

        # second pass: neighbors' SPFH weighted by inverse distance
        weights = 1.0 / np.maximum(dist, 1e-9)
        contrib = spfh[j] * weights[:, None]
        gathered = np.zeros_like(spfh)
        np.add.at(gathered, i, contrib)
        wsum = np.zeros(n)
        np.add.at(wsum, i, weights)
        has = n_nbrs > 0
        fpfh = spfh.copy()
        fpfh[has] += gathered[has] / np.maximum(n_nbrs[has], 1)[:, None]
    else:
        fpfh = spfh
        has = n_nbrs > 0
    out = fpfh.reshape(n, 3, FPFH_BINS)
    sums = out.sum(axis=2, keepdims=True)
    sums[sums == 0] = 1.0
    out = 100.0 * out / sums
    out = out.reshape(n, 3 * FPFH_BINS)
    out[~has] = 0.0
    if degenerate is not None:
        out[degenerate] = 0.0
    return out


def _bin_index(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    idx = ((values - lo) / (hi - lo) * FPFH_BINS).astype(np.int64)
    return np.clip(idx, 0, FPFH_BINS - 1)


def kabsch(src: np.ndarray, tgt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched rigid fit: R, t minimizing ||R src + t - tgt|| per batch.

    src/tgt are (B, M, 3); returns R (B, 3, 3), t (B, 3).
    """
    sc = src.mean(axis=1, keepdims=True)
    tc = tgt.mean(axis=1, keepdims=True)
    h = np.einsum("bmi,bmj->bij", src - sc, tgt - tc)
    u, _, vt = np.linalg.svd(h)
    det = np.linalg.det(np.einsum("bij,bkj->bik", vt.transpose(0, 2, 1), u))
    d = np.ones((len(h), 3))
    d[:, 2] = np.sign(det)
    r = np.einsum("bji,bj,bjk->bik", vt, d, u.transpose(0, 2, 1))
    t = tc[:, 0, :] - np.einsum("bij,bj->bi", r, sc[:, 0, :])
    return r, t


def feature_correspondences(
    source_feats: np.ndarray,
    target_feats: np.ndarray,
    source_valid: np.ndarray,
    target_valid: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-neighbor match in feature space; returns (src idx, tgt idx)."""
    src_idx = np.nonzero(source_valid)[0]
    tgt_idx = np.nonzero(target_valid)[0]
    if len(src_idx) == 0 or len(tgt_idx) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    tree = cKDTree(target_feats[tgt_idx])
    _, nn = tree.query(source_feats[src_idx])
    return src_idx, tgt_idx[nn]


def ransac_align(
    source: np.ndarray,
    target: np.ndarray,
    corr_src: np.ndarray,
    corr_tgt: np.ndarray,
    source_scale: float,
    params: RegistrationParams,
    rng: np.random.Generator,
) -> RegistrationResult:
    """Feature-matched RANSAC for one candidate scale.

    Draws 3-correspondence hypotheses in batches, solves each by Kabsch on
    the pre-scaled source, ranks them by a cheap probe score, fully
    verifies the best few (observed points vote), and refines the winner
    over nearest-pair inliers until the pose stops moving.
    """
    if len(corr_src) < 3:
        return failure_result(source_scale)
    scaled = source * source_scale
    target_tree = cKDTree(target)
    probe_idx = farthest_point_sample(scaled, min(params.n_probes, len(scaled)))
    probes = scaled[probe_idx]
    thr = params.inlier_threshold

    best: tuple[int, float] | None = None  # (inliers, -residual)
    best_rt: tuple[np.ndarray, np.ndarray] | None = None
    drawn = 0
    while drawn < params.hypotheses:
        b = min(params.hypothesis_chunk, params.hypotheses - drawn)
        drawn += b
        pick = rng.integers(0, len(corr_src), size=(b, 3))
        src3 = scaled[corr_src[pick]]
        tgt3 = target[corr_tgt[pick]]
        r, t = kabsch(src3, tgt3)
        moved = np.einsum("bij,pj->bpi", r, probes) + t[:, None, :]
        d, _ = target_tree.query(moved.reshape(-1, 3))
        # truncated mean distance: equals coverage ranking when distances
        # are binary, but separates near-exact poses from barely-covering
        # tilts that a plain inlier count cannot tell apart
        score = np.minimum(d.reshape(b, -1), thr).mean(axis=1)
        order = np.argsort(score)[: params.verify_top]
        for cand in order:
            if score[cand] >= thr:
                break
            inl, res = _verify(scaled, target, r[cand], t[cand], thr)
            if inl >= 3 and (best is None or (inl, -res) > best):
                best = (inl, -res)
                best_rt = (r[cand], t[cand])
        if best is not None and best[0] / len(target) >= params.early_exit_fitness:
            break
    if best_rt is None:
        return failure_result(source_scale)

    r, t = best_rt
    r, t = _refine(scaled, target, r, t, thr)
    inl, res = _verify(scaled, target, r, t, thr)
    if inl < 3:
        return failure_result(source_scale)
    return RegistrationResult(
        transform=SimilarityTransform(r, t, source_scale),
        inlier_count=int(inl),
        scale_index=0,
        fitness=inl / len(target),
        residual=res,
    )


def _verify(
    scaled: np.ndarray, target: np.ndarray, r: np.ndarray, t: np.ndarray, thr: float
) -> tuple[int, float]:
    moved = scaled @ r.T + t
    d, _ = cKDTree(moved).query(target)
    mask = d <= thr
    if not mask.any():
        return 0, float("inf")
    return int(mask.sum()), float(d[mask].mean())


def _refine(
    scaled: np.ndarray,
    target: np.ndarray,
    r: np.ndarray,
    t: np.ndarray,
    thr: float,
    max_rounds: int = 50,
) -> tuple[np.ndarray, np.ndarray]:
    """Re-fit over nearest-pair inliers until the pose stops moving.

    Feature matches on flat geometry are too ambiguous for RANSAC alone to
    land within a few degrees; repeated closest-pair Kabsch passes contract
    the remaining tilt. Observed points vote, stored backside stays free.
    """
    for _ in range(max_rounds):
        moved = scaled @ r.T + t
        d, nn = cKDTree(moved).query(target)
        mask = d <= thr
        if mask.sum() < 3:
            return r, t
        src = scaled[nn[mask]][None]
        tgt = target[mask][None]
        r2, t2 = kabsch(src, tgt)
        delta = np.abs(r2[0] - r).max() + np.abs(t2[0] - t).max()
        r, t = r2[0], t2[0]
        if delta < 1e-10:
            break
    return r, t


def register_with_scale_scan(
    record: PriorClassRecord,
    observed: PointCloud,
    params: RegistrationParams = RegistrationParams(),
    seed: int = 0,
) -> RegistrationResult:
    """Try 10 geometrically spaced scales around the bounding-radius ratio;
    keep the scale with the most inliers (all scales always evaluated)."""
    if len(observed.points) < 30:
        raise TooFewPointsError(
            f"registration needs at least 30 observed points, got {len(observed.points)}"
        )
    stored = record.registration_cloud
    obs_with_normals, obs_degen = estimate_normals(
        observed, k_neighbors=params.k_neighbors, orient="viewpoint"
    )
    stored_degen = np.zeros(len(stored.points), dtype=bool)

    obs_radius = observed.bounding_radius
    stored_radius = stored.bounding_radius
    src_feats = compute_fpfh(
        stored, radius=params.feature_radius_factor * stored_radius, degenerate=stored_degen
    )
    tgt_feats = compute_fpfh(
        obs_with_normals,
        radius=params.feature_radius_factor * obs_radius,
        degenerate=obs_degen,
    )
    src_valid = ~stored_degen & (src_feats.sum(axis=1) > 0)
    tgt_valid = ~obs_degen & (tgt_feats.sum(axis=1) > 0)
    corr_src, corr_tgt = feature_correspondences(
        src_feats, tgt_feats, src_valid, tgt_valid
    )

    s0 = obs_radius / stored_radius
    scales = s0 * np.geomspace(SCALE_RANGE[0], SCALE_RANGE[1], N_SCALES)
    best: RegistrationResult | None = None
    for index, scale in enumerate(scales):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(index,))
        )
        result = ransac_align(
            stored.points, observed.points, corr_src, corr_tgt, float(scale), params, rng
        )
        result = RegistrationResult(
            transform=result.transform,
            inlier_count=result.inlier_count,
            scale_index=index,
            fitness=result.fitness,
            residual=result.residual,
        )
        if (
            best is None
            or (result.inlier_count, -result.residual)
            > (best.inlier_count, -best.residual)
        ):
            best = result
    assert best is not None
    return best if best.inlier_count >= 3 else failure_result()


def scan_scales(s0: float) -> np.ndarray:
    """The 10 absolute scales evaluated for a bounding-radius ratio s0."""
    return s0 * np.geomspace(SCALE_RANGE[0], SCALE_RANGE[1], N_SCALES)
