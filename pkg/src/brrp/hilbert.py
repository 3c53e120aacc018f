"""Hilbert-map occupancy representation.

An occupancy field is a logistic regressor over a fixed radial-basis
feature expansion: phi(x) = [1, k(x - h_1), ..., k(x - h_H)] with
k(d) = exp(-gamma * ||d||^2) and hinge points h_i on a regular grid in a
normalized object frame. A weight vector w defines occupancy
m(x) = sigmoid(w . phi(x)); a set of weight vectors (particles) defines a
distribution over occupancy fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientParticlesError
from .geometry import as_points

PROB_FLOOR = 1e-12

GRID_PER_AXIS = 8
GRID_HALF_EXTENT = 1.5
RADIUS_MARGIN = 1.25
RADIUS_FLOOR = 0.03


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def clip_probability(p: np.ndarray) -> np.ndarray:
    """Keep probabilities strictly inside (0, 1)."""
    return np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)


def softplus(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def bce_from_logits(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Binary cross-entropy of sigmoid(logits) against labels in {0, 1}.

    Computed as softplus(l) - y*l, which equals -y*ln(sigmoid(l))
    - (1-y)*ln(1-sigmoid(l)) without overflow at large |l|.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    return softplus(logits) - labels * logits


@dataclass(frozen=True)
class HingeGrid:
    """Regular grid of radial-basis centers in the normalized frame.

    ``axes``, when given, asserts the hinges form the tensor product of
    three axis node arrays in C order, enabling a separable kernel
    evaluation (exp factors per axis instead of per hinge).
    """

    hinges: np.ndarray  # (H, 3)
    gamma: float
    axes: tuple[np.ndarray, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "hinges", as_points(self.hinges))
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.axes is not None:
            ax = tuple(np.asarray(a, dtype=np.float64).reshape(-1) for a in self.axes)
            if len(ax) != 3 or np.prod([len(a) for a in ax]) != len(self.hinges):
                raise ValueError("axes do not match the hinge count")
            object.__setattr__(self, "axes", ax)

    @property
    def n_features(self) -> int:
        """Feature dimension including the bias entry."""
        return len(self.hinges) + 1

    def features(self, x, chunk: int = 4096) -> np.ndarray:
        """phi(x): bias 1 followed by the kernel value at every hinge."""
        pts = as_points(x)
        out = np.empty((len(pts), self.n_features))
        out[:, 0] = 1.0
        if self.axes is not None:
            # exp(-g*|x-h|^2) factors over axes on a tensor-product grid
            ex, ey, ez = (
                np.exp(-self.gamma * (pts[:, i : i + 1] - self.axes[i]) ** 2)
                for i in range(3)
            )
            np.einsum("ni,nj,nk->nijk", ex, ey, ez, out=out[:, 1:].reshape(
                len(pts), len(self.axes[0]), len(self.axes[1]), len(self.axes[2])
            ))
            return out
        for lo in range(0, len(pts), chunk):
            d2 = (
                (pts[lo : lo + chunk, None, :] - self.hinges[None, :, :]) ** 2
            ).sum(axis=2)
            out[lo : lo + chunk, 1:] = np.exp(-self.gamma * d2)
        return out


def default_grid() -> HingeGrid:
    """8x8x8 hinges spanning [-1.5, 1.5]^3 with gamma = 1/(2 s^2) for the
    hinge spacing s; the normalized unit ball sits well inside the grid."""
    axis = np.linspace(-GRID_HALF_EXTENT, GRID_HALF_EXTENT, GRID_PER_AXIS)
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    hinges = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    spacing = 2 * GRID_HALF_EXTENT / (GRID_PER_AXIS - 1)
    return HingeGrid(hinges, gamma=1.0 / (2.0 * spacing**2), axes=(axis, axis, axis))


@dataclass(frozen=True)
class ObjectFrame:
    """Similarity map taking world points into the normalized object frame."""

    centroid: np.ndarray  # (3,)
    radius: float

    def __post_init__(self) -> None:
        c = np.asarray(self.centroid, dtype=np.float64).reshape(3)
        c.flags.writeable = False
        object.__setattr__(self, "centroid", c)
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise ValueError("radius must be positive and finite")

    @classmethod
    def from_points(cls, points) -> "ObjectFrame":
        pts = as_points(points)
        centroid = pts.mean(axis=0)
        spread = float(np.linalg.norm(pts - centroid, axis=1).max(initial=0.0))
        return cls(centroid, max(RADIUS_MARGIN * spread, RADIUS_FLOOR))

    def normalize(self, x) -> np.ndarray:
        return (as_points(x) - self.centroid) / self.radius

    def denormalize(self, x) -> np.ndarray:
        return as_points(x) * self.radius + self.centroid


@dataclass
class WeightParticleSet:
    """Weight vectors of an ensemble of occupancy fields, shape (P, H+1)."""

    weights: np.ndarray
    grid: HingeGrid = field(default_factory=default_grid)

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] != self.grid.n_features:
            raise ValueError(
                f"weights must be (P, {self.grid.n_features}), got {w.shape}"
            )
        if not np.isfinite(w).all():
            raise ValueError("weights must be finite")
        self.weights = w

    @property
    def n_particles(self) -> int:
        return len(self.weights)

    def logits(self, x_norm) -> np.ndarray:
        """Per-particle logits at normalized points, shape (P, N)."""
        return self.logits_from_features(self.grid.features(x_norm))

    def logits_from_features(self, phi: np.ndarray) -> np.ndarray:
        return self.weights @ phi.T

    def expected_occupancy(self, x_norm) -> np.ndarray:
        """Mean over particles of sigmoid(logit), shape (N,)."""
        return clip_probability(sigmoid(self.logits(x_norm)).mean(axis=0))

    def logit_variance(self, x_norm) -> np.ndarray:
        """Unbiased variance across particles of the logit, shape (N,)."""
        if self.n_particles < 2:
            raise InsufficientParticlesError(
                "logit variance needs at least two particles"
            )
        return self.logits(x_norm).var(axis=0, ddof=1)

    def field_stats(self, x_norm) -> tuple[np.ndarray, np.ndarray]:
        """(expected occupancy, logit variance) from one feature pass."""
        if self.n_particles < 2:
            raise InsufficientParticlesError(
                "logit variance needs at least two particles"
            )
        logits = self.logits(x_norm)
        occ = clip_probability(sigmoid(logits).mean(axis=0))
        return occ, logits.var(axis=0, ddof=1)
