"""Stein variational gradient descent over particle ensembles.

Particles x_1..x_P are jointly pushed along

    g*(x_j) = (1/P) sum_i [ k(x_i, x_j) grad log p(x_i) + grad_{x_i} k(x_i, x_j) ]

with the RBF kernel k(a, b) = exp(-||a - b||^2 / h). The first term pulls
particles toward probability mass, the second repels them from each other,
so the ensemble approximates the target distribution rather than its mode.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import InsufficientParticlesError, NonFiniteGradientError


@dataclass(frozen=True)
class SvgdConfig:
    n_particles: int = 8
    n_iterations: int = 300
    step_size: float = 0.05
    rms_decay: float = 0.9
    rms_eps: float = 1e-8
    init_scale: float = 0.1
    obs_batch: int = 512
    prior_batch: int = 256
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_particles < 1:
            raise InsufficientParticlesError("need at least one particle")
        if self.n_iterations < 0:
            raise ValueError("iteration count must be nonnegative")
        if not (0.0 <= self.rms_decay < 1.0):
            raise ValueError("rms_decay must lie in [0, 1)")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.obs_batch < 1 or self.prior_batch < 1:
            raise ValueError("batch sizes must be positive")


def median_bandwidth(particles: np.ndarray) -> float:
    """h = med^2 / ln(P + 1) over pairwise distances; 1.0 when degenerate."""
    x = np.asarray(particles, dtype=np.float64)
    p = len(x)
    if p < 2:
        return 1.0
    diff = x[:, None, :] - x[None, :, :]
    d = np.sqrt((diff**2).sum(axis=2))
    med = float(np.median(d[np.triu_indices(p, k=1)]))
    if med == 0.0:
        return 1.0
    return med**2 / np.log(p + 1.0)


def rbf_kernel(particles: np.ndarray, bandwidth: float) -> np.ndarray:
    x = np.asarray(particles, dtype=np.float64)
    diff = x[:, None, :] - x[None, :, :]
    return np.exp(-(diff**2).sum(axis=2) / bandwidth)


def stein_direction(
    particles: np.ndarray, grad_log_p: np.ndarray, bandwidth: Optional[float] = None
) -> np.ndarray:
    """Kernelized update direction for every particle, shape (P, D)."""
    x = np.asarray(particles, dtype=np.float64)
    g = np.asarray(grad_log_p, dtype=np.float64)
    if x.shape != g.shape:
        raise ValueError("particles and gradients must have matching shapes")
    h = median_bandwidth(x) if bandwidth is None else bandwidth
    k = rbf_kernel(x, h)
    attract = k @ g
    repel = (2.0 / h) * (x * k.sum(axis=1, keepdims=True) - k @ x)
    return (attract + repel) / len(x)


def batch_rng(seed: int, iteration: int) -> np.random.Generator:
    """Generator for iteration-t randomness; disjoint streams per iteration."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(iteration,)))


def init_particles(dim: int, config: SvgdConfig) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed))
    return config.init_scale * rng.standard_normal((config.n_particles, dim))


def run(
    grad_log_p: Callable[[np.ndarray, np.random.Generator], np.ndarray],
    dim: int,
    config: SvgdConfig,
    initial: Optional[np.ndarray] = None,
    callback: Optional[Callable[[int, np.ndarray], None]] = None,
) -> np.ndarray:
    """Run SVGD and return the final particle array, shape (P, dim).

    grad_log_p receives the current particles and the iteration's private
    generator (for minibatch draws) and returns per-particle gradients of
    the log target.
    """
    if initial is None:
        particles = init_particles(dim, config)
    else:
        particles = np.array(initial, dtype=np.float64)
        if particles.shape != (config.n_particles, dim):
            raise ValueError("initial particles have the wrong shape")
    # root-mean-square accumulator adapts the step per coordinate
    v = np.zeros_like(particles)
    for t in range(config.n_iterations):
        g = np.asarray(grad_log_p(particles, batch_rng(config.seed, t)), dtype=np.float64)
        if not np.isfinite(g).all():
            raise NonFiniteGradientError(f"non-finite gradient at iteration {t}")
        direction = stein_direction(particles, g)
        v = config.rms_decay * v + (1.0 - config.rms_decay) * direction**2
        particles = particles + config.step_size * direction / (np.sqrt(v) + config.rms_eps)
        if callback is not None:
            callback(t, particles)
    return particles
