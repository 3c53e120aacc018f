"""Posterior objective over occupancy-field weights and its estimator.

The negative log posterior for one object is

    lambda_obs  * mean over observed samples of BCE(y, w.phi(x))
  + lambda_prior/K * sum over retrieved classes of
        P(c|R) * ln( mean over that class's samples of exp(BCE(y~, w.phi(x~))) )
  + lambda_reg * ||w||^2

with K the number of successfully registered classes. SVGD targets
p(w) proportional to exp(-loss). The log-mean-exp makes the prior term an
aggregate penalty that tolerates a minority of badly explained prior
samples (a soft max rather than a mean).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from . import svgd
from .hilbert import (
    HingeGrid,
    WeightParticleSet,
    bce_from_logits,
    default_grid,
    sigmoid,
)


@dataclass(frozen=True)
class LossWeights:
    lambda_obs: float = 1.0
    lambda_prior: float = 0.5
    lambda_reg: float = 1e-3

    def __post_init__(self) -> None:
        for name in ("lambda_obs", "lambda_prior", "lambda_reg"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative")


@dataclass(frozen=True)
class PriorTermData:
    """One retrieved class, featurized in the normalized frame."""

    weight: float  # raw P(c|R)
    features: np.ndarray  # (Q, H+1)
    labels: np.ndarray  # (Q,) in {0, 1}


def _as_weight_matrix(w: np.ndarray) -> tuple[np.ndarray, bool]:
    arr = np.asarray(w, dtype=np.float64)
    if arr.ndim == 1:
        return arr[None, :], True
    return arr, False


def loss(
    w,
    obs_features: np.ndarray,
    obs_labels: np.ndarray,
    prior_terms: list[PriorTermData],
    weights: LossWeights,
) -> np.ndarray | float:
    """Negative log posterior; accepts a single w or a (P, D) stack."""
    wm, single = _as_weight_matrix(w)
    if len(obs_features) == 0:
        raise ValueError("observation batch is empty")
    logits = wm @ obs_features.T  # (P, B)
    total = weights.lambda_obs * bce_from_logits(logits, obs_labels[None, :]).mean(axis=1)
    if prior_terms and weights.lambda_prior > 0:
        k = len(prior_terms)
        for term in prior_terms:
            lt = wm @ term.features.T
            b = bce_from_logits(lt, term.labels[None, :])
            # ln mean exp, shifted for stability
            m = b.max(axis=1, keepdims=True)
            lme = m[:, 0] + np.log(np.exp(b - m).mean(axis=1))
            total = total + (weights.lambda_prior / k) * term.weight * lme
    total = total + weights.lambda_reg * (wm**2).sum(axis=1)
    return float(total[0]) if single else total


def loss_gradient(
    w,
    obs_features: np.ndarray,
    obs_labels: np.ndarray,
    prior_terms: list[PriorTermData],
    weights: LossWeights,
) -> np.ndarray:
    """Closed-form gradient of loss; shape matches the input weights."""
    wm, single = _as_weight_matrix(w)
    if len(obs_features) == 0:
        raise ValueError("observation batch is empty")
    err = sigmoid(wm @ obs_features.T) - obs_labels[None, :]  # (P, B)
    grad = (weights.lambda_obs / obs_features.shape[0]) * (err @ obs_features)
    if prior_terms and weights.lambda_prior > 0:
        k = len(prior_terms)
        for term in prior_terms:
            lt = wm @ term.features.T
            b = bce_from_logits(lt, term.labels[None, :])
            m = b.max(axis=1, keepdims=True)
            e = np.exp(b - m)
            soft = e / e.sum(axis=1, keepdims=True)  # softmax over samples
            per_sample = soft * (sigmoid(lt) - term.labels[None, :])
            grad = grad + (weights.lambda_prior / k) * term.weight * (
                per_sample @ term.features
            )
    grad = grad + 2.0 * weights.lambda_reg * wm
    return grad[0] if single else grad


class OccupancyPosterior(BaseEstimator):
    """SVGD posterior over occupancy-field weights, in scikit-learn shape.

    fit(X, y) consumes labeled points in the normalized object frame
    (label 1 = occupied) plus an optional retrieved prior; predict_proba
    gives expected occupancy and logit_variance the ensemble disagreement.
    """

    def __init__(
        self,
        loss_weights: LossWeights = LossWeights(),
        svgd_config: svgd.SvgdConfig = svgd.SvgdConfig(),
        grid: HingeGrid | None = None,
    ):
        self.loss_weights = loss_weights
        self.svgd_config = svgd_config
        self.grid = grid

    def _grid(self) -> HingeGrid:
        return self.grid if self.grid is not None else default_grid()

    def fit(self, X, y, prior: list[tuple[float, np.ndarray, np.ndarray]] | None = None):
        """prior entries are (class weight, normalized points, labels)."""
        grid = self._grid()
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if X.ndim != 2 or X.shape[1] != 3:
            raise ValueError("X must be (N, 3) normalized points")
        if len(X) != len(y):
            raise ValueError("X and y must have equal length")
        if not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        y = y.astype(np.float64)

        obs_features = grid.features(X)
        terms = []
        if prior and self.loss_weights.lambda_prior > 0:
            for weight, points, labels in prior:
                labels = np.asarray(labels)
                if not np.isin(labels, (0, 1)).all():
                    raise ValueError("prior labels must be 0 or 1")
                terms.append(
                    PriorTermData(
                        weight=float(weight),
                        features=grid.features(np.asarray(points, dtype=np.float64)),
                        labels=labels.astype(np.float64),
                    )
                )
        cfg = self.svgd_config

        def grad_log_p(particles: np.ndarray, rng: np.random.Generator) -> np.ndarray:
            idx = _draw(rng, len(obs_features), cfg.obs_batch)
            batch_terms = []
            for t in terms:
                pick = _draw(rng, len(t.features), cfg.prior_batch)
                batch_terms.append(
                    PriorTermData(t.weight, t.features[pick], t.labels[pick])
                )
            return -loss_gradient(
                particles, obs_features[idx], y[idx], batch_terms, self.loss_weights
            )

        final = svgd.run(grad_log_p, dim=grid.n_features, config=cfg)
        self.particles_ = WeightParticleSet(final, grid)
        self.n_features_in_ = 3
        return self

    def _check_fitted(self) -> WeightParticleSet:
        if not hasattr(self, "particles_"):
            raise RuntimeError("estimator is not fitted")
        return self.particles_

    def predict_proba(self, X) -> np.ndarray:
        return self._check_fitted().expected_occupancy(X)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(np.uint8)

    def logit_variance(self, X) -> np.ndarray:
        return self._check_fitted().logit_variance(X)

    def full_loss(self, X, y, prior=None) -> np.ndarray:
        """Loss of every particle on the complete data (diagnostics)."""
        grid = self._grid()
        terms = [
            PriorTermData(
                float(weight),
                grid.features(np.asarray(points, dtype=np.float64)),
                np.asarray(labels, dtype=np.float64),
            )
            for weight, points, labels in (prior or [])
        ]
        return loss(
            self._check_fitted().weights,
            grid.features(np.asarray(X, dtype=np.float64)),
            np.asarray(y, dtype=np.float64),
            terms,
            self.loss_weights,
        )


def _draw(rng: np.random.Generator, n: int, batch: int) -> np.ndarray:
    if n <= batch:
        return np.arange(n)
    return rng.choice(n, size=batch, replace=False)
