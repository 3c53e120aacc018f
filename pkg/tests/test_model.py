"""Posterior objective: closed-form values, gradient oracle, estimator API."""

import numpy as np
import pytest
from sklearn.base import clone

from brrp.hilbert import HingeGrid, bce_from_logits, default_grid
from brrp.model import LossWeights, OccupancyPosterior, PriorTermData, loss, loss_gradient
from brrp.svgd import SvgdConfig


def tiny_grid():
    return HingeGrid(np.array([[0.0, 0, 0], [0.5, 0, 0]]), gamma=1.0)


def featurize(grid, pts):
    return grid.features(np.asarray(pts, dtype=np.float64))


class TestLoss:
    def test_zero_weights_balanced_labels_no_prior(self):
        grid = tiny_grid()
        feats = featurize(grid, [[0.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
        labels = np.array([1.0, 0, 1, 0])
        lw = LossWeights(lambda_obs=2.0, lambda_prior=0.5, lambda_reg=0.0)
        # w = 0: every BCE is ln 2 regardless of labels
        assert loss(np.zeros(3), feats, labels, [], lw) == pytest.approx(2.0 * np.log(2))

    def test_single_prior_sample_collapses_log_mean_exp(self):
        grid = tiny_grid()
        obs = featurize(grid, [[5.0, 5, 5]])
        rng = np.random.default_rng(0)
        w = rng.normal(size=3)
        pt = featurize(grid, [[0.1, 0, 0]])
        lab = np.array([1.0])
        lw = LossWeights(lambda_obs=0.0, lambda_prior=0.8, lambda_reg=0.0)
        term = PriorTermData(weight=0.6, features=pt, labels=lab)
        expect = 0.8 * 0.6 * bce_from_logits(float(w @ pt[0]), 1.0)
        assert loss(w, obs, np.array([0.0]), [term], lw) == pytest.approx(expect, rel=1e-12)

    def test_hand_computed_small_case(self):
        grid = tiny_grid()
        obs_pts = [[0.0, 0, 0], [0.5, 0, 0]]
        feats = featurize(grid, obs_pts)
        labels = np.array([1.0, 0.0])
        w = np.array([0.3, -0.2, 0.7])
        lw = LossWeights(lambda_obs=1.5, lambda_prior=0.5, lambda_reg=1e-2)
        prior_feats = featurize(grid, [[0.2, 0, 0], [0.9, 0, 0]])
        prior_labels = np.array([1.0, 0.0])
        term = PriorTermData(weight=0.4, features=prior_feats, labels=prior_labels)

        logits = feats @ w
        obs_term = np.mean([bce_from_logits(l, y) for l, y in zip(logits, labels)])
        pb = np.array(
            [bce_from_logits(f @ w, y) for f, y in zip(prior_feats, prior_labels)]
        )
        lme = np.log(np.mean(np.exp(pb)))
        expect = 1.5 * obs_term + 0.5 / 1 * 0.4 * lme + 1e-2 * (w**2).sum()
        got = loss(w, feats, labels, [term], lw)
        assert got == pytest.approx(expect, rel=1e-12)

    def test_prior_averaged_over_k_classes(self):
        grid = tiny_grid()
        feats = featurize(grid, [[0.0, 0, 0]])
        labels = np.array([1.0])
        w = np.array([0.5, 0.1, -0.3])
        lw = LossWeights(lambda_obs=0.0, lambda_prior=1.0, lambda_reg=0.0)
        term = PriorTermData(0.5, featurize(grid, [[0.3, 0, 0]]), np.array([1.0]))
        one = loss(w, feats, labels, [term], lw)
        two = loss(w, feats, labels, [term, term], lw)
        assert two == pytest.approx(one)  # /K keeps duplicates from double counting

    def test_stacked_weights_vectorized(self):
        grid = tiny_grid()
        feats = featurize(grid, [[0.0, 0, 0], [1.0, 1, 1]])
        labels = np.array([1.0, 0.0])
        lw = LossWeights()
        rng = np.random.default_rng(1)
        stack = rng.normal(size=(4, 3))
        vec = loss(stack, feats, labels, [], lw)
        each = [loss(wi, feats, labels, [], lw) for wi in stack]
        np.testing.assert_allclose(vec, each, rtol=1e-14)

    def test_empty_observation_rejected(self):
        with pytest.raises(ValueError):
            loss(np.zeros(3), np.empty((0, 3)), np.empty(0), [], LossWeights())

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(lambda_obs=-0.1)


class TestLossGradient:
    def test_zero_weights_all_occupied(self):
        # sigma(0) - 1 = -1/2: gradient is -(lambda_obs / 2) * mean feature
        grid = tiny_grid()
        feats = featurize(grid, [[0.0, 0, 0], [0.5, 0, 0], [1.0, 0, 0]])
        labels = np.ones(3)
        lw = LossWeights(lambda_obs=1.2, lambda_prior=0.5, lambda_reg=0.0)
        g = loss_gradient(np.zeros(3), feats, labels, [], lw)
        np.testing.assert_allclose(g, -(1.2 / 2) * feats.mean(axis=0), atol=1e-14)

    def test_only_regularizer_active(self):
        grid = tiny_grid()
        feats = featurize(grid, [[0.0, 0, 0]])
        lw = LossWeights(lambda_obs=0.0, lambda_prior=0.0, lambda_reg=0.01)
        w = np.array([1.0, -2.0, 3.0])
        term = PriorTermData(1.0, feats, np.array([1.0]))
        g = loss_gradient(w, feats, np.array([1.0]), [term], lw)
        np.testing.assert_allclose(g, 2 * 0.01 * w, atol=1e-15)

    def test_matches_central_finite_differences(self):
        grid = default_grid()
        rng = np.random.default_rng(5)
        pts = rng.uniform(-1, 1, size=(40, 3))
        feats = grid.features(pts)
        labels = rng.integers(0, 2, size=40).astype(np.float64)
        prior = PriorTermData(
            0.7,
            grid.features(rng.uniform(-1, 1, size=(25, 3))),
            rng.integers(0, 2, size=25).astype(np.float64),
        )
        lw = LossWeights(lambda_obs=1.0, lambda_prior=0.5, lambda_reg=1e-3)
        for trial in range(3):
            w = rng.normal(scale=0.5, size=grid.n_features)
            g = loss_gradient(w, feats, labels, [prior], lw)
            idx = rng.choice(grid.n_features, size=25, replace=False)
            h = 1e-6
            for i in idx:
                e = np.zeros_like(w)
                e[i] = h
                fd = (
                    loss(w + e, feats, labels, [prior], lw)
                    - loss(w - e, feats, labels, [prior], lw)
                ) / (2 * h)
                denom = max(abs(fd), abs(g[i]), 1e-8)
                assert abs(g[i] - fd) / denom <= 1e-4

    def test_stacked_gradient_matches_loop(self):
        grid = tiny_grid()
        feats = featurize(grid, [[0.0, 0, 0], [0.4, 0, 0]])
        labels = np.array([1.0, 0.0])
        lw = LossWeights()
        rng = np.random.default_rng(2)
        stack = rng.normal(size=(3, 3))
        term = PriorTermData(0.5, featurize(grid, [[0.2, 0, 0]]), np.array([1.0]))
        vec = loss_gradient(stack, feats, labels, [term], lw)
        for i, wi in enumerate(stack):
            np.testing.assert_allclose(
                vec[i], loss_gradient(wi, feats, labels, [term], lw), rtol=1e-13
            )


class TestOccupancyPosterior:
    def make_blob_data(self):
        rng = np.random.default_rng(3)
        inside = rng.normal(scale=0.15, size=(120, 3))
        outside = rng.normal(size=(120, 3))
        outside = outside / np.linalg.norm(outside, axis=1, keepdims=True)
        outside = outside * rng.uniform(0.7, 1.2, size=(120, 1))
        X = np.concatenate([inside, outside])
        y = np.concatenate([np.ones(120), np.zeros(120)])
        return X, y

    def test_fit_separates_center_from_shell(self):
        X, y = self.make_blob_data()
        est = OccupancyPosterior(
            svgd_config=SvgdConfig(n_particles=4, n_iterations=150, seed=0)
        )
        est.fit(X, y)
        p_center = est.predict_proba(np.array([[0.0, 0, 0]]))
        p_shell = est.predict_proba(np.array([[0.95, 0, 0]]))
        assert p_center[0] > 0.8
        assert p_shell[0] < 0.3
        assert est.predict(np.array([[0.0, 0, 0]]))[0] == 1

    def test_fit_deterministic(self):
        X, y = self.make_blob_data()
        cfg = SvgdConfig(n_particles=3, n_iterations=60, seed=9)
        a = OccupancyPosterior(svgd_config=cfg).fit(X, y)
        b = OccupancyPosterior(svgd_config=cfg).fit(X, y)
        np.testing.assert_array_equal(a.particles_.weights, b.particles_.weights)

    def test_prior_ignored_when_lambda_prior_zero(self):
        X, y = self.make_blob_data()
        rng = np.random.default_rng(4)
        prior = [(1.0, rng.uniform(-1, 1, size=(50, 3)), rng.integers(0, 2, size=50))]
        cfg = SvgdConfig(n_particles=2, n_iterations=40, seed=1)
        lw = LossWeights(lambda_prior=0.0)
        with_prior = OccupancyPosterior(loss_weights=lw, svgd_config=cfg).fit(X, y, prior=prior)
        without = OccupancyPosterior(loss_weights=lw, svgd_config=cfg).fit(X, y)
        np.testing.assert_array_equal(
            with_prior.particles_.weights, without.particles_.weights
        )

    def test_prior_pulls_field_toward_prior_labels(self):
        X, y = self.make_blob_data()
        # prior says a side lobe is occupied, observations are silent there
        lobe = np.array([0.0, 0.8, 0.0])
        rng = np.random.default_rng(5)
        pts = lobe + rng.normal(scale=0.1, size=(200, 3))
        prior = [(1.0, pts, np.ones(200))]
        cfg = SvgdConfig(n_particles=4, n_iterations=150, seed=2)
        base = OccupancyPosterior(svgd_config=cfg).fit(X, y)
        pulled = OccupancyPosterior(
            loss_weights=LossWeights(lambda_prior=2.0), svgd_config=cfg
        ).fit(X, y, prior=prior)
        assert pulled.predict_proba(lobe[None])[0] > base.predict_proba(lobe[None])[0]

    def test_sklearn_params_round_trip(self):
        est = OccupancyPosterior(
            loss_weights=LossWeights(lambda_obs=2.0),
            svgd_config=SvgdConfig(n_particles=2, n_iterations=5),
        )
        params = est.get_params()
        assert params["loss_weights"].lambda_obs == 2.0
        cloned = clone(est)
        assert cloned.svgd_config.n_particles == 2
        X, y = self.make_blob_data()
        cloned.fit(X[:50], y[:50])
        assert hasattr(cloned, "particles_")
        assert not hasattr(est, "particles_")

    def test_unfitted_predict_raises(self):
        with pytest.raises(RuntimeError):
            OccupancyPosterior().predict_proba(np.zeros((1, 3)))

    def test_input_validation(self):
        est = OccupancyPosterior(svgd_config=SvgdConfig(n_particles=1, n_iterations=1))
        with pytest.raises(ValueError):
            est.fit(np.zeros((3, 2)), np.zeros(3))
        with pytest.raises(ValueError):
            est.fit(np.zeros((3, 3)), np.zeros(2))
        with pytest.raises(ValueError):
            est.fit(np.zeros((3, 3)), np.array([0, 1, 2]))
        with pytest.raises(ValueError):
            est.fit(np.zeros((3, 3)), np.zeros(3), prior=[(1.0, np.zeros((2, 3)), np.array([0, 5]))])

    def test_mean_particle_loss_decreases_during_fit(self):
        from brrp.hilbert import default_grid
        from brrp.model import loss as loss_fn

        X, y = self.make_blob_data()
        feats = default_grid().features(X)

        def mean_particle_loss(iterations):
            cfg = SvgdConfig(n_particles=4, n_iterations=iterations, seed=3)
            est = OccupancyPosterior(svgd_config=cfg).fit(X, y)
            w = est.particles_.weights.mean(axis=0)
            return loss_fn(w, feats, y.astype(float), [], est.loss_weights)

        before = mean_particle_loss(0)
        after = mean_particle_loss(150)
        assert after <= 0.95 * before
