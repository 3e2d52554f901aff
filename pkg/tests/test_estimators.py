"""Tests for the scikit-learn style estimator facades."""

import numpy as np
import pytest
from scipy import special
from sklearn.base import clone

from vibo_irt.data import simulate
from vibo_irt.estimators import EmIRT, JmleIRT, ViboIRT


def _nan_matrix(dataset):
    """Response matrix with np.nan marking unobserved cells."""
    return np.where(dataset.mask, dataset.values, np.nan)


def _easy_binary_matrix(seed=0, n=80, m=30):
    """1pl-style responses: strong signal, fast to fit."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, 1))
    d = rng.standard_normal(m)
    p = special.expit(a + d)
    return (rng.random((n, m)) < p).astype(float), a


class TestSharedContract:
    def test_get_params_set_params_clone(self):
        est = ViboIRT(family="lpe", beta=0.3, epochs=7, flows=2)
        params = est.get_params()
        assert params["family"] == "lpe"
        assert params["beta"] == 0.3
        twin = clone(est)
        assert twin.get_params() == params
        est.set_params(epochs=9)
        assert est.get_params()["epochs"] == 9

    def test_rejects_non_matrix_input(self):
        X = np.zeros(5)
        for est in (ViboIRT(epochs=1), JmleIRT(epochs=1), EmIRT(max_iterations=1)):
            with pytest.raises(ValueError, match="2-d"):
                est.fit(X)

    def test_score_requires_observed_cells(self):
        X, _ = _easy_binary_matrix()
        est = ViboIRT(epochs=2, seed=0).fit(X)
        with pytest.raises(ValueError, match="observed"):
            est.score(np.full((3, X.shape[1]), np.nan))


class TestViboIRT:
    def test_fit_sets_attributes_and_shapes(self):
        X, _ = _easy_binary_matrix(seed=1)
        est = ViboIRT(family="2pl", epochs=5, seed=0).fit(X)
        n, m = X.shape
        assert est.n_persons_ == n and est.n_items_ == m
        assert est.abilities_.shape == (n, 1)
        assert est.ability_var_.shape == (n, 1)
        assert est.items_.shape == (m, 2)
        assert est.trace_.shape == (5,)
        assert np.all(np.isfinite(est.trace_))

    def test_transform_on_training_rows_matches_fit(self):
        X, _ = _easy_binary_matrix(seed=2)
        est = ViboIRT(epochs=3, seed=1).fit(X)
        assert np.allclose(est.transform(X), est.abilities_)

    def test_predictions_are_probabilities_and_labels(self):
        X, _ = _easy_binary_matrix(seed=3)
        est = ViboIRT(epochs=3, seed=0).fit(X)
        prob = est.predict_proba(X)
        assert prob.shape == X.shape
        assert np.all((prob > 0.0) & (prob < 1.0))
        labels = est.predict(X)
        assert set(np.unique(labels)) <= {0.0, 1.0}

    def test_score_beats_chance_on_strong_signal(self):
        X, _ = _easy_binary_matrix(seed=4, n=120, m=40)
        est = ViboIRT(family="1pl", epochs=60, batch_size=8, seed=0).fit(X)
        assert est.score(X) > 0.6

    def test_recovers_abilities_on_1pl_signal(self):
        X, a_true = _easy_binary_matrix(seed=5, n=120, m=60)
        est = ViboIRT(family="1pl", epochs=60, batch_size=8, seed=0).fit(X)
        corr = np.corrcoef(est.abilities_[:, 0], a_true[:, 0])[0, 1]
        assert corr > 0.8

    def test_handles_missing_cells(self):
        ds = simulate("2pl", n_persons=40, n_items=20, missing_frac=0.3, seed=6)
        X = _nan_matrix(ds)
        est = ViboIRT(epochs=4, seed=0).fit(X)
        assert np.isfinite(est.score(X))

    def test_deterministic_given_seed(self):
        X, _ = _easy_binary_matrix(seed=7)
        a = ViboIRT(epochs=4, seed=3).fit(X).abilities_
        b = ViboIRT(epochs=4, seed=3).fit(X).abilities_
        assert np.array_equal(a, b)

    def test_clone_refit_reproduces(self):
        X, _ = _easy_binary_matrix(seed=8)
        est = ViboIRT(epochs=3, seed=2).fit(X)
        twin = clone(est).fit(X)
        assert np.array_equal(est.abilities_, twin.abilities_)


class TestJmleIRT:
    def test_fit_and_transform_new_rows(self):
        X, a_true = _easy_binary_matrix(seed=10, n=100, m=40)
        est = JmleIRT(family="1pl", epochs=60, learning_rate=0.02, seed=0).fit(X)
        assert est.abilities_.shape == (100, 1)
        corr = np.corrcoef(est.abilities_[:, 0], a_true[:, 0])[0, 1]
        assert corr > 0.8
        # transform optimizes fresh abilities against the fitted items
        refit = est.transform(X[:25])
        corr_new = np.corrcoef(refit[:, 0], est.abilities_[:25, 0])[0, 1]
        assert corr_new > 0.9

    def test_predict_proba_range(self):
        X, _ = _easy_binary_matrix(seed=11)
        est = JmleIRT(epochs=5, seed=0).fit(X)
        prob = est.predict_proba(X)
        assert np.all((prob > 0.0) & (prob < 1.0))

    def test_deterministic_given_seed(self):
        X, _ = _easy_binary_matrix(seed=12)
        a = JmleIRT(epochs=4, seed=1).fit(X).items_
        b = JmleIRT(epochs=4, seed=1).fit(X).items_
        assert np.array_equal(a, b)


class TestEmIRT:
    def test_fit_converges_and_recovers(self):
        # this draw's discriminations sum clearly positive, so the fit's
        # reflection orientation is pinned and the signed correlation is
        # meaningful
        ds = simulate("2pl", n_persons=400, n_items=25, seed=3)
        X = _nan_matrix(ds)
        est = EmIRT(family="2pl", n_nodes=31, max_iterations=40, tol=1e-2).fit(X)
        assert est.converged_
        corr = np.corrcoef(est.abilities_[:, 0], ds.true_abilities[:, 0])[0, 1]
        assert corr > 0.8
        # monotone marginal-likelihood trace
        assert np.all(np.diff(est.trace_) >= -1e-10)

    def test_transform_matches_training_eap(self):
        ds = simulate("2pl", n_persons=60, n_items=15, seed=2)
        X = _nan_matrix(ds)
        est = EmIRT(n_nodes=21, max_iterations=5).fit(X)
        assert np.allclose(est.transform(X), est.abilities_, atol=1e-12)

    def test_rejects_deep_families(self):
        X, _ = _easy_binary_matrix(seed=13, n=20, m=8)
        with pytest.raises(ValueError):
            EmIRT(family="deep").fit(X)

    def test_score_in_unit_interval(self):
        ds = simulate("2pl", n_persons=50, n_items=12, seed=3)
        X = _nan_matrix(ds)
        est = EmIRT(n_nodes=21, max_iterations=3).fit(X)
        assert 0.0 <= est.score(X) <= 1.0
