"""Scikit-learn style estimator facades over the fitting engines.

Each estimator treats a response matrix X of shape (n_persons, n_items) as
the training data, with np.nan marking unobserved cells. fit() learns item
parameters and person posteriors; transform() maps (possibly new) response
rows to ability estimates; predict_proba() and predict() complete the
matrix. Estimators follow the usual conventions: __init__ only stores
hyperparameters, fitted attributes get a trailing underscore, and
get_params/set_params/clone work as expected.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import baselines, engine
from .data import ResponseDataset
from .models import ModelSpec, prob_matrix

__all__ = ["ViboIRT", "JmleIRT", "EmIRT"]


def _matrix_to_dataset(X, response_mode: str) -> ResponseDataset:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-d response matrix, got shape {X.shape}")
    mask = ~np.isnan(X)
    values = np.where(mask, X, 0.0)
    return ResponseDataset(values, mask, mode=response_mode)


def _threshold(prob: np.ndarray) -> np.ndarray:
    return (prob >= 0.5).astype(np.float64)


class _IrtMixin:
    """Prediction and scoring shared by all three estimators."""

    def predict_proba(self, X) -> np.ndarray:
        """Response-probability matrix for the rows of X."""
        abilities = self.transform(X)
        return prob_matrix(self.result_.model, abilities, self.items_)

    def predict(self, X) -> np.ndarray:
        """Thresholded response matrix (p >= 0.5 maps to 1)."""
        return _threshold(self.predict_proba(X))

    def score(self, X, y=None) -> float:
        """Mean thresholded accuracy over the observed cells of X."""
        ds = _matrix_to_dataset(X, self.response_mode)
        if not ds.mask.any():
            raise ValueError("score needs at least one observed cell")
        prob = self.predict_proba(X)
        pred = prob[ds.mask] >= 0.5
        truth = ds.values[ds.mask] >= 0.5
        return float(np.mean(pred == truth))

    def _spec(self) -> ModelSpec:
        return ModelSpec(family=self.family, k_dim=self.k_dim,
                         response_mode=self.response_mode,
                         hidden_size=self.hidden_size,
                         hidden_layers=self.hidden_layers)


class ViboIRT(_IrtMixin, TransformerMixin, BaseEstimator):
    """Amortized variational estimator for item response models."""

    def __init__(self, family="2pl", k_dim=1, beta=0.5, epochs=100,
                 batch_size=16, learning_rate=5e-3, seed=0,
                 posterior_mode="product", flows=0, mc_samples=1,
                 response_mode="binary", hidden_size=64, hidden_layers=3):
        self.family = family
        self.k_dim = k_dim
        self.beta = beta
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.posterior_mode = posterior_mode
        self.flows = flows
        self.mc_samples = mc_samples
        self.response_mode = response_mode
        self.hidden_size = hidden_size
        self.hidden_layers = hidden_layers

    def fit(self, X, y=None):
        ds = _matrix_to_dataset(X, self.response_mode)
        config = engine.ViboConfig(
            beta=self.beta, epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, seed=self.seed,
            posterior_mode=self.posterior_mode, flows=self.flows,
            mc_samples=self.mc_samples)
        self.result_ = engine.fit(ds, self._spec(), config)
        self.items_ = engine.item_point_estimates(self.result_.state)
        self.abilities_, self.ability_var_ = engine.infer_ability_posterior(
            self.result_, ds.values, ds.mask)
        self.trace_ = self.result_.trace
        self.n_persons_, self.n_items_ = ds.values.shape
        return self

    def transform(self, X) -> np.ndarray:
        """Posterior-mean abilities for the response rows of X."""
        ds = _matrix_to_dataset(X, self.response_mode)
        mu, _ = engine.infer_ability_posterior(self.result_, ds.values, ds.mask)
        return mu


class JmleIRT(_IrtMixin, TransformerMixin, BaseEstimator):
    """Joint maximum-likelihood estimator (point estimates throughout)."""

    def __init__(self, family="2pl", k_dim=1, epochs=100, batch_size=16,
                 learning_rate=5e-3, seed=0, refit_steps=300,
                 refit_learning_rate=0.1, response_mode="binary",
                 hidden_size=64, hidden_layers=3):
        self.family = family
        self.k_dim = k_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.refit_steps = refit_steps
        self.refit_learning_rate = refit_learning_rate
        self.response_mode = response_mode
        self.hidden_size = hidden_size
        self.hidden_layers = hidden_layers

    def fit(self, X, y=None):
        ds = _matrix_to_dataset(X, self.response_mode)
        self.result_ = baselines.fit_jmle(
            ds, self._spec(), epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, seed=self.seed)
        self.items_ = self.result_.items_raw.copy()
        self.abilities_ = self.result_.abilities.copy()
        self.trace_ = self.result_.trace
        self.n_persons_, self.n_items_ = ds.values.shape
        return self

    def transform(self, X) -> np.ndarray:
        """Maximum-likelihood abilities for the rows of X, items held fixed."""
        ds = _matrix_to_dataset(X, self.response_mode)
        return baselines.refit_abilities(
            self.result_.model, self.items_, ds.values, ds.mask,
            steps=self.refit_steps, learning_rate=self.refit_learning_rate)


class EmIRT(_IrtMixin, TransformerMixin, BaseEstimator):
    """Marginal maximum-likelihood estimator via EM over a quadrature grid."""

    def __init__(self, family="2pl", k_dim=1, n_nodes=61, max_iterations=50,
                 tol=1e-4, seed=0, response_mode="binary",
                 hidden_size=64, hidden_layers=3):
        self.family = family
        self.k_dim = k_dim
        self.n_nodes = n_nodes
        self.max_iterations = max_iterations
        self.tol = tol
        self.seed = seed
        self.response_mode = response_mode
        self.hidden_size = hidden_size
        self.hidden_layers = hidden_layers

    def fit(self, X, y=None):
        ds = _matrix_to_dataset(X, self.response_mode)
        self.result_ = baselines.em_fit(
            ds, self._spec(), n_nodes=self.n_nodes,
            max_iterations=self.max_iterations, tol=self.tol, seed=self.seed)
        self.items_ = self.result_.items_raw.copy()
        self.abilities_ = self.result_.abilities.copy()
        self.trace_ = self.result_.trace
        self.converged_ = self.result_.converged
        self.n_persons_, self.n_items_ = ds.values.shape
        return self

    def transform(self, X) -> np.ndarray:
        """Expected-a-posteriori abilities for the rows of X."""
        ds = _matrix_to_dataset(X, self.response_mode)
        eap, _ = baselines.em_eap_abilities(self.result_, ds,
                                            n_nodes=self.n_nodes)
        return eap
