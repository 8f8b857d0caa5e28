"""scikit-learn compatible front-ends for the curriculum trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_is_fitted

from . import probmodel as pm
from ._validation import check_sequences, check_targets
from .synthtasks import SynthDataset
from .trainer import TrainConfig, build_model, evaluate, train


class _UCLBase(BaseEstimator):
    _task = "cls"

    def __init__(
        self,
        cl_mode="ucl_predictive",
        epochs=20,
        batch_size=32,
        learning_rate=1e-4,
        k_train=5,
        k_test=10,
        alpha=1e-4,
        s1=3.0,
        s2=7.0,
        spl_s1=1.5,
        spl_s2=3.0,
        prob_context=True,
        prob_query=True,
        hidden_dim=32,
        latent_dim=16,
        random_state=None,
    ):
        self.cl_mode = cl_mode
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.k_train = k_train
        self.k_test = k_test
        self.alpha = alpha
        self.s1 = s1
        self.s2 = s2
        self.spl_s1 = spl_s1
        self.spl_s2 = spl_s2
        self.prob_context = prob_context
        self.prob_query = prob_query
        self.hidden_dim = hidden_dim
        self.latent_dim = latent_dim
        self.random_state = random_state

    def _seed(self):
        if isinstance(self.random_state, (int, np.integer)):
            return int(self.random_state)
        return int(check_random_state(self.random_state).randint(2**31 - 1))

    def train_config(self) -> TrainConfig:
        params = self.get_params()
        params.pop("random_state")
        return TrainConfig(seed=self._seed(), **params)

    def _dataset(self, X, y):
        context, query = check_sequences(X)
        n = context.shape[0]
        y = check_targets(y, n, numeric=self._task == "reg")
        ds = SynthDataset(self._task, context, query, y, np.zeros(n), y, getattr(self, "_n_classes", 0))
        return ds

    def _fit_dataset(self, ds):
        config = self.train_config()
        self.n_features_in_ = ds.feature_dim
        self.model_, self.history_ = train(build_model(ds, config), ds, config)
        self.config_ = config
        return self

    def _values(self, X, k=None):
        check_is_fitted(self, "model_")
        context, query = check_sequences(X)
        rng = np.random.default_rng([self.config_.seed, 4])
        k = self.k_test if k is None else k
        out = []
        for start in range(0, context.shape[0], 256):
            sl = slice(start, start + 256)
            out.append(pm.forward_batch(self.model_, context[sl], query[sl], k, rng).values)
        return np.concatenate(out, axis=1)

    def predict_uncertainty(self, X, kind="predictive", normalized=False):
        """Per-row uncertainty; ``normalized`` applies the frozen running statistics."""
        check_is_fitted(self, "model_")
        context, query = check_sequences(X)
        n = context.shape[0]
        dummy = np.zeros(n, dtype=np.float64 if self._task == "reg" else np.int64)
        ds = SynthDataset(self._task, context, query, dummy, np.zeros(n), dummy, self._n_model_classes())
        res = evaluate(self.model_, ds, self.k_test, np.random.default_rng([self.config_.seed, 4]))
        return res.uncertainty(kind, normalized)

    def _n_model_classes(self):
        return self.model_.n_classes


class UCLClassifier(ClassifierMixin, _UCLBase):
    """Two-branch probabilistic classifier trained with an uncertainty curriculum.

    ``X`` is a ``(context, query)`` pair of (N, T, F) / (N, J, F) arrays, or a
    single array used for both branches. Labels may be any hashable values.
    """

    _task = "cls"

    def fit(self, X, y):
        y = np.asarray(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("UCLClassifier needs at least two classes")
        self._n_classes = len(self.classes_)
        return self._fit_dataset(self._dataset(X, encoded))

    def predict_proba(self, X):
        return pm.cls_probs(self._values(X)).mean(axis=0)

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


class UCLRegressor(RegressorMixin, _UCLBase):
    """Heteroscedastic regressor; ``predict(..., return_std=True)`` adds the
    square root of the mean predicted variance."""

    _task = "reg"

    def __init__(
        self,
        cl_mode="ucl_feature",
        epochs=20,
        batch_size=32,
        learning_rate=1e-4,
        k_train=5,
        k_test=10,
        alpha=1e-4,
        s1=3.0,
        s2=7.0,
        spl_s1=1.5,
        spl_s2=3.0,
        prob_context=True,
        prob_query=True,
        hidden_dim=32,
        latent_dim=16,
        random_state=None,
    ):
        super().__init__(
            cl_mode, epochs, batch_size, learning_rate, k_train, k_test, alpha, s1, s2,
            spl_s1, spl_s2, prob_context, prob_query, hidden_dim, latent_dim, random_state,
        )

    def fit(self, X, y):
        return self._fit_dataset(self._dataset(X, y))

    def predict(self, X, return_std=False):
        mu, var = pm.reg_outputs(self._values(X))
        mean = mu.mean(axis=0)
        if return_std:
            return mean, np.sqrt(var.mean(axis=0))
        return mean

    def _n_model_classes(self):
        return 0
