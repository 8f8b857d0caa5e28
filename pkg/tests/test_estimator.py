import numpy as np
import pytest
from sklearn.base import clone
from sklearn.model_selection import cross_val_score

from ucl import UCLClassifier, UCLRegressor
from ucl import synthtasks as syn
from ucl.exceptions import InputError


@pytest.fixture(scope="module")
def cls_data():
    s = syn.generate(syn.TaskConfig(n_train=300, n_val=10, n_test=200, noise_levels=(0.0,)))
    return (s.train.context, s.train.query), s.train.target, (s.test.context, s.test.query), s.test.target


@pytest.fixture(scope="module")
def blobs():
    rng = np.random.default_rng(0)
    centers = np.array([[2.0, 0.0, 0.0], [-2.0, 0.0, 0.0], [0.0, 2.5, 0.0]])
    y = rng.integers(0, 3, 240)
    return centers[y] + 0.5 * rng.standard_normal((240, 3)), np.array(["a", "b", "c"])[y]


FAST = dict(epochs=15, learning_rate=1e-2, random_state=0)


class TestClassifier:
    def test_get_params_round_trip(self):
        est = UCLClassifier(epochs=3, alpha=0.5)
        params = est.get_params()
        assert params["epochs"] == 3 and params["cl_mode"] == "ucl_predictive"
        assert clone(est).get_params() == params

    def test_fit_predict_sequences(self, cls_data):
        X, y, Xt, yt = cls_data
        est = UCLClassifier(**FAST).fit(X, y)
        assert est.n_features_in_ == 16
        assert est.score(Xt, yt) > 0.85
        proba = est.predict_proba(Xt)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, rtol=1e-12)

    def test_string_labels_2d(self, blobs):
        X, y = blobs
        est = UCLClassifier(**FAST).fit(X, y)
        assert set(est.predict(X)) <= {"a", "b", "c"}
        assert est.score(X, y) > 0.9

    def test_cross_val(self, blobs):
        X, y = blobs
        scores = cross_val_score(UCLClassifier(**FAST), X, y, cv=3)
        assert scores.min() > 0.85

    def test_deterministic_with_seed(self, blobs):
        X, y = blobs
        a = UCLClassifier(**FAST).fit(X, y).predict_proba(X)
        b = UCLClassifier(**FAST).fit(X, y).predict_proba(X)
        np.testing.assert_array_equal(a, b)

    def test_uncertainty_shapes(self, blobs):
        X, y = blobs
        est = UCLClassifier(**FAST).fit(X, y)
        for kind in ("feature", "predictive"):
            u = est.predict_uncertainty(X, kind)
            assert u.shape == (len(X),) and np.all(u >= 0)

    def test_single_class(self):
        with pytest.raises(ValueError):
            UCLClassifier(epochs=1).fit(np.ones((4, 2)), [1, 1, 1, 1])

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            UCLClassifier(epochs=1).fit(np.ones((4, 2)), [0, 1, 0])

    def test_not_fitted(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            UCLClassifier().predict(np.ones((2, 2)))

    def test_bad_rank(self):
        with pytest.raises(InputError):
            UCLClassifier(epochs=1).fit(np.ones(4), [0, 1, 0, 1])


class TestRegressor:
    def test_defaults(self):
        assert UCLRegressor().get_params()["cl_mode"] == "ucl_feature"

    def test_fit_predict(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((300, 4))
        y = np.sin(X[:, 0]) + 0.5 * X[:, 1]
        est = UCLRegressor(**FAST).fit(X, y)
        mean, std = est.predict(X, return_std=True)
        assert est.score(X, y) > 0.8
        assert np.all(std > 0) and mean.shape == (300,)

    def test_nonfinite_target(self):
        with pytest.raises(InputError):
            UCLRegressor(epochs=1).fit(np.ones((3, 2)), [0.0, np.nan, 1.0])
