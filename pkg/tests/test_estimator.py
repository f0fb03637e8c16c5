import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from gaugecnn.dataset import generate_canon, make_angle_grid, replicate
from gaugecnn.estimator import CNNClassifier, GaugeReader, ImageResizer
from gaugecnn.exceptions import InvalidParameterError
from gaugecnn.imaging import make_default_glyph

FAST = dict(conv1_filters=8, conv2_filters=16, dense_units=32, epochs=5, learning_rate=1e-2)


@pytest.fixture(scope="module")
def data():
    canon = generate_canon(make_default_glyph(32, 32), make_angle_grid(30, 6))
    ds = replicate(canon, 10, seed=1)
    return ds.images, ds.angles, canon


@pytest.fixture(scope="module")
def fitted(data):
    X, y, _ = data
    return GaugeReader(max_angle=30, step=6, **FAST).fit(X, y)


def test_params_and_clone():
    est = GaugeReader(max_angle=45, step=5, epochs=2)
    params = est.get_params()
    assert params["max_angle"] == 45 and params["epochs"] == 2 and params["readout"] == "interp"
    twin = clone(est)
    assert twin.get_params() == params
    twin.set_params(step=9)
    assert est.step == 5


def test_not_fitted():
    with pytest.raises(NotFittedError):
        GaugeReader().predict(np.zeros((1, 64, 64)))


def test_fit_predict(fitted, data):
    X, y, canon = data
    assert fitted.predict_proba(X[:3]).shape == (3, 11)
    assert np.mean(fitted.predict_categorical(canon.images) == canon.angles) >= 0.9
    interp = fitted.predict(canon.images)
    assert np.all(np.abs(interp) <= 30)
    assert np.mean(np.abs(interp - canon.angles)) < 3.0
    fitted.set_params(readout="argmax")
    try:
        assert np.array_equal(fitted.predict(canon.images), fitted.predict_categorical(canon.images))
    finally:
        fitted.set_params(readout="interp")


def test_flattened_input(fitted, data):
    X = data[0][:4]
    assert np.array_equal(fitted.predict(X.reshape(4, -1)), fitted.predict(X))


def test_fit_is_deterministic(fitted, data):
    X, y, _ = data
    again = GaugeReader(max_angle=30, step=6, **FAST).fit(X, y)
    assert np.array_equal(again.predict_proba(X[:10]), fitted.predict_proba(X[:10]))


def test_off_grid_targets_rejected(data):
    X, y, _ = data
    with pytest.raises(InvalidParameterError):
        GaugeReader(max_angle=30, step=6).fit(X[:2], [1.0, 2.0])


def test_bad_inputs(fitted):
    with pytest.raises(InvalidParameterError):
        fitted.predict(np.full((1, 32, 32), 2.0))
    with pytest.raises(InvalidParameterError):
        fitted.predict(np.zeros((1, 16, 16)))


def test_pipeline_with_resizer(data):
    X, y, canon = data
    reader = make_pipeline(ImageResizer(16, 16), GaugeReader(max_angle=30, step=6, **FAST))
    reader.fit(X, y)
    assert reader[-1].model_.config.input_height == 16
    assert reader.predict(canon.images).shape == (11,)


def test_classifier_arbitrary_labels(data):
    X, y, _ = data
    names = np.array([f"a{int(v)}" for v in y])
    clf = CNNClassifier(**FAST).fit(X, names)
    assert set(clf.classes_) == set(names)
    assert clf.predict(X[:5]).dtype == clf.classes_.dtype
    assert clf.score(X, names) >= 0.9
