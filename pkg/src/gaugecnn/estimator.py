"""scikit-learn compatible wrappers around the CNN.

>>> from sklearn.pipeline import make_pipeline
>>> reader = make_pipeline(ImageResizer(14, 14), GaugeReader(max_angle=90, step=3))  # doctest: +SKIP
>>> reader.fit(images, angles).predict(new_images)  # doctest: +SKIP
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, TransformerMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_is_fitted

from .dataset import make_angle_grid
from .imaging import resize
from .network import ModelConfig, forward, init_model, train
from .validation import check_angles_on_grid, check_images


class _CNNBase(BaseEstimator):
    def __init__(self, conv1_filters=32, conv2_filters=128, kernel_size=3, pool_size=2,
                 dense_units=128, optimizer="adam", learning_rate=1e-3, batch_size=32,
                 epochs=5, random_state=0):
        self.conv1_filters = conv1_filters
        self.conv2_filters = conv2_filters
        self.kernel_size = kernel_size
        self.pool_size = pool_size
        self.dense_units = dense_units
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.random_state = random_state

    def _fit_labels(self, X, labels, num_classes):
        config = ModelConfig(
            input_height=X.shape[1], input_width=X.shape[2], num_classes=num_classes,
            conv1_filters=self.conv1_filters, conv2_filters=self.conv2_filters,
            kernel_size=self.kernel_size, pool_size=self.pool_size, dense_units=self.dense_units,
            optimizer=self.optimizer, learning_rate=self.learning_rate,
            batch_size=self.batch_size, epochs=self.epochs,
        )
        seed = 0 if self.random_state is None else int(self.random_state)
        self.model_, self.history_ = train(init_model(config, seed), (X, labels))
        self.image_shape_ = X.shape[1:]
        self.n_features_in_ = X.shape[1] * X.shape[2]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return forward(self.model_, check_images(X, self.image_shape_))


class CNNClassifier(ClassifierMixin, _CNNBase):
    """Plain categorical classifier over image stacks (any label set)."""

    def fit(self, X, y):
        X = check_images(X)
        y = np.asarray(y).ravel()
        if len(y) != len(X):
            raise ValueError("X and y differ in length")
        self.classes_ = unique_labels(y)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        labels = np.searchsorted(self.classes_, y)
        return self._fit_labels(X, labels, len(self.classes_))

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]


class GaugeReader(RegressorMixin, _CNNBase):
    """Reads a continuous gauge angle from images.

    Fitted on images rendered at grid angles; ``predict`` decodes each
    prediction vector as the probability-weighted mean of the grid angles
    (``readout="interp"``) or as the most probable grid angle
    (``readout="argmax"``).
    """

    def __init__(self, max_angle=90.0, step=3.0, readout="interp", conv1_filters=32, conv2_filters=128,
                 kernel_size=3, pool_size=2, dense_units=128, optimizer="adam", learning_rate=1e-3,
                 batch_size=32, epochs=5, random_state=0):
        super().__init__(conv1_filters, conv2_filters, kernel_size, pool_size, dense_units,
                         optimizer, learning_rate, batch_size, epochs, random_state)
        self.max_angle = max_angle
        self.step = step
        self.readout = readout

    def fit(self, X, y):
        if self.readout not in ("interp", "argmax"):
            raise ValueError(f"readout must be 'interp' or 'argmax', got {self.readout!r}")
        X = check_images(X)
        self.grid_ = make_angle_grid(self.max_angle, self.step)
        labels = check_angles_on_grid(y, self.grid_)
        if len(labels) != len(X):
            raise ValueError("X and y differ in length")
        return self._fit_labels(X, labels, self.grid_.count)

    def predict_categorical(self, X):
        return self.grid_.angles[self.predict_proba(X).argmax(axis=1)]

    def predict_interpolated(self, X):
        p = self.predict_proba(X)
        return p @ self.grid_.angles / p.sum(axis=1)

    def predict(self, X):
        if self.readout == "argmax":
            return self.predict_categorical(X)
        return self.predict_interpolated(X)


class ImageResizer(TransformerMixin, BaseEstimator):
    """Bilinear resize of every image in a stack to ``width`` x ``height``."""

    def __init__(self, width=14, height=14):
        self.width = width
        self.height = height

    def fit(self, X, y=None):
        X = check_images(X)
        self.n_features_in_ = X.shape[1] * X.shape[2]
        self.input_shape_ = X.shape[1:]
        return self

    def transform(self, X):
        check_is_fitted(self, "input_shape_")
        X = check_images(X, self.input_shape_)
        return np.stack([resize(img, self.width, self.height) for img in X]).astype(np.float32)
