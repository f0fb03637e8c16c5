"""Input checks shared by the estimators."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import InvalidParameterError


def check_images(X, image_shape=None):
    """Return ``X`` as a float32 stack of shape (n, height, width).

    Accepts (n, h, w), (n, h, w, 1), or flattened (n, h*w) when
    ``image_shape`` is known. Intensities must lie in [0, 1].
    """
    X = check_array(X, dtype=np.float32, allow_nd=True, ensure_min_samples=1)
    if X.ndim == 4 and X.shape[-1] == 1:
        X = X[..., 0]
    if X.ndim == 2:
        if image_shape is None:
            raise InvalidParameterError("flattened images need a known image_shape")
        if X.shape[1] != image_shape[0] * image_shape[1]:
            raise InvalidParameterError(f"expected {image_shape[0] * image_shape[1]} features, got {X.shape[1]}")
        X = X.reshape(len(X), *image_shape)
    if X.ndim != 3:
        raise InvalidParameterError(f"expected image stack (n, h, w), got shape {X.shape}")
    if image_shape is not None and X.shape[1:] != tuple(image_shape):
        raise InvalidParameterError(f"images are {X.shape[1:]}, estimator was fitted on {tuple(image_shape)}")
    if X.min() < 0.0 or X.max() > 1.0:
        raise InvalidParameterError("image intensities must lie in [0, 1]")
    return X


def check_angles_on_grid(y, grid):
    """Class labels for angles that must lie on ``grid``."""
    y = np.asarray(y, dtype=np.float64).ravel()
    pos = (y - grid.start) / grid.step
    labels = np.round(pos).astype(np.int64)
    bad = (np.abs(pos - labels) * grid.step > 1e-6) | (labels < 0) | (labels >= grid.count)
    if bad.any():
        raise InvalidParameterError(f"angle {y[np.flatnonzero(bad)[0]]} is not on the grid")
    return labels
