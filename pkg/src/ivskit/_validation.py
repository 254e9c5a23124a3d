"""Input coercion shared by the estimator wrappers."""

from __future__ import annotations

import numpy as np

from .imgcore import GrayImage


def check_gray_image(img) -> GrayImage:
    """Accept a GrayImage, a 2-D float array in [0,1] or a uint8/uint16 array."""
    if isinstance(img, GrayImage):
        return img
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale image, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        return GrayImage(arr / 255.0)
    if arr.dtype == np.uint16:
        return GrayImage(arr / 65535.0)
    return GrayImage(arr.astype(np.float64))


def check_images(images) -> list[GrayImage]:
    if isinstance(images, (GrayImage, np.ndarray)) and np.ndim(getattr(images, "data", images)) == 2:
        images = [images]
    out = [check_gray_image(im) for im in images]
    if not out:
        raise ValueError("no images given")
    return out


def check_thermal_array(X) -> np.ndarray:
    """Rows of ``(q_nominal, t1, t2, t3, t_sat)``, strictly increasing in q."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != 5:
        raise ValueError("thermal input must have shape (n_levels, 5): q_nominal, t1, t2, t3, t_sat")
    if X.shape[0] < 2:
        raise ValueError("at least two heat-flux levels are needed")
    if not np.all(np.isfinite(X)):
        raise ValueError("thermal input contains non-finite values")
    if np.any(np.diff(X[:, 0]) <= 0):
        raise ValueError("q_nominal must be strictly increasing")
    return X
