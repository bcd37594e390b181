"""Input checks shared by the estimators, in the spirit of sklearn's ``check_array``."""

import numpy as np


def _as_float(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinite values")
    return arr


def check_image(x):
    arr = _as_float(x, "image")
    if arr.ndim != 3:
        raise ValueError(f"expected an image of shape (C, H, W), got {arr.shape}")
    return arr


def check_attention(x, batched=False):
    arr = _as_float(x, "attention")
    ndim = 4 if batched else 3
    if arr.ndim != ndim:
        want = "(n, C, H, W)" if batched else "(C, H, W)"
        raise ValueError(f"expected attention of shape {want}, got {arr.shape}")
    return arr


def check_sequences(x, ndim=5, name="sequences"):
    """Stack of equally shaped sequences, e.g. (n, T, C, H, W)."""
    arr = _as_float(x, name)
    if arr.ndim != ndim:
        raise ValueError(f"expected {name} with {ndim} dimensions, got shape {arr.shape}")
    if len(arr) == 0:
        raise ValueError(f"{name} is empty")
    return arr


def check_labels(y, n_samples, n_classes=None):
    y = np.asarray(y)
    if y.shape != (n_samples,):
        raise ValueError(f"expected {n_samples} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("labels must be integers")
        y = y.astype(np.int64)
    if np.any(y < 0) or (n_classes is not None and np.any(y >= n_classes)):
        raise ValueError(f"labels out of range [0, {n_classes})")
    return y
