"""Input validation helpers used at public API boundaries."""

from __future__ import annotations

import numbers

import numpy as np

from .exceptions import ConfigurationError, ShapeError


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ConfigurationError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigurationError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_in_range(value, name, low=None, high=None, low_open=False, high_open=False):
    if not isinstance(value, numbers.Real) or isinstance(value, bool) or not np.isfinite(value):
        raise ConfigurationError(f"{name} must be a finite real number, got {value!r}")
    if low is not None and (value < low or (low_open and value == low)):
        raise ConfigurationError(f"{name}={value} is below the allowed range")
    if high is not None and (value > high or (high_open and value == high)):
        raise ConfigurationError(f"{name}={value} is above the allowed range")
    return float(value)


def check_matrix(x, name="X", n_cols=None, dtype=np.float64):
    """Return ``x`` as a finite 2-D float array, optionally checking the column count."""
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if n_cols is not None and arr.shape[1] != n_cols:
        raise ShapeError(f"{name} has {arr.shape[1]} columns, expected {n_cols}")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{name} contains non-finite values")
    return arr


def check_vector(x, name="x", length=None):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise ShapeError(f"{name} has length {arr.shape[0]}, expected {length}")
    return arr


def check_labels(y, n_samples=None, n_classes=None, name="labels"):
    """Class indices as a 1-D int array in ``[0, n_classes)``."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    if n_samples is not None and arr.shape[0] != n_samples:
        raise ShapeError(f"{name} has {arr.shape[0]} entries, expected {n_samples}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ConfigurationError(f"{name} must be integer class indices")
    arr = arr.astype(np.int64)
    if arr.size and arr.min() < 0:
        raise ConfigurationError(f"{name} must be non-negative")
    if n_classes is not None and arr.size and arr.max() >= n_classes:
        raise ConfigurationError(f"{name} contains class {arr.max()} >= n_classes={n_classes}")
    return arr


def check_graphs(graphs):
    """Accept a Dataset, a single GraphData or any sequence of GraphData."""
    from .graphdata import Dataset, GraphData

    if isinstance(graphs, Dataset):
        return list(graphs.graphs)
    if isinstance(graphs, GraphData):
        return [graphs]
    out = list(graphs)
    for i, g in enumerate(out):
        if not isinstance(g, GraphData):
            raise ConfigurationError(f"item {i} is {type(g).__name__}, expected GraphData")
    return out
