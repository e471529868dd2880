"""Input checking shared by the estimator layer."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError


def as_float_images(X, name: str = "X") -> np.ndarray:
    """Validate [n, 1|3, h, w] float images in [-1, 1]."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4:
        raise ShapeError(f"{name} must be [n, channels, h, w], got shape {X.shape}")
    if X.shape[0] == 0:
        raise ShapeError(f"{name} must contain at least one image")
    if X.shape[1] not in (1, 3):
        raise ShapeError(f"{name} needs 1 or 3 channels, got {X.shape[1]}")
    if not np.isfinite(X).all():
        raise ConfigError(f"{name} contains non-finite values")
    if X.min() < -1.0 or X.max() > 1.0:
        raise ConfigError(f"{name} values must lie in [-1, 1], got [{X.min():.3g}, {X.max():.3g}]")
    return X


def as_label_array(y, n: int, n_classes: int | None = None, name: str = "y") -> np.ndarray:
    """Validate [n] integer class labels."""
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n:
        raise ShapeError(f"{name} must be [{n}], got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        raise ShapeError(f"{name} must be integer class ids, got {y.dtype}")
    y = y.astype(np.int64)
    if y.min() < 0:
        raise ConfigError(f"{name} labels must be non-negative")
    if n_classes is not None and y.max() >= n_classes:
        raise ConfigError(f"{name} label {y.max()} outside {n_classes} classes")
    return y


def as_token_rasters(X, vocab_size: int, seq_len: int | None = None,
                     name: str = "X") -> np.ndarray:
    """Validate [n, seq] integer token rows below the vocabulary size."""
    X = np.asarray(X)
    if X.ndim != 2:
        raise ShapeError(f"{name} must be [n, tokens], got shape {X.shape}")
    if X.shape[0] == 0:
        raise ShapeError(f"{name} must contain at least one row")
    if not np.issubdtype(X.dtype, np.integer):
        raise ShapeError(f"{name} must be integer token ids, got {X.dtype}")
    if seq_len is not None and X.shape[1] != seq_len:
        raise ShapeError(f"{name} rows must hold {seq_len} tokens, got {X.shape[1]}")
    X = X.astype(np.int64)
    if X.min() < 0 or X.max() >= vocab_size:
        raise ConfigError(f"{name} token ids must lie in [0, {vocab_size})")
    return X
