"""Reconstruction quality metrics and codebook usage tracking."""

from __future__ import annotations

from collections import deque

import numpy as np

from .errors import MetricNotReadyError, ShapeError

PSNR_CAP = 100.0


def psnr(a: np.ndarray, b: np.ndarray, data_range: float = 2.0) -> float:
    """Peak signal-to-noise ratio in dB over a declared value range.

    Identical inputs have infinite ratio; that is reported as the cap 100.0.
    Inputs differing by the full range everywhere give exactly 0.0.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr shapes {a.shape} vs {b.shape}")
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(data_range**2 / mse), PSNR_CAP)


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 2.0, window: int = 8) -> float:
    """Mean structural similarity over all sliding windows (stride 1).

    Uses uniform square windows and biased (divide by n) moment estimates.
    2D inputs are a single plane; 3D inputs are [c,h,w] and average over c.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ssim shapes {a.shape} vs {b.shape}")
    if a.ndim == 3:
        return float(np.mean([ssim(pa, pb, data_range, window) for pa, pb in zip(a, b)]))
    if a.ndim != 2:
        raise ShapeError(f"ssim expects 2D or 3D arrays, got shape {a.shape}")
    if a.shape[0] < window or a.shape[1] < window:
        raise ShapeError(f"image {a.shape} smaller than {window}x{window} window")

    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    wa = np.lib.stride_tricks.sliding_window_view(a, (window, window))
    wb = np.lib.stride_tricks.sliding_window_view(b, (window, window))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    var_a = (wa**2).mean(axis=(-2, -1)) - mu_a**2
    var_b = (wb**2).mean(axis=(-2, -1)) - mu_b**2
    cov = (wa * wb).mean(axis=(-2, -1)) - mu_a * mu_b
    score = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    return float(score.mean())


def _window_sums(x: np.ndarray, k: int) -> np.ndarray:
    """Sliding k-by-k window sums over [m,h,w] planes via a summed-area table."""
    m, h, w = x.shape
    s = np.zeros((m, h + 1, w + 1), dtype=np.float64)
    s[:, 1:, 1:] = x
    np.cumsum(s, axis=1, out=s)
    np.cumsum(s, axis=2, out=s)
    return s[:, k:, k:] - s[:, :-k, k:] - s[:, k:, :-k] + s[:, :-k, :-k]


def ssim_batch(a: np.ndarray, b: np.ndarray, data_range: float = 2.0, window: int = 8) -> np.ndarray:
    """Per-pair structural similarity for an image stack, one pass over all planes.

    Accepts [n,h,w] or [n,c,h,w]; returns an [n] array agreeing with ``ssim``
    on each pair up to floating-point reassociation (window moments come from
    summed-area tables here). The training loop scores whole batches through
    this so metric logging stays off the per-image Python path.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ssim shapes {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a, b = a[:, None], b[:, None]
    if a.ndim != 4:
        raise ShapeError(f"ssim_batch expects [n,h,w] or [n,c,h,w], got shape {a.shape}")
    n, c, h, w = a.shape
    if h < window or w < window:
        raise ShapeError(f"image {(h, w)} smaller than {window}x{window} window")

    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    pa = a.reshape(n * c, h, w)
    pb = b.reshape(n * c, h, w)
    inv = 1.0 / (window * window)
    mu_a = _window_sums(pa, window) * inv
    mu_b = _window_sums(pb, window) * inv
    var_a = _window_sums(pa * pa, window) * inv - mu_a**2
    var_b = _window_sums(pb * pb, window) * inv - mu_b**2
    cov = _window_sums(pa * pb, window) * inv - mu_a * mu_b
    score = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    return score.reshape(n * c, -1).mean(axis=1).reshape(n, c).mean(axis=1)


class CodeUsageQueue:
    """Fraction of the codebook seen in the last ``capacity`` emitted indices."""

    def __init__(self, vocab_size: int, capacity: int = 65536):
        if vocab_size < 1 or capacity < 1:
            raise ShapeError(f"vocab {vocab_size} and capacity {capacity} must be positive")
        self.vocab_size = vocab_size
        self.capacity = capacity
        self._queue: deque[int] = deque(maxlen=capacity)

    def extend(self, indices: np.ndarray):
        indices = np.asarray(indices).reshape(-1)
        if indices.size and (indices.min() < 0 or indices.max() >= self.vocab_size):
            raise IndexError(f"code index outside [0, {self.vocab_size})")
        self._queue.extend(int(i) for i in indices)

    def usage(self) -> float:
        if not self._queue:
            raise MetricNotReadyError("no code indices recorded yet")
        return len(set(self._queue)) / self.vocab_size

    def __len__(self):
        return len(self._queue)
