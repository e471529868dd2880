"""Codebook lookup with straight-through gradients.

Both the encoder features and the codebook rows are projected to the unit
sphere before the nearest-neighbor scan, so distances reduce to angles and
codebook collapse toward large-magnitude rows cannot happen. The decoder
always consumes normalized code vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor
from .errors import ConfigError, ShapeError
from .ops import embedding, l2_normalize_rows, straight_through


@dataclass
class TokenGrid:
    """A [h x w] grid of code indices for one image."""

    indices: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices)
        if self.indices.ndim != 2:
            raise ShapeError(f"token grid must be 2D, got shape {self.indices.shape}")
        if not np.issubdtype(self.indices.dtype, np.integer):
            raise ShapeError(f"token grid must be integer, got {self.indices.dtype}")
        self.indices = self.indices.astype(np.uint32)

    @property
    def h(self) -> int:
        return self.indices.shape[0]

    @property
    def w(self) -> int:
        return self.indices.shape[1]

    def raster(self) -> np.ndarray:
        return raster_scan(self.indices)

    @classmethod
    def from_raster(cls, seq: np.ndarray, h: int, w: int) -> "TokenGrid":
        return cls(unraster(seq, h, w))


def raster_scan(grid: np.ndarray) -> np.ndarray:
    """Row-major flattening: left to right, top to bottom."""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ShapeError(f"raster_scan expects a 2D grid, got shape {grid.shape}")
    return grid.reshape(-1).copy()

def unraster(seq: np.ndarray, h: int, w: int) -> np.ndarray:
    seq = np.asarray(seq)
    if seq.ndim != 1:
        raise ShapeError(f"unraster expects a 1D sequence, got shape {seq.shape}")
    if seq.size != h * w:
        raise ShapeError(f"sequence length {seq.size} does not fill a {h}x{w} grid")
    return seq.reshape(h, w).copy()


class Codebook:
    """A [size x dim] table of trainable code vectors, kept unit-norm.

    The stored rows are renormalized after every optimizer step, and the
    lookup normalizes defensively anyway so a codebook loaded from arbitrary
    values still behaves.
    """

    def __init__(self, vectors: Tensor):
        if vectors.data.ndim != 2:
            raise ShapeError(f"codebook must be 2D, got shape {vectors.data.shape}")
        self.vectors = vectors

    @classmethod
    def create(cls, size: int, dim: int, rng: np.random.Generator) -> "Codebook":
        if size < 2 or dim < 1:
            raise ConfigError(f"codebook needs size >= 2 and dim >= 1, got {size}x{dim}")
        raw = rng.normal(0.0, 1.0, size=(size, dim))
        raw /= np.linalg.norm(raw, axis=1, keepdims=True)
        return cls(Tensor(raw, requires_grad=True))

    @property
    def size(self) -> int:
        return self.vectors.data.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.data.shape[1]

    def normalized(self) -> Tensor:
        """Unit-norm rows, connected to the raw table for gradient flow."""
        return l2_normalize_rows(self.vectors)

    def renormalize(self):
        """Project the stored rows back to the unit sphere in place."""
        self.vectors.data /= np.linalg.norm(self.vectors.data, axis=1, keepdims=True)


@dataclass
class QuantizeResult:
    indices: np.ndarray
    quantized: Tensor
    features_norm: Tensor

    def straight(self) -> Tensor:
        """Decoder input: quantized values forward, encoder gradient backward."""
        return straight_through(self.features_norm, self.quantized)


def quantize(features: Tensor, codebook: Codebook) -> QuantizeResult:
    """Nearest codebook row (squared Euclidean) for each feature row.

    Ties go to the lowest index. The distance scan is written as a literal
    squared-difference sum so its tie behavior matches an exhaustive scan
    float for float.
    """
    if features.data.ndim != 2:
        raise ShapeError(f"quantize expects [rows x dim] features, got {features.data.shape}")
    if features.data.shape[1] != codebook.dim:
        raise ShapeError(f"feature dim {features.data.shape[1]} vs codebook dim {codebook.dim}")
    f_n = l2_normalize_rows(features)
    cb_n = codebook.normalized()
    diff = f_n.data[:, None, :] - cb_n.data[None, :, :]
    dist = (diff * diff).sum(axis=-1)
    indices = np.argmin(dist, axis=1)  # argmin returns the first minimum: lowest index wins ties
    return QuantizeResult(indices=indices, quantized=embedding(cb_n, indices), features_norm=f_n)


def vq_loss(features_norm: Tensor, quantized: Tensor, beta: float = 0.25) -> tuple[Tensor, Tensor]:
    """Codebook and commitment terms, mean over positions.

    The first term moves code vectors toward frozen features; the second,
    scaled by beta, moves features toward frozen code vectors.
    """
    if features_norm.data.shape != quantized.data.shape:
        raise ShapeError(f"vq_loss shapes {features_norm.data.shape} vs {quantized.data.shape}")
    d_code = features_norm.detach() - quantized
    d_commit = features_norm - quantized.detach()
    codebook_term = (d_code * d_code).mean()
    commitment_term = (d_commit * d_commit).mean() * beta
    return codebook_term, commitment_term


def grid_to_features(x: Tensor) -> Tensor:
    """[n,c,h,w] feature map to [n*h*w, c] rows, raster order within each image."""
    n, c, h, w = x.data.shape
    return x.transpose(0, 2, 3, 1).reshape(n * h * w, c)


def features_to_grid(rows: Tensor, n: int, h: int, w: int) -> Tensor:
    """Inverse of ``grid_to_features``."""
    c = rows.data.shape[1]
    return rows.reshape(n, h, w, c).transpose(0, 3, 1, 2)
