"""Codebook lookup: nearest-neighbor exactness, loss terms, grid plumbing."""

import numpy as np
import pytest

from rastergen.autograd import Tensor
from rastergen.errors import ConfigError, ShapeError
from rastergen.quantizer import (Codebook, TokenGrid, features_to_grid,
                                 grid_to_features, quantize, raster_scan,
                                 unraster, vq_loss)


def _codebook(size, dim, seed=0):
    return Codebook.create(size, dim, np.random.default_rng(seed))


# ---------------------------------------------------------------- TokenGrid

def test_token_grid_shape_and_dtype():
    g = TokenGrid(np.arange(12).reshape(3, 4))
    assert g.h == 3 and g.w == 4
    assert g.indices.dtype == np.uint32


def test_token_grid_rejects_non_2d_and_floats():
    with pytest.raises(ShapeError):
        TokenGrid(np.zeros(4, dtype=np.int64))
    with pytest.raises(ShapeError):
        TokenGrid(np.zeros((2, 2)))


def test_raster_is_row_major():
    g = np.array([[1, 2], [3, 4]])
    assert raster_scan(g).tolist() == [1, 2, 3, 4]
    assert np.array_equal(unraster(np.array([1, 2, 3, 4]), 2, 2), g)


def test_raster_round_trip_via_grid():
    g = TokenGrid(np.arange(20).reshape(4, 5))
    back = TokenGrid.from_raster(g.raster(), 4, 5)
    assert np.array_equal(back.indices, g.indices)


def test_unraster_length_check():
    with pytest.raises(ShapeError):
        unraster(np.arange(5), 2, 3)


# ---------------------------------------------------------------- codebook

def test_codebook_rows_are_unit_norm():
    cb = _codebook(16, 4)
    norms = np.linalg.norm(cb.vectors.data, axis=1)
    assert np.allclose(norms, 1.0)


def test_renormalize_restores_unit_norm():
    cb = _codebook(8, 4)
    cb.vectors.data *= 3.7
    cb.renormalize()
    assert np.allclose(np.linalg.norm(cb.vectors.data, axis=1), 1.0)


def test_codebook_size_validation():
    with pytest.raises(ConfigError):
        _codebook(1, 4)
    with pytest.raises(ConfigError):
        _codebook(8, 0)


# ---------------------------------------------------------------- quantize

def test_indices_match_exhaustive_scan():
    # literal distance scan vs per-row exhaustive loop, many sizes
    rng = np.random.default_rng(1)
    for _ in range(1000):
        k = int(rng.integers(2, 257))
        dim = int(rng.integers(1, 9))
        n = int(rng.integers(1, 8))
        cb = Codebook(Tensor(rng.standard_normal((k, dim)), requires_grad=True))
        feats = Tensor(rng.standard_normal((n, dim)))
        got = quantize(feats, cb).indices

        fn = feats.data / np.linalg.norm(feats.data, axis=1, keepdims=True)
        cn = cb.vectors.data / np.linalg.norm(cb.vectors.data, axis=1, keepdims=True)
        for i in range(n):
            best, best_d = 0, np.inf
            for j in range(k):
                d = float(((fn[i] - cn[j]) ** 2).sum())
                if d < best_d:
                    best, best_d = j, d
            assert got[i] == best


def test_ties_go_to_lowest_index():
    # duplicate rows: every feature must pick the first of the pair
    vecs = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    cb = Codebook(Tensor(vecs, requires_grad=True))
    feats = Tensor(np.array([[2.0, 0.0], [5.0, 0.0]]))
    assert quantize(feats, cb).indices.tolist() == [0, 0]


def test_quantized_rows_come_from_normalized_codebook():
    cb = _codebook(8, 4, seed=2)
    cb.vectors.data *= 2.0  # stored rows denormalized on purpose
    feats = Tensor(np.random.default_rng(3).standard_normal((5, 4)))
    res = quantize(feats, cb)
    norms = np.linalg.norm(res.quantized.data, axis=1)
    assert np.allclose(norms, 1.0)


def test_features_norm_is_unit():
    cb = _codebook(8, 4)
    feats = Tensor(np.random.default_rng(4).standard_normal((6, 4)) * 10)
    res = quantize(feats, cb)
    assert np.allclose(np.linalg.norm(res.features_norm.data, axis=1), 1.0)


def test_quantize_shape_checks():
    cb = _codebook(8, 4)
    with pytest.raises(ShapeError):
        quantize(Tensor(np.zeros((2, 3))), cb)
    with pytest.raises(ShapeError):
        quantize(Tensor(np.zeros((2, 2, 4))), cb)


def test_straight_output_is_bitwise_quantized():
    cb = _codebook(16, 4, seed=5)
    feats = Tensor(np.random.default_rng(6).standard_normal((7, 4)), requires_grad=True)
    res = quantize(feats, cb)
    st = res.straight()
    assert np.array_equal(st.data, res.quantized.data)


def test_straight_gradient_flows_to_features_not_codebook():
    cb = _codebook(16, 4, seed=7)
    feats = Tensor(np.random.default_rng(8).standard_normal((7, 4)), requires_grad=True)
    res = quantize(feats, cb)
    (res.straight() * res.straight()).mean().backward()
    assert feats.grad is not None
    assert cb.vectors.grad is None


# ---------------------------------------------------------------- vq_loss

def test_vq_loss_values():
    f = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]), requires_grad=True)
    q = Tensor(np.array([[0.0, 0.0], [0.0, 0.0]]), requires_grad=True)
    code, commit = vq_loss(f, q, beta=0.25)
    # mean squared difference is 0.5; commitment scaled by beta
    assert code.item() == pytest.approx(0.5)
    assert commit.item() == pytest.approx(0.125)


def test_vq_loss_gradient_routing():
    rng = np.random.default_rng(9)
    f = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    q = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    code, commit = vq_loss(f, q)
    code.backward()
    assert f.grad is None  # codebook term sees frozen features
    assert q.grad is not None
    f.grad = q.grad = None
    commit.backward()
    assert f.grad is not None  # commitment term sees frozen codes
    assert q.grad is None


def test_vq_loss_beta_zero_kills_commitment():
    rng = np.random.default_rng(10)
    f = Tensor(rng.standard_normal((4, 3)))
    q = Tensor(rng.standard_normal((4, 3)))
    _, commit = vq_loss(f, q, beta=0.0)
    assert commit.item() == 0.0


def test_vq_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        vq_loss(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


# ---------------------------------------------------------------- grid plumbing

def test_grid_feature_round_trip():
    x = Tensor(np.random.default_rng(11).standard_normal((2, 3, 4, 5)))
    rows = grid_to_features(x)
    assert rows.data.shape == (2 * 4 * 5, 3)
    back = features_to_grid(rows, 2, 4, 5)
    assert np.array_equal(back.data, x.data)


def test_grid_to_features_raster_order():
    # channel value encodes (image, row, col) so flattening order is visible
    x = np.zeros((1, 1, 2, 2))
    x[0, 0] = [[1, 2], [3, 4]]
    rows = grid_to_features(Tensor(x))
    assert rows.data.reshape(-1).tolist() == [1, 2, 3, 4]


def test_grid_plumbing_carries_gradients():
    x = Tensor(np.random.default_rng(12).standard_normal((2, 3, 2, 2)), requires_grad=True)
    rows = grid_to_features(x)
    (rows * rows).mean().backward()
    assert x.grad is not None and x.grad.shape == x.data.shape
