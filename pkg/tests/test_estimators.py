"""Estimator layer: sklearn conventions, validation, and round trips."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from rastergen.data import ArrayDataset, SyntheticDataset
from rastergen.errors import ConfigError, ShapeError
from rastergen.estimators import (ImageTokenAutoregressor,
                                  VectorQuantizedImageTokenizer)
from rastergen.validation import (as_float_images, as_label_array,
                                  as_token_rasters)


def _images(n=8):
    imgs, labels = SyntheticDataset(n_images=n, image_size=16, seed=1).all_images()
    return imgs, labels


def _tok(**kw):
    base = dict(downsample=4, codebook_size=16, code_dim=4, channels=(4, 6, 8),
                steps=12, batch_size=4, seed=0)
    base.update(kw)
    return VectorQuantizedImageTokenizer(**base)


def _ar(**kw):
    base = dict(layers=1, hidden=32, heads=2, vocab_size=16, grid_h=4, grid_w=4,
                n_classes=10, steps=10, batch_size=4, seed=0)
    base.update(kw)
    return ImageTokenAutoregressor(**base)


# ---------------------------------------------------------------- validation helpers

def test_as_float_images_checks():
    with pytest.raises(ShapeError):
        as_float_images(np.zeros((2, 16, 16)))
    with pytest.raises(ShapeError):
        as_float_images(np.zeros((2, 2, 16, 16)))
    with pytest.raises(ShapeError):
        as_float_images(np.zeros((0, 1, 16, 16)))
    with pytest.raises(ConfigError):
        as_float_images(np.full((1, 1, 8, 8), 2.0))
    with pytest.raises(ConfigError):
        as_float_images(np.full((1, 1, 8, 8), np.nan))


def test_as_label_array_checks():
    with pytest.raises(ShapeError):
        as_label_array(np.zeros((2, 2), dtype=np.int64), 4)
    with pytest.raises(ShapeError):
        as_label_array(np.zeros(4), 4)  # floats rejected
    with pytest.raises(ConfigError):
        as_label_array(np.array([0, 1, 5]), 3, n_classes=4)
    with pytest.raises(ConfigError):
        as_label_array(np.array([-1, 0]), 2)
    out = as_label_array(np.array([0, 1], dtype=np.int32), 2, 4)
    assert out.dtype == np.int64


def test_as_token_rasters_checks():
    with pytest.raises(ShapeError):
        as_token_rasters(np.zeros((2, 2, 2), dtype=np.int64), 16)
    with pytest.raises(ShapeError):
        as_token_rasters(np.zeros((2, 16)), 16)
    with pytest.raises(ShapeError):
        as_token_rasters(np.zeros((2, 9), dtype=np.int64), 16, seq_len=16)
    with pytest.raises(ConfigError):
        as_token_rasters(np.full((1, 4), 16, dtype=np.int64), 16)


# ---------------------------------------------------------------- array dataset

def test_array_dataset_duck_surface():
    imgs, labels = _images(6)
    ds = ArrayDataset(imgs, labels)
    assert ds.n_images == 6
    assert np.array_equal(ds.image(2), imgs[2])
    got, lab = ds.batch([1, 3])
    assert np.array_equal(got, imgs[[1, 3]])
    assert np.array_equal(lab, labels[[1, 3]])
    assert ds.n_classes == labels.max() + 1


def test_array_dataset_default_labels_and_validation():
    imgs, _ = _images(3)
    ds = ArrayDataset(imgs)
    assert ds.labels().tolist() == [0, 0, 0]
    with pytest.raises(ConfigError):
        ArrayDataset(imgs, np.array([0, 1]))
    with pytest.raises(ConfigError):
        ArrayDataset(imgs[:, :, 0])
    with pytest.raises(ConfigError):
        ArrayDataset(imgs, np.array([0, 1, 9]), n_classes=5)


# ---------------------------------------------------------------- tokenizer estimator

def test_tokenizer_params_round_trip_and_clone():
    est = _tok(codebook_size=32, seed=7)
    params = est.get_params()
    assert params["codebook_size"] == 32
    assert params["seed"] == 7
    twin = clone(est)
    assert twin.get_params() == params


def test_tokenizer_requires_fit():
    imgs, _ = _images(2)
    with pytest.raises(NotFittedError):
        _tok().transform(imgs)
    with pytest.raises(NotFittedError):
        _tok().inverse_transform(np.zeros((1, 16), dtype=np.int64))


def test_tokenizer_fit_transform_shapes():
    imgs, labels = _images()
    est = _tok().fit(imgs, labels)
    rasters = est.transform(imgs)
    assert rasters.shape == (8, 16)  # 16x16 images at p=4 -> 4x4 grids
    assert rasters.dtype == np.uint32
    assert rasters.max() < 16
    assert est.grid_h_ == 4 and est.grid_w_ == 4
    assert 0.0 < est.usage_ <= 1.0


def test_tokenizer_inverse_transform_round_trip():
    imgs, _ = _images()
    est = _tok().fit(imgs)
    back = est.inverse_transform(est.transform(imgs))
    assert back.shape == imgs.shape
    assert back.min() >= -1.0 and back.max() <= 1.0


def test_tokenizer_fit_transform_equals_fit_then_transform():
    imgs, _ = _images()
    a = _tok().fit_transform(imgs)
    b = _tok().fit(imgs).transform(imgs)
    assert np.array_equal(a, b)


def test_tokenizer_score_improves_with_training():
    imgs, _ = _images()
    short = _tok(steps=2).fit(imgs)
    longer = _tok(steps=120, base_lr=0.256).fit(imgs)
    assert longer.score(imgs) > short.score(imgs)


# ---------------------------------------------------------------- decoder estimator

def test_ar_params_round_trip_and_clone():
    est = _ar(cfg_scale=1.5, top_k=3)
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    assert twin.get_params()["cfg_scale"] == 1.5


def test_ar_requires_fit():
    with pytest.raises(NotFittedError):
        _ar().predict(np.array([0]))
    with pytest.raises(NotFittedError):
        _ar().score(np.zeros((1, 16), dtype=np.int64), np.array([0]))


def test_ar_fit_predict_shapes():
    rng = np.random.default_rng(0)
    X = rng.integers(0, 16, (20, 16)).astype(np.int64)
    y = rng.integers(0, 10, 20)
    est = _ar().fit(X, y)
    out = est.predict(np.array([0, 3, 7]))
    assert out.shape == (3, 16)
    assert out.dtype == np.uint32
    assert out.max() < 16


def test_ar_predict_is_deterministic_given_seed():
    rng = np.random.default_rng(1)
    X = rng.integers(0, 16, (12, 16)).astype(np.int64)
    y = rng.integers(0, 10, 12)
    est = _ar(seed=5).fit(X, y)
    a = est.predict(np.array([1, 2]))
    b = est.predict(np.array([1, 2]))
    assert np.array_equal(a, b)


def test_ar_score_is_negative_cross_entropy():
    rng = np.random.default_rng(2)
    X = rng.integers(0, 16, (10, 16)).astype(np.int64)
    y = rng.integers(0, 10, 10)
    est = _ar(steps=1).fit(X, y)
    s = est.score(X, y)
    assert s <= 0.0
    assert np.isfinite(s)


def test_ar_rejects_bad_tokens_and_labels():
    est = _ar()
    X = np.zeros((4, 16), dtype=np.int64)
    with pytest.raises(ConfigError):
        est.fit(np.full((4, 16), 16, dtype=np.int64), np.zeros(4, dtype=np.int64))
    with pytest.raises(ShapeError):
        est.fit(np.zeros((4, 9), dtype=np.int64), np.zeros(4, dtype=np.int64))
    with pytest.raises(ConfigError):
        est.fit(X, np.full(4, 10, dtype=np.int64))


def test_pipeline_composition():
    from sklearn.pipeline import Pipeline
    imgs, labels = _images()
    pipe = Pipeline([("tokens", _tok())])
    rasters = pipe.fit_transform(imgs)
    assert rasters.shape == (8, 16)
