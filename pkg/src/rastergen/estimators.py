"""Estimator front end: fit/transform/predict wrappers over the training loops.

These follow the scikit-learn conventions: constructor arguments are stored
verbatim, fitted state lives in trailing-underscore attributes, and
``get_params``/``set_params``/``clone`` work out of the box. The heavy lifting
stays in the functional modules; this layer only validates, adapts, and holds
the fitted models.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .convnet import TokenizerConfig
from .data import ArrayDataset
from .metrics import psnr
from .sampler import SamplingConfig, batch_generate
from .training import TrainConfig, train_ar, train_tokenizer
from .transformer import ModelConfig
from .validation import as_float_images, as_label_array, as_token_rasters


class VectorQuantizedImageTokenizer(TransformerMixin, BaseEstimator):
    """Maps images to grids of discrete code indices and back.

    ``fit`` trains the encoder, codebook, and decoder on the input images;
    ``transform`` returns one row of raster-ordered code indices per image,
    and ``inverse_transform`` decodes such rows back to pixels.
    """

    def __init__(self, downsample=4, codebook_size=64, code_dim=4,
                 channels=(16, 32, 64), beta=0.25, steps=3000, batch_size=16,
                 base_lr=0.032, adv_start_step=20000, queue_capacity=4096, seed=0):
        self.downsample = downsample
        self.codebook_size = codebook_size
        self.code_dim = code_dim
        self.channels = channels
        self.beta = beta
        self.steps = steps
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.adv_start_step = adv_start_step
        self.queue_capacity = queue_capacity
        self.seed = seed

    def fit(self, X, y=None, metrics_path=None):
        X = as_float_images(X)
        dataset = ArrayDataset(X, y)
        tok_config = TokenizerConfig(in_channels=X.shape[1], downsample=self.downsample,
                                     codebook_size=self.codebook_size, code_dim=self.code_dim,
                                     channels=tuple(self.channels), beta=self.beta)
        train_config = TrainConfig(steps=self.steps, batch_size=self.batch_size,
                                   base_lr=self.base_lr, adv_start_step=self.adv_start_step,
                                   queue_capacity=self.queue_capacity, seed=self.seed)
        self.model_, self.history_ = train_tokenizer(dataset, tok_config, train_config,
                                                     metrics_path=metrics_path)
        self.grid_h_ = X.shape[2] // self.downsample
        self.grid_w_ = X.shape[3] // self.downsample
        self.usage_ = self.history_[-1]["usage"]
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = as_float_images(X)
        grids = self.model_.tokenize(X)
        return grids.reshape(X.shape[0], -1)

    def inverse_transform(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = as_token_rasters(X, self.codebook_size, self.grid_h_ * self.grid_w_)
        return self.model_.decode_tokens(X.reshape(-1, self.grid_h_, self.grid_w_))

    def score(self, X, y=None) -> float:
        """Mean round-trip PSNR in dB; higher is better."""
        check_is_fitted(self, "model_")
        X = as_float_images(X)
        return float(np.mean([psnr(img, rec) for img, rec in zip(X, self.model_.reconstruct(X))]))


class ImageTokenAutoregressor(BaseEstimator):
    """Class-conditional next-token model over tokenizer code grids.

    ``fit`` consumes raster rows as produced by the tokenizer's ``transform``
    plus class labels; ``predict`` samples new raster rows for the requested
    class ids using the stored sampling defaults.
    """

    def __init__(self, layers=2, hidden=64, heads=4, vocab_size=64, grid_h=8,
                 grid_w=8, n_classes=10, steps=2000, batch_size=16, base_lr=0.016,
                 cond_dropout=0.1, target_loss=None, temperature=1.0, top_k=0,
                 top_p=1.0, cfg_scale=2.0, seed=0):
        self.layers = layers
        self.hidden = hidden
        self.heads = heads
        self.vocab_size = vocab_size
        self.grid_h = grid_h
        self.grid_w = grid_w
        self.n_classes = n_classes
        self.steps = steps
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.cond_dropout = cond_dropout
        self.target_loss = target_loss
        self.temperature = temperature
        self.top_k = top_k
        self.top_p = top_p
        self.cfg_scale = cfg_scale
        self.seed = seed

    def _model_config(self) -> ModelConfig:
        return ModelConfig(layers=self.layers, hidden=self.hidden, heads=self.heads,
                           vocab_size=self.vocab_size, grid_h=self.grid_h,
                           grid_w=self.grid_w, num_classes=self.n_classes)

    def fit(self, X, y, metrics_path=None):
        X = as_token_rasters(X, self.vocab_size, self.grid_h * self.grid_w)
        y = as_label_array(y, X.shape[0], self.n_classes)
        tokens = X.reshape(-1, 1, self.grid_h, self.grid_w)
        train_config = TrainConfig(steps=self.steps, batch_size=self.batch_size,
                                   base_lr=self.base_lr, cond_dropout=self.cond_dropout,
                                   target_loss=self.target_loss, seed=self.seed)
        self.model_, self.history_ = train_ar(tokens, y, self._model_config(), train_config,
                                              metrics_path=metrics_path)
        return self

    def predict(self, X) -> np.ndarray:
        """Sample one raster row of tokens per requested class id."""
        check_is_fitted(self, "model_")
        X = np.asarray(X)
        if X.ndim != 1 or X.shape[0] == 0:
            raise ValueError(f"expected a non-empty 1D array of class ids, got shape {X.shape}")
        config = SamplingConfig(temperature=self.temperature, top_k=self.top_k,
                                top_p=self.top_p, cfg_scale=self.cfg_scale, seed=self.seed)
        grids = batch_generate(self.model_, X.astype(np.int64), config)
        return np.stack([g.raster() for g in grids])

    def score(self, X, y) -> float:
        """Negative mean next-token cross entropy; higher is better."""
        check_is_fitted(self, "model_")
        X = as_token_rasters(X, self.vocab_size, self.grid_h * self.grid_w)
        y = as_label_array(y, X.shape[0], self.n_classes)
        from .autograd import no_grad
        with no_grad():
            loss = self.model_.sequence_loss(X, self.model_.class_condition(y))
        return -float(loss.item())
