"""Vector-quantized image tokenizer plus raster-order autoregressive generation."""

from . import _threads  # noqa: F401  must run before numpy spins up its pools

from .autograd import Tensor, no_grad, concat, param
from .errors import (
    CapacityError,
    ConfigError,
    DivergenceError,
    FormatError,
    MetricNotReadyError,
    ShapeError,
)
from .rng import CounterRng, mix64, row_seed
from .convnet import TokenizerConfig, TokenizerModel
from .data import ArrayDataset, SyntheticDataset
from .quantizer import Codebook, TokenGrid
from .transformer import DESK_CONFIGS, SCALED_CONFIGS, ARModel, ModelConfig, count_params
from .sampler import SamplingConfig, batch_generate, generate
from .training import TrainConfig, eval_reconstruction, precompute_codes, train_ar, train_tokenizer
from .bench import BenchResult, bench_decode, run_benchmark
from .estimators import ImageTokenAutoregressor, VectorQuantizedImageTokenizer

__version__ = "0.1.0"
