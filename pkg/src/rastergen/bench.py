"""Decode throughput: cached single-step decoding vs full-prefix recompute.

The naive path is an independent loop that reruns the whole prefix through
the model for every emitted token; the cached path is the production engine.
Both draw from the same per-image counter streams, so their outputs must
agree token for token before any timing is trusted.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from statistics import median

import numpy as np

from .autograd import concat, no_grad
from .errors import ConfigError
from .formats import MetricsLogger
from .rng import CounterRng, row_seed
from .sampler import SamplingConfig, batch_generate, cfg_combine, filter_logits, sample_token
from .transformer import DESK_CONFIGS, ARModel, count_params

BENCH_COLUMNS = ["model", "params", "mode", "batch", "grid", "median_sec", "speedup_ratio", "seed"]


@dataclass
class BenchResult:
    model: str
    params: int
    batch: int
    grid: str
    naive_sec: float
    cached_sec: float
    speedup_ratio: float
    seed: int

    def __post_init__(self):
        if self.naive_sec <= 0 or self.cached_sec <= 0:
            raise ConfigError("benchmark times must be positive")


def naive_generate(model: ARModel, class_ids: np.ndarray, config: SamplingConfig) -> np.ndarray:
    """Decode by recomputing the full prefix for every token; no cache.

    Returns the same [b x grid_h x grid_w] tokens the cached engine produces
    for the same seed, only slower; the benchmark depends on that equality.
    """
    cfg = model.config
    class_ids = np.asarray(class_ids, dtype=np.int64)
    conds = model.class_condition(class_ids)
    b = conds.data.shape[0]
    guided = config.cfg_scale not in (0.0, 1.0)
    hw = cfg.grid_h * cfg.grid_w
    rngs = [CounterRng(row_seed(config.seed, i)) for i in range(b)]

    with no_grad():
        if guided:
            full_cond = concat([conds, model.null_condition(b)], axis=0)
        elif config.cfg_scale == 0.0:
            full_cond = model.null_condition(b)
        else:
            full_cond = conds
        tokens = np.zeros((b, 0), dtype=np.int64)
        for _ in range(hw):
            fed = np.concatenate([tokens, tokens]) if guided else tokens
            logits = model.forward_full(fed, full_cond).data[:, -1, :]
            fused = cfg_combine(logits[:b], logits[b:], config.cfg_scale) if guided else logits
            step = np.array([sample_token(filter_logits(fused[i], config), rngs[i])
                             for i in range(b)])
            tokens = np.concatenate([tokens, step[:, None]], axis=1)
    return tokens.astype(np.uint32).reshape(b, cfg.grid_h, cfg.grid_w)


def bench_decode(model: ARModel, class_ids: np.ndarray, config: SamplingConfig,
                 mode: str, repeats: int = 5, warmup: int = 2) -> tuple[float, np.ndarray]:
    """Median wall seconds for one full-batch generation, plus its tokens."""
    if mode not in ("naive", "cached"):
        raise ConfigError(f"mode must be 'naive' or 'cached', got {mode!r}")
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {repeats}")

    def run():
        if mode == "naive":
            return naive_generate(model, class_ids, config)
        return np.stack([g.indices for g in batch_generate(model, class_ids, config)])

    for _ in range(warmup):
        run()
    times, tokens = [], None
    for _ in range(repeats):
        t0 = time.perf_counter()
        tokens = run()
        times.append(time.perf_counter() - t0)
    return float(median(times)), tokens


def bench_model(name: str, model: ARModel, batch: int = 8, repeats: int = 5,
                seed: int = 0, cfg_scale: float = 2.0) -> BenchResult:
    """Time both decode modes on one model and check they emitted the same grids."""
    cfg = model.config
    n_classes = cfg.num_classes if cfg.num_classes is not None else 1
    class_ids = np.arange(batch, dtype=np.int64) % n_classes
    sampling = SamplingConfig(cfg_scale=cfg_scale, seed=seed)
    naive_sec, naive_tokens = bench_decode(model, class_ids, sampling, "naive", repeats)
    cached_sec, cached_tokens = bench_decode(model, class_ids, sampling, "cached", repeats)
    if not np.array_equal(naive_tokens, cached_tokens):
        raise RuntimeError(f"{name}: naive and cached decodes disagree; timings are meaningless")
    return BenchResult(model=name, params=count_params(cfg), batch=batch,
                       grid=f"{cfg.grid_h}x{cfg.grid_w}", naive_sec=naive_sec,
                       cached_sec=cached_sec, speedup_ratio=naive_sec / cached_sec, seed=seed)


def run_benchmark(model_names: list[str], batch: int = 8, repeats: int = 5, seed: int = 0,
                  cfg_scale: float = 2.0, csv_path=None) -> list[BenchResult]:
    """Benchmark the named desk-scale configs; one CSV row per (model, mode)."""
    results = []
    for name in model_names:
        if name not in DESK_CONFIGS:
            raise ConfigError(f"unknown model {name!r}; choose from {sorted(DESK_CONFIGS)}")
        model = ARModel.create(DESK_CONFIGS[name], seed=seed)
        # random head so the equality check exercises data-dependent sampling
        r = np.random.default_rng(seed + 17)
        model.weights["head"].data[:] = 0.2 * r.standard_normal(model.weights["head"].data.shape)
        results.append(bench_model(name, model, batch=batch, repeats=repeats,
                                   seed=seed, cfg_scale=cfg_scale))
    if csv_path:
        with MetricsLogger(csv_path, BENCH_COLUMNS) as log:
            for res in results:
                log.write(model=res.model, params=res.params, mode="naive", batch=res.batch,
                          grid=res.grid, median_sec=res.naive_sec, speedup_ratio="", seed=res.seed)
                log.write(model=res.model, params=res.params, mode="cached", batch=res.batch,
                          grid=res.grid, median_sec=res.cached_sec,
                          speedup_ratio=res.speedup_ratio, seed=res.seed)
    return results
