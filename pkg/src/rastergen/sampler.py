"""Token sampling: guidance fusion, logit filtering, and the decode loop.

The decode loop runs every image of a batch in lockstep through a shared
batched cache. With guidance active, each image owns two model rows
(conditioned and null); their logits are fused per step before any filtering,
and both rows are fed the same sampled token. Each image draws from its own
counter stream seeded with seed XOR image index, so any one image of a batch
can be reproduced alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import concat, no_grad
from .errors import ConfigError, ShapeError
from .quantizer import TokenGrid
from .rng import CounterRng, row_seed
from .transformer import ARModel, KVCache


@dataclass
class SamplingConfig:
    temperature: float = 1.0
    top_k: int = 0
    top_p: float = 1.0
    cfg_scale: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.top_k < 0:
            raise ConfigError(f"top_k must be >= 0 (0 keeps all), got {self.top_k}")
        if not 0.0 < self.top_p <= 1.0:
            raise ConfigError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.cfg_scale < 0:
            raise ConfigError(f"cfg_scale must be >= 0, got {self.cfg_scale}")


def cfg_combine(cond_logits: np.ndarray, uncond_logits: np.ndarray, scale: float) -> np.ndarray:
    """uncond + scale * (cond - uncond), fused before any filtering.

    Scale 1 returns the conditional logits exactly and 0 the unconditional
    ones, so the guidance identities hold bit for bit rather than to rounding.
    """
    cond_logits = np.asarray(cond_logits, dtype=np.float64)
    uncond_logits = np.asarray(uncond_logits, dtype=np.float64)
    if cond_logits.shape != uncond_logits.shape:
        raise ShapeError(f"guidance shapes {cond_logits.shape} vs {uncond_logits.shape}")
    if scale == 1.0:
        return cond_logits.copy()
    if scale == 0.0:
        return uncond_logits.copy()
    return uncond_logits + scale * (cond_logits - uncond_logits)


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max())
    return z / z.sum()


def filter_logits(logits: np.ndarray, config: SamplingConfig) -> np.ndarray:
    """Temperature, then top-k, then top-p. Removed entries become -inf.

    Order among equal logits is broken by index, so the survivor set is
    deterministic. Top-p keeps the shortest probability-sorted prefix whose
    mass reaches top_p, plus any immediately following entries tied in
    probability with the last kept one. The argmax always survives.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise ShapeError(f"filter_logits works on one row, got shape {logits.shape}")
    k = logits.shape[0]
    x = logits / config.temperature
    # stable descending order: primary key value, secondary key index
    order = np.lexsort((np.arange(k), -x))

    kept = k
    if config.top_k and config.top_k < k:
        kept = config.top_k
    if config.top_p < 1.0:
        probs = _softmax(x)[order[:kept]]
        probs = probs / probs.sum()  # mass over what top-k left alive
        csum = np.cumsum(probs)
        cut = int(np.searchsorted(csum, config.top_p, side="left")) + 1
        while cut < kept and probs[cut] == probs[cut - 1]:
            cut += 1
        kept = min(kept, cut)

    assert kept >= 1  # the argmax is unconditionally inside the prefix
    out = np.full(k, -np.inf)
    keep_idx = order[:kept]
    out[keep_idx] = x[keep_idx]
    return out


def sample_token(filtered_logits: np.ndarray, rng: CounterRng) -> int:
    """Inverse-CDF draw over the surviving entries, one uniform consumed."""
    p = _softmax(np.asarray(filtered_logits, dtype=np.float64))
    cdf = np.cumsum(p)
    u = rng.uniform()
    idx = int(np.searchsorted(cdf, u, side="right"))
    alive = np.nonzero(p > 0)[0]
    return int(min(idx, alive[-1]))


def batch_generate(model: ARModel, class_ids: np.ndarray | None, config: SamplingConfig,
                   conds=None) -> list[TokenGrid]:
    """Decode one token grid per requested image, all in one cached batch.

    ``class_ids`` drives class-conditional models; prebuilt condition tensors
    can be passed instead via ``conds`` for text models. Guided runs process
    2b model rows (conditioned block, then null block). Scale 1 skips the
    null block and scale 0 the conditioned one, since the fusion formula
    collapses to a single block at those endpoints.
    """
    cfg = model.config
    if conds is None:
        class_ids = np.asarray(class_ids, dtype=np.int64)
        if class_ids.ndim != 1 or class_ids.size == 0:
            raise ShapeError(f"class_ids must be a non-empty 1D array, got shape {class_ids.shape}")
        conds = model.class_condition(class_ids)
    b = conds.data.shape[0]
    # the formula collapses at both endpoints, so those runs keep one block
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
        cache = KVCache(cfg, full_cond.data.shape[0])
        logits = model.prefill(full_cond, cache)

        tokens = np.zeros((b, hw), dtype=np.uint32)
        for t in range(hw):
            fused = cfg_combine(logits[:b], logits[b:], config.cfg_scale) if guided else logits
            step = np.empty(b, dtype=np.int64)
            for i in range(b):
                step[i] = sample_token(filter_logits(fused[i], config), rngs[i])
            tokens[:, t] = step
            if t + 1 < hw:
                feed = np.concatenate([step, step]) if guided else step
                logits = model.forward_step(feed, cache)
    return [TokenGrid(tokens[i].reshape(cfg.grid_h, cfg.grid_w)) for i in range(b)]


def generate(model: ARModel, class_id: int, config: SamplingConfig) -> TokenGrid:
    """Single-image decode with the same seed derivation as batch row 0."""
    return batch_generate(model, np.array([class_id]), config)[0]
