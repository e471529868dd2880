"""Causal decoder over raster-order image tokens with prefill conditioning.

Pre-norm blocks: RMS norm, multi-head attention, RMS norm, gated feed-forward,
with residual adds around both. No adaptive norms anywhere: conditioning
enters the sequence purely as prefilled positions before the first image
token. Rotation-based positions treat the token grid as 2D: half of each head
rotates by row index, half by column index, and condition positions sit at
angle zero for both axes.

The output head is zero-initialized and untied from the input embedding, so a
fresh model predicts the uniform distribution and its first loss is exactly
ln(vocab).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .autograd import Tensor, concat, is_grad_enabled, no_grad
from .errors import CapacityError, ConfigError, ShapeError
from .formats import load_checkpoint, load_json, save_checkpoint, save_json
from .ops import apply_rope, dropout, embedding, rms_norm, silu, softmax, softmax_cross_entropy, swiglu
from .rng import CounterRng

MAX_TEXT_COND_LEN = 120


def default_ffn_hidden(hidden: int) -> int:
    """Feed-forward width: 8/3 of hidden, rounded up to a multiple of 256."""
    return 256 * math.ceil(8 * hidden / 3 / 256)


@dataclass
class ModelConfig:
    layers: int
    hidden: int
    heads: int
    vocab_size: int
    grid_h: int = 8
    grid_w: int = 8
    ffn_hidden: int | None = None
    num_classes: int | None = 10
    cond_dim: int | None = None
    cond_len: int = 1
    dropout: float = 0.0
    rope_base: float = 10000.0
    norm_eps: float = 1e-6

    def __post_init__(self):
        if self.layers < 1 or self.hidden < 1 or self.heads < 1:
            raise ConfigError(f"layers/hidden/heads must be positive, got {self.layers}/{self.hidden}/{self.heads}")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.grid_h < 1 or self.grid_w < 1:
            raise ConfigError(f"grid must be positive, got {self.grid_h}x{self.grid_w}")
        if (self.num_classes is None) == (self.cond_dim is None):
            raise ConfigError("exactly one of num_classes (class labels) or cond_dim (text) must be set")
        if self.num_classes is not None:
            if self.num_classes < 1:
                raise ConfigError(f"num_classes must be positive, got {self.num_classes}")
            if self.cond_len != 1:
                raise ConfigError("class conditioning uses a single prefill position")
        else:
            if self.cond_dim < 1:
                raise ConfigError(f"cond_dim must be positive, got {self.cond_dim}")
            if not 1 <= self.cond_len <= MAX_TEXT_COND_LEN:
                raise ConfigError(f"cond_len must be in [1, {MAX_TEXT_COND_LEN}], got {self.cond_len}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.ffn_hidden is None:
            self.ffn_hidden = default_ffn_hidden(self.hidden)

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    @property
    def seq_len(self) -> int:
        return self.cond_len + self.grid_h * self.grid_w

    def require_rotatable(self):
        # deferred from __post_init__: parameter audits cover configs whose head
        # size cannot host the 2D rotation (two axes, two dims per angle)
        if self.head_dim % 4:
            raise ConfigError(f"head_dim {self.head_dim} must be divisible by 4 for 2D rotation")


def count_params(config: ModelConfig) -> int:
    """Exact trainable parameter count, computed without allocating anything."""
    h, ffn, k = config.hidden, config.ffn_hidden, config.vocab_size
    per_layer = 2 * h + 4 * h * h + 3 * h * ffn
    total = k * h + h * k + config.layers * per_layer + h
    if config.num_classes is not None:
        total += (config.num_classes + 1) * h
    else:
        total += config.cond_dim * h + h + h * h + h + h  # mlp w1,b1,w2,b2 + null row
    return total


# ImageNet-scale decoder family; sizes are audited in closed form, never allocated here
SCALED_CONFIGS = {
    "B": ModelConfig(layers=12, hidden=768, heads=12, vocab_size=16384, grid_h=16, grid_w=16, num_classes=1000),
    "L": ModelConfig(layers=24, hidden=1024, heads=16, vocab_size=16384, grid_h=16, grid_w=16, num_classes=1000),
    "XL": ModelConfig(layers=36, hidden=1280, heads=20, vocab_size=16384, grid_h=16, grid_w=16, num_classes=1000),
    "XXL": ModelConfig(layers=48, hidden=1536, heads=24, vocab_size=16384, grid_h=16, grid_w=16, num_classes=1000),
    "3B": ModelConfig(layers=24, hidden=3200, heads=32, vocab_size=16384, grid_h=16, grid_w=16, num_classes=1000),
}

# desk-scale models used throughout the tests
DESK_CONFIGS = {
    "nano": ModelConfig(layers=2, hidden=64, heads=4, vocab_size=64, grid_h=8, grid_w=8, num_classes=10),
    "micro": ModelConfig(layers=4, hidden=128, heads=4, vocab_size=64, grid_h=8, grid_w=8, num_classes=10),
}


def rope2d_angles(grid_h: int, grid_w: int, head_dim: int, base: float = 10000.0) -> np.ndarray:
    """Per-token rotation angles, [grid_h*grid_w x head_dim/2].

    The first head_dim/4 entries of a row are the row-axis angles, the rest the
    column-axis angles. Each axis uses the standard 1D geometric frequency
    ladder over head_dim/2 dims, so a 1-wide grid reproduces 1D behavior on the
    row half exactly.
    """
    if head_dim % 4:
        raise ShapeError(f"head_dim {head_dim} must be divisible by 4")
    q = head_dim // 4
    inv = base ** (-np.arange(q) * 2.0 / (head_dim // 2))
    rows = np.repeat(np.arange(grid_h), grid_w).astype(np.float64)
    cols = np.tile(np.arange(grid_w), grid_h).astype(np.float64)
    return np.concatenate([rows[:, None] * inv[None, :], cols[:, None] * inv[None, :]], axis=1)


def build_rope_tables(config: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin tables [seq_len x head_dim] in quarter-block layout.

    Condition positions occupy the first cond_len rows at angle zero, so their
    features pass through unrotated.
    """
    config.require_rotatable()
    q = config.head_dim // 4
    ang = rope2d_angles(config.grid_h, config.grid_w, config.head_dim, config.rope_base)
    # expand [hw x head_dim/2] = [row|col] to quarter blocks [row,row,col,col]
    full = np.concatenate([ang[:, :q], ang[:, :q], ang[:, q:], ang[:, q:]], axis=1)
    full = np.concatenate([np.zeros((config.cond_len, config.head_dim)), full], axis=0)
    return np.cos(full), np.sin(full)


class KVCache:
    """Per-layer key/value history for incremental decoding.

    All layers of one forward chunk write at the same base offset; ``advance``
    moves the fill point once the chunk has passed every layer.
    """

    def __init__(self, config: ModelConfig, batch: int, dtype=np.float64):
        shape = (config.layers, batch, config.heads, config.seq_len, config.head_dim)
        self.k = np.zeros(shape, dtype=dtype)
        self.v = np.zeros(shape, dtype=dtype)
        self.filled = 0
        self.batch = batch
        self.capacity = config.seq_len

    def write(self, layer: int, k_new: np.ndarray, v_new: np.ndarray):
        n = k_new.shape[2]
        if self.filled + n > self.capacity:
            raise CapacityError(f"cache holds {self.filled}/{self.capacity}, cannot add {n}")
        self.k[layer, :, :, self.filled : self.filled + n] = k_new
        self.v[layer, :, :, self.filled : self.filled + n] = v_new

    def view(self, layer: int, upto: int) -> tuple[np.ndarray, np.ndarray]:
        return self.k[layer, :, :, :upto], self.v[layer, :, :, :upto]

    def advance(self, n: int):
        self.filled += n


def _causal_mask(n: int, total: int, dtype=np.float64) -> np.ndarray:
    """[n x total] additive mask for a chunk whose queries end at ``total``."""
    start = total - n
    q = np.arange(n)[:, None] + start
    kpos = np.arange(total)[None, :]
    return np.where(kpos <= q, 0.0, -np.inf).astype(dtype)


@dataclass
class ARModel:
    """Weights plus the forward passes that use them."""

    config: ModelConfig
    weights: dict[str, Tensor]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._rope_cos, self._rope_sin = build_rope_tables(self.config)

    # ---- construction ----

    @classmethod
    def create(cls, config: ModelConfig, seed: int = 0) -> "ARModel":
        config.require_rotatable()
        rng = np.random.default_rng(seed)
        h, ffn, k = config.hidden, config.ffn_hidden, config.vocab_size
        res_scale = 1.0 / np.sqrt(2 * config.layers)
        w: dict[str, Tensor] = {}
        w["tok_emb"] = Tensor(rng.normal(0, 0.02, size=(k, h)), requires_grad=True)
        if config.num_classes is not None:
            # one extra row: the null (unconditional) embedding
            w["cond_emb"] = Tensor(rng.normal(0, 0.02, size=(config.num_classes + 1, h)), requires_grad=True)
        else:
            w["cond_w1"] = Tensor(rng.normal(0, 1 / np.sqrt(config.cond_dim), size=(config.cond_dim, h)), requires_grad=True)
            w["cond_b1"] = Tensor(np.zeros(h), requires_grad=True)
            w["cond_w2"] = Tensor(rng.normal(0, 1 / np.sqrt(h), size=(h, h)), requires_grad=True)
            w["cond_b2"] = Tensor(np.zeros(h), requires_grad=True)
            w["null_emb"] = Tensor(rng.normal(0, 0.02, size=(1, h)), requires_grad=True)
        for i in range(config.layers):
            w[f"l{i}.attn_norm"] = Tensor(np.ones(h), requires_grad=True)
            w[f"l{i}.wq"] = Tensor(rng.normal(0, 1 / np.sqrt(h), size=(h, h)), requires_grad=True)
            w[f"l{i}.wk"] = Tensor(rng.normal(0, 1 / np.sqrt(h), size=(h, h)), requires_grad=True)
            w[f"l{i}.wv"] = Tensor(rng.normal(0, 1 / np.sqrt(h), size=(h, h)), requires_grad=True)
            w[f"l{i}.wo"] = Tensor(rng.normal(0, res_scale / np.sqrt(h), size=(h, h)), requires_grad=True)
            w[f"l{i}.ffn_norm"] = Tensor(np.ones(h), requires_grad=True)
            w[f"l{i}.w_gate"] = Tensor(rng.normal(0, 1 / np.sqrt(h), size=(h, ffn)), requires_grad=True)
            w[f"l{i}.w_up"] = Tensor(rng.normal(0, 1 / np.sqrt(h), size=(h, ffn)), requires_grad=True)
            w[f"l{i}.w_down"] = Tensor(rng.normal(0, res_scale / np.sqrt(ffn), size=(ffn, h)), requires_grad=True)
        w["final_norm"] = Tensor(np.ones(h), requires_grad=True)
        w["head"] = Tensor(np.zeros((h, k)), requires_grad=True)  # uniform prediction at init
        return cls(config=config, weights=w)

    def params(self) -> list[Tensor]:
        return list(self.weights.values())

    @property
    def null_class_id(self) -> int:
        if self.config.num_classes is None:
            raise ConfigError("text-conditioned model has no class table")
        return self.config.num_classes

    # ---- conditioning ----

    def class_condition(self, labels: np.ndarray) -> Tensor:
        """[b] class ids to [b x 1 x hidden] prefill vectors. Id num_classes is the null."""
        labels = np.asarray(labels)
        if labels.ndim != 1:
            raise ShapeError(f"labels must be 1D, got shape {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() > self.null_class_id):
            raise IndexError(f"class id outside [0, {self.null_class_id}]")
        return embedding(self.weights["cond_emb"], labels.astype(np.int64)[:, None])

    def null_condition(self, batch: int) -> Tensor:
        if self.config.num_classes is not None:
            return self.class_condition(np.full(batch, self.null_class_id, dtype=np.int64))
        idx = np.zeros((batch, self.config.cond_len), dtype=np.int64)
        return embedding(self.weights["null_emb"], idx)

    def text_condition(self, raw: np.ndarray, pad_mask: np.ndarray | None = None) -> Tensor:
        """Project [b x cond_len x cond_dim] features through the 2-layer MLP.

        ``pad_mask`` marks valid positions with True; padded positions are
        replaced by the null embedding so left-padded prompts are well defined.
        """
        cfg = self.config
        if cfg.cond_dim is None:
            raise ConfigError("class-conditioned model has no text projector")
        raw = np.asarray(raw, dtype=np.float64)
        if raw.ndim != 3 or raw.shape[1] != cfg.cond_len or raw.shape[2] != cfg.cond_dim:
            raise ShapeError(f"text features must be [b x {cfg.cond_len} x {cfg.cond_dim}], got {raw.shape}")
        b = raw.shape[0]
        flat = Tensor(raw.reshape(b * cfg.cond_len, cfg.cond_dim))
        h1 = silu(flat @ self.weights["cond_w1"] + self.weights["cond_b1"])
        out = (h1 @ self.weights["cond_w2"] + self.weights["cond_b2"]).reshape(b, cfg.cond_len, cfg.hidden)
        if pad_mask is None:
            return out
        pad_mask = np.asarray(pad_mask, dtype=bool)
        if pad_mask.shape != (b, cfg.cond_len):
            raise ShapeError(f"pad mask must be [b x {cfg.cond_len}], got {pad_mask.shape}")
        keep = np.broadcast_to(pad_mask[:, :, None], out.data.shape).astype(np.float64)
        null = embedding(self.weights["null_emb"], np.zeros((b, cfg.cond_len), dtype=np.int64))
        return out * Tensor(keep) + null * Tensor(1.0 - keep)

    # ---- transformer internals ----

    def _attention(self, x: Tensor, layer: int, start: int, cache: KVCache | None,
                   train_mode: bool, rng: CounterRng | None) -> Tensor:
        cfg = self.config
        b, n, h = x.data.shape
        heads, hd = cfg.heads, cfg.head_dim
        w = self.weights
        xn = rms_norm(x, w[f"l{layer}.attn_norm"], cfg.norm_eps).reshape(b * n, h)
        cos = self._rope_cos[start : start + n]
        sin = self._rope_sin[start : start + n]

        def split(t):
            return t.reshape(b, n, heads, hd).transpose(0, 2, 1, 3)

        q = apply_rope(split(xn @ w[f"l{layer}.wq"]), cos, sin)
        k = apply_rope(split(xn @ w[f"l{layer}.wk"]), cos, sin)
        v = split(xn @ w[f"l{layer}.wv"])

        if cache is not None:
            cache.write(layer, k.data, v.data)
            k_all, v_all = (Tensor(a) for a in cache.view(layer, start + n))
        else:
            k_all, v_all = k, v
        total = k_all.data.shape[2]

        scores = (q @ k_all.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(hd))
        if n > 1 or total > start + n:
            mask = _causal_mask(n, total, scores.data.dtype)
            if start + n < total:  # queries never look past their own chunk
                mask[:, start + n :] = -np.inf
            scores = scores + Tensor(np.broadcast_to(mask, scores.data.shape).copy())
        probs = softmax(scores)
        ctx = (probs @ v_all).transpose(0, 2, 1, 3).reshape(b * n, h)
        out = (ctx @ self.weights[f"l{layer}.wo"]).reshape(b, n, h)
        if train_mode and cfg.dropout > 0:
            out = dropout(out, cfg.dropout, rng)
        return out

    def _block(self, x: Tensor, layer: int, start: int, cache: KVCache | None,
               train_mode: bool, rng: CounterRng | None) -> Tensor:
        cfg = self.config
        x = x + self._attention(x, layer, start, cache, train_mode, rng)
        b, n, h = x.data.shape
        ff = swiglu(
            rms_norm(x, self.weights[f"l{layer}.ffn_norm"], cfg.norm_eps).reshape(b * n, h),
            self.weights[f"l{layer}.w_gate"],
            self.weights[f"l{layer}.w_up"],
            self.weights[f"l{layer}.w_down"],
        ).reshape(b, n, h)
        if train_mode and cfg.dropout > 0:
            ff = dropout(ff, cfg.dropout, rng)
        return x + ff

    def _forward_chunk(self, x: Tensor, start: int, cache: KVCache | None,
                       train_mode: bool, rng: CounterRng | None) -> Tensor:
        if cache is not None and is_grad_enabled():
            raise ConfigError("cached decoding is an inference path; wrap it in no_grad()")
        if start + x.data.shape[1] > self.config.seq_len:
            raise CapacityError(
                f"positions {start}..{start + x.data.shape[1]} exceed sequence length {self.config.seq_len}"
            )
        if train_mode and self.config.dropout > 0:
            x = dropout(x, self.config.dropout, rng)
        for layer in range(self.config.layers):
            x = self._block(x, layer, start, cache, train_mode, rng)
        if cache is not None:
            cache.advance(x.data.shape[1])
        b, n, h = x.data.shape
        normed = rms_norm(x, self.weights["final_norm"], self.config.norm_eps)
        return (normed.reshape(b * n, h) @ self.weights["head"]).reshape(b, n, self.config.vocab_size)

    # ---- public forward passes ----

    def forward_full(self, tokens: np.ndarray, cond: Tensor, train_mode: bool = False,
                     rng: CounterRng | None = None, cache: KVCache | None = None) -> Tensor:
        """Logits [b x (cond_len + t) x vocab] for a whole prefix at once."""
        cfg = self.config
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 2:
            raise ShapeError(f"tokens must be [b x t], got shape {tokens.shape}")
        b, t = tokens.shape
        if t > cfg.grid_h * cfg.grid_w:
            raise ShapeError(f"{t} tokens exceed the {cfg.grid_h}x{cfg.grid_w} grid")
        if cond.data.shape != (b, cfg.cond_len, cfg.hidden):
            raise ShapeError(f"cond must be [{b} x {cfg.cond_len} x {cfg.hidden}], got {cond.data.shape}")
        if t:
            x = concat([cond, embedding(self.weights["tok_emb"], tokens)], axis=1)
        else:
            x = cond
        return self._forward_chunk(x, 0, cache, train_mode, rng)

    def prefill(self, cond: Tensor, cache: KVCache) -> np.ndarray:
        """Write the condition into an empty cache; return next-token logits [b x vocab]."""
        if cache.filled != 0:
            raise CapacityError("prefill expects an empty cache")
        logits = self.forward_full(np.zeros((cond.data.shape[0], 0), dtype=np.int64), cond, cache=cache)
        return logits.data[:, -1, :]

    def forward_step(self, tokens: np.ndarray, cache: KVCache) -> np.ndarray:
        """Feed one token per row through the cache; return next logits [b x vocab]."""
        cfg = self.config
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 1 or tokens.shape[0] != cache.batch:
            raise ShapeError(f"step tokens must be [{cache.batch}], got shape {tokens.shape}")
        if cache.filled < cfg.cond_len:
            raise CapacityError("cache has no condition prefill yet")
        x = embedding(self.weights["tok_emb"], tokens[:, None])
        logits = self._forward_chunk(x, cache.filled, cache, False, None)
        return logits.data[:, -1, :]

    def sequence_loss(self, tokens: np.ndarray, cond: Tensor, train_mode: bool = False,
                      rng: CounterRng | None = None) -> Tensor:
        """Mean next-token cross entropy over all grid positions."""
        cfg = self.config
        tokens = np.asarray(tokens, dtype=np.int64)
        b, t = tokens.shape
        logits = self.forward_full(tokens[:, :-1], cond, train_mode=train_mode, rng=rng)
        pred = logits[:, cfg.cond_len - 1 :, :].reshape(b * t, cfg.vocab_size)
        return softmax_cross_entropy(pred, tokens.reshape(-1))

    # ---- persistence ----

    def save(self, path):
        save_checkpoint(path, {k: v.data for k, v in self.weights.items()})
        save_json(str(path) + ".json", {"kind": "armodel", "config": asdict(self.config), "meta": self.meta})

    @classmethod
    def load(cls, path) -> "ARModel":
        doc = load_json(str(path) + ".json")
        if doc.get("kind") != "armodel":
            raise ConfigError(f"{path} is not a decoder checkpoint (kind={doc.get('kind')!r})")
        config = ModelConfig(**doc["config"])
        entries = load_checkpoint(path)
        weights = {k: Tensor(v.astype(np.float64), requires_grad=True) for k, v in entries.items()}
        model = cls(config=config, weights=weights, meta=doc.get("meta", {}))
        return model


def condition_dropout(cond: Tensor, null_cond: Tensor, p: float, rng: CounterRng) -> Tensor:
    """Replace each sample's condition with the null condition with probability p.

    One uniform draw per sample, in batch order. Gradients flow to whichever
    embedding ends up used, which is what trains the null row.
    """
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"condition dropout must be in [0, 1), got {p}")
    if cond.data.shape != null_cond.data.shape:
        raise ShapeError(f"cond {cond.data.shape} vs null {null_cond.data.shape}")
    if p == 0.0:
        return cond
    b = cond.data.shape[0]
    drop = np.array([rng.uniform() < p for _ in range(b)])
    keep = np.broadcast_to(~drop[:, None, None], cond.data.shape).astype(np.float64)
    return cond * Tensor(keep) + null_cond * Tensor(1.0 - keep)
