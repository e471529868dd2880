"""Convolutional encoder/decoder pair and the patch discriminator.

The encoder halves the spatial resolution once per stage with stride-2 3x3
convolutions; the decoder mirrors it with stride-2 4x4 transposed
convolutions, so a power-of-two downsample factor maps cleanly in both
directions. The decoder head is linear: outputs are unbounded and callers
clamp to [-1, 1] only when exporting images.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .autograd import Tensor, no_grad
from .errors import ConfigError, ShapeError
from .formats import load_checkpoint, load_json, save_checkpoint, save_json
from .ops import add_channel_bias, conv2d, conv2d_transpose, leaky_relu, silu
from .quantizer import Codebook, features_to_grid, grid_to_features, quantize


@dataclass
class TokenizerConfig:
    """Architecture of the image tokenizer.

    ``channels[0]`` is the stem width; each later entry is the width after one
    downsampling stage, so ``len(channels) == log2(downsample) + 1``.
    """

    in_channels: int = 1
    downsample: int = 4
    codebook_size: int = 64
    code_dim: int = 4
    channels: tuple[int, ...] = (16, 32, 64)
    beta: float = 0.25
    disc_channels: tuple[int, ...] = (16, 32)

    def __post_init__(self):
        self.channels = tuple(self.channels)
        self.disc_channels = tuple(self.disc_channels)
        p = self.downsample
        if p < 2 or (p & (p - 1)) != 0:
            raise ConfigError(f"downsample must be a power of two >= 2, got {p}")
        if self.in_channels not in (1, 3):
            raise ConfigError(f"in_channels must be 1 or 3, got {self.in_channels}")
        if len(self.channels) != p.bit_length():
            raise ConfigError(
                f"channels needs log2(downsample)+1 = {p.bit_length()} entries, got {len(self.channels)}"
            )
        if len(self.disc_channels) != 2:
            raise ConfigError(f"disc_channels needs exactly 2 entries, got {len(self.disc_channels)}")
        if self.codebook_size < 2:
            raise ConfigError(f"codebook_size must be >= 2, got {self.codebook_size}")
        if self.code_dim < 1:
            raise ConfigError(f"code_dim must be >= 1, got {self.code_dim}")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")

    @property
    def stages(self) -> int:
        return self.downsample.bit_length() - 1


def _conv_param(rng, out_c, in_c, k, gain=1.0):
    std = gain / np.sqrt(in_c * k * k)
    return Tensor(rng.normal(0.0, std, size=(out_c, in_c, k, k)), requires_grad=True)


def _bias_param(c):
    return Tensor(np.zeros(c), requires_grad=True)


def build_encoder(config: TokenizerConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    ch = config.channels
    w = {"stem_w": _conv_param(rng, ch[0], config.in_channels, 3), "stem_b": _bias_param(ch[0])}
    for i in range(config.stages):
        w[f"down{i}_w"] = _conv_param(rng, ch[i + 1], ch[i], 3)
        w[f"down{i}_b"] = _bias_param(ch[i + 1])
    w["head_w"] = _conv_param(rng, config.code_dim, ch[-1], 3)
    w["head_b"] = _bias_param(config.code_dim)
    return w


def encode(weights: dict[str, Tensor], x: Tensor, config: TokenizerConfig) -> Tensor:
    """[n,in,h,w] images to an [n,code_dim,h/p,w/p] feature map."""
    if x.data.ndim != 4 or x.data.shape[1] != config.in_channels:
        raise ShapeError(f"encoder input must be [n,{config.in_channels},h,w], got {x.data.shape}")
    if x.data.shape[2] % config.downsample or x.data.shape[3] % config.downsample:
        raise ShapeError(f"spatial dims {x.data.shape[2:]} not divisible by {config.downsample}")
    h = silu(add_channel_bias(conv2d(x, weights["stem_w"], 1, 1), weights["stem_b"]))
    for i in range(config.stages):
        h = silu(add_channel_bias(conv2d(h, weights[f"down{i}_w"], 2, 1), weights[f"down{i}_b"]))
    return add_channel_bias(conv2d(h, weights["head_w"], 1, 1), weights["head_b"])


def build_decoder(config: TokenizerConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    ch = config.channels
    w = {"in_w": _conv_param(rng, ch[-1], config.code_dim, 3), "in_b": _bias_param(ch[-1])}
    for i in range(config.stages):
        # up{i} mirrors down{stages-1-i}: transposed kernel is [in_c, out_c, 4, 4]
        hi, lo = ch[config.stages - i], ch[config.stages - i - 1]
        w[f"up{i}_w"] = Tensor(
            rng.normal(0.0, 1.0 / np.sqrt(hi * 16), size=(hi, lo, 4, 4)), requires_grad=True
        )
        w[f"up{i}_b"] = _bias_param(lo)
    w["out_w"] = _conv_param(rng, config.in_channels, ch[0], 3, gain=0.5)
    w["out_b"] = _bias_param(config.in_channels)
    return w


def decode(weights: dict[str, Tensor], z: Tensor, config: TokenizerConfig) -> Tensor:
    """[n,code_dim,h,w] code vectors to [n,in,h*p,w*p] images, unclamped."""
    if z.data.ndim != 4 or z.data.shape[1] != config.code_dim:
        raise ShapeError(f"decoder input must be [n,{config.code_dim},h,w], got {z.data.shape}")
    h = silu(add_channel_bias(conv2d(z, weights["in_w"], 1, 1), weights["in_b"]))
    for i in range(config.stages):
        h = silu(add_channel_bias(conv2d_transpose(h, weights[f"up{i}_w"], 2, 1), weights[f"up{i}_b"]))
    return add_channel_bias(conv2d(h, weights["out_w"], 1, 1), weights["out_b"])


def reconstruction_loss(x: Tensor, x_hat: Tensor, perceptual_weight: float = 0.0) -> Tensor:
    """Pixel MSE plus an optional perceptual term.

    The perceptual features default to the identity map, which folds the term
    into a second MSE; it exists so a learned feature extractor can slot in.
    """
    d = x_hat - x.detach()
    mse = (d * d).mean()
    if perceptual_weight == 0.0:
        return mse
    return mse * (1.0 + perceptual_weight)


# ---------------------------------------------------------------------------
# patch discriminator


def build_discriminator(config: TokenizerConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    d = config.disc_channels
    return {
        "c0_w": _conv_param(rng, d[0], config.in_channels, 4),
        "c0_b": _bias_param(d[0]),
        "c1_w": _conv_param(rng, d[1], d[0], 4),
        "c1_b": _bias_param(d[1]),
        "c2_w": _conv_param(rng, 1, d[1], 3),
        "c2_b": _bias_param(1),
    }


def discriminator_forward(weights: dict[str, Tensor], x: Tensor) -> Tensor:
    """Patch scores [n,1,h/4,w/4]; each score judges one receptive field."""
    h = leaky_relu(add_channel_bias(conv2d(x, weights["c0_w"], 2, 1), weights["c0_b"]))
    h = leaky_relu(add_channel_bias(conv2d(h, weights["c1_w"], 2, 1), weights["c1_b"]))
    return add_channel_bias(conv2d(h, weights["c2_w"], 1, 1), weights["c2_b"])


def hinge_disc_loss(real_scores: Tensor, fake_scores: Tensor) -> Tensor:
    """0.5 * (mean relu(1 - real) + mean relu(1 + fake)); all-zero scores give 1.0."""
    from .ops import relu

    return (relu(1.0 - real_scores).mean() + relu(1.0 + fake_scores).mean()) * 0.5


def hinge_generator_term(fake_scores: Tensor) -> Tensor:
    """Non-saturating generator objective: push fake scores up."""
    return -fake_scores.mean()


def patch_discriminator_step(disc: dict[str, Tensor], real: Tensor, fake: Tensor, optimizer) -> float:
    """One hinge-loss update of the discriminator on a frozen real/fake pair."""
    optimizer.zero_grad()
    loss = hinge_disc_loss(discriminator_forward(disc, real.detach()),
                           discriminator_forward(disc, fake.detach()))
    loss.backward()
    optimizer.step()
    return loss.item()


# ---------------------------------------------------------------------------
# the assembled tokenizer


@dataclass
class TokenizerModel:
    """Encoder, decoder, and codebook under one roof."""

    config: TokenizerConfig
    encoder: dict[str, Tensor]
    decoder: dict[str, Tensor]
    codebook: Codebook
    meta: dict = field(default_factory=dict)

    @classmethod
    def create(cls, config: TokenizerConfig, seed: int = 0) -> "TokenizerModel":
        rng = np.random.default_rng(seed)
        return cls(
            config=config,
            encoder=build_encoder(config, rng),
            decoder=build_decoder(config, rng),
            codebook=Codebook.create(config.codebook_size, config.code_dim, rng),
        )

    def params(self) -> list[Tensor]:
        return [*self.encoder.values(), *self.decoder.values(), self.codebook.vectors]

    def tokenize(self, images: np.ndarray) -> np.ndarray:
        """[n,c,h,w] images to [n, h/p, w/p] uint32 code indices."""
        with no_grad():
            f = encode(self.encoder, Tensor(images), self.config)
            n, _, gh, gw = f.data.shape
            res = quantize(grid_to_features(f), self.codebook)
        return res.indices.reshape(n, gh, gw).astype(np.uint32)

    def decode_tokens(self, tokens: np.ndarray) -> np.ndarray:
        """[n,gh,gw] code indices back to [n,c,h,w] images, clamped to [-1,1]."""
        tokens = np.asarray(tokens)
        if tokens.ndim != 3:
            raise ShapeError(f"expected [n,gh,gw] tokens, got shape {tokens.shape}")
        if tokens.size and (tokens.min() < 0 or int(tokens.max()) >= self.codebook.size):
            raise IndexError(f"token id outside codebook of {self.codebook.size}")
        n, gh, gw = tokens.shape
        with no_grad():
            cb = self.codebook.normalized()
            rows = cb.data[tokens.reshape(-1).astype(np.int64)]
            z = features_to_grid(Tensor(rows), n, gh, gw)
            out = decode(self.decoder, z, self.config)
        return np.clip(out.data, -1.0, 1.0)

    def reconstruct(self, images: np.ndarray) -> np.ndarray:
        return self.decode_tokens(self.tokenize(images))

    def save(self, path):
        entries = {}
        for prefix, group in (("enc", self.encoder), ("dec", self.decoder)):
            for k, v in group.items():
                entries[f"{prefix}.{k}"] = v.data
        entries["codebook"] = self.codebook.vectors.data
        save_checkpoint(path, entries)
        save_json(str(path) + ".json", {"kind": "tokenizer", "config": asdict(self.config), "meta": self.meta})

    @classmethod
    def load(cls, path) -> "TokenizerModel":
        doc = load_json(str(path) + ".json")
        if doc.get("kind") != "tokenizer":
            raise ConfigError(f"{path} is not a tokenizer checkpoint (kind={doc.get('kind')!r})")
        config = TokenizerConfig(**{**doc["config"], "channels": tuple(doc["config"]["channels"]),
                                    "disc_channels": tuple(doc["config"]["disc_channels"])})
        entries = load_checkpoint(path)
        rng = np.random.default_rng(0)
        enc = build_encoder(config, rng)
        dec = build_decoder(config, rng)
        for k, t in enc.items():
            t.data = entries[f"enc.{k}"].astype(np.float64)
        for k, t in dec.items():
            t.data = entries[f"dec.{k}"].astype(np.float64)
        cb = Codebook(Tensor(entries["codebook"].astype(np.float64), requires_grad=True))
        model = cls(config=config, encoder=enc, decoder=dec, codebook=cb, meta=doc.get("meta", {}))
        return model
