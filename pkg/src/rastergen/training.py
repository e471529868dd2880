"""Training loops: tokenizer, code precomputation, decoder, and evaluation.

Every loop draws its randomness from counter streams derived from the run
seed, so a rerun with the same configs produces bit-identical loss curves.
Metrics go to one CSV schema shared by both trainers; columns that do not
apply to a run stay empty.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .autograd import Tensor
from .convnet import (TokenizerConfig, TokenizerModel, build_discriminator,
                      decode, discriminator_forward, encode,
                      hinge_generator_term, patch_discriminator_step,
                      reconstruction_loss)
from .data import SyntheticDataset
from .errors import ConfigError, DivergenceError, ShapeError
from .formats import MetricsLogger, save_labels, save_tokens
from .metrics import CodeUsageQueue, psnr, ssim, ssim_batch
from .optim import AdamW
from .quantizer import features_to_grid, grid_to_features, quantize, vq_loss
from .rng import CounterRng, mix64
from .transformer import ARModel, ModelConfig, condition_dropout

METRIC_COLUMNS = ["step", "loss", "loss_rec", "loss_vq", "loss_commit", "loss_disc",
                  "usage", "psnr", "ssim", "wall_ms"]


@dataclass
class TrainConfig:
    """Shared knobs for both training loops.

    ``base_lr`` is quoted per 256 samples and scales linearly with the batch
    size, so halving the batch halves the actual step size.
    """

    steps: int = 3000
    batch_size: int = 16
    base_lr: float = 0.032
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.05
    grad_clip: float | None = 1.0
    cond_dropout: float = 0.1
    crops_per_image: int = 10
    adv_weight: float = 0.5
    adv_start_step: int = 20000
    perceptual_weight: float = 0.0
    queue_capacity: int = 4096
    target_loss: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError(f"steps/batch_size must be positive, got {self.steps}/{self.batch_size}")
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if not 0.0 <= self.cond_dropout < 1.0:
            raise ConfigError(f"cond_dropout must be in [0, 1), got {self.cond_dropout}")
        if self.crops_per_image < 1:
            raise ConfigError(f"crops_per_image must be >= 1, got {self.crops_per_image}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be positive or None, got {self.grad_clip}")
        if self.queue_capacity < 1:
            raise ConfigError(f"queue_capacity must be positive, got {self.queue_capacity}")

    @property
    def lr(self) -> float:
        return self.base_lr * self.batch_size / 256.0


def _check_finite(value: float, step: int, what: str):
    if not np.isfinite(value):
        raise DivergenceError(f"{what} became {value} at step {step}; lower the learning rate")


class _Log:
    """Collects history rows and mirrors them to an optional CSV."""

    def __init__(self, metrics_path):
        self.rows: list[dict] = []
        self._csv = MetricsLogger(metrics_path, METRIC_COLUMNS) if metrics_path else None

    def write(self, **row):
        self.rows.append(row)
        if self._csv:
            self._csv.write(**{k: row.get(k, "") for k in METRIC_COLUMNS})

    def close(self):
        if self._csv:
            self._csv.close()


def train_tokenizer(dataset: SyntheticDataset, tok_config: TokenizerConfig,
                    train_config: TrainConfig, metrics_path=None) -> tuple[TokenizerModel, list[dict]]:
    """Train encoder, codebook, and decoder; returns the model and its history.

    The quantizer trains with straight-through reconstruction plus codebook
    and commitment pulls; the patch discriminator joins in at
    ``adv_start_step``. The codebook is projected back to the unit sphere
    after every step. A non-finite loss aborts the run.
    """
    cfg = train_config
    model = TokenizerModel.create(tok_config, seed=cfg.seed)
    opt = AdamW(model.params(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                weight_decay=cfg.weight_decay, grad_clip=cfg.grad_clip)
    disc = build_discriminator(tok_config, np.random.default_rng(cfg.seed + 1))
    disc_opt = AdamW(list(disc.values()), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                     weight_decay=cfg.weight_decay, grad_clip=cfg.grad_clip)
    usage = CodeUsageQueue(tok_config.codebook_size, capacity=cfg.queue_capacity)
    order = CounterRng(mix64(cfg.seed ^ 0x746F6B656E697A65))
    log = _Log(metrics_path)

    try:
        for step in range(cfg.steps):
            t0 = time.perf_counter()
            idxs = [order.randint(dataset.n_images) for _ in range(cfg.batch_size)]
            imgs, _ = dataset.batch(idxs)
            x = Tensor(imgs)

            f = encode(model.encoder, x, tok_config)
            n, _, gh, gw = f.data.shape
            res = quantize(grid_to_features(f), model.codebook)
            z = features_to_grid(res.straight(), n, gh, gw)
            x_hat = decode(model.decoder, z, tok_config)

            rec = reconstruction_loss(x, x_hat, cfg.perceptual_weight)
            code_term, commit_term = vq_loss(res.features_norm, res.quantized, tok_config.beta)
            loss = rec + code_term + commit_term
            adversarial = step >= cfg.adv_start_step
            if adversarial:
                loss = loss + hinge_generator_term(discriminator_forward(disc, x_hat)) * cfg.adv_weight

            opt.zero_grad()
            loss.backward()
            opt.step()
            model.codebook.renormalize()

            disc_loss = ""
            if adversarial:
                disc_loss = patch_discriminator_step(disc, x, x_hat, disc_opt)
                _check_finite(disc_loss, step, "discriminator loss")

            usage.extend(res.indices)
            recon = np.clip(x_hat.data, -1.0, 1.0)
            loss_v = loss.item()
            _check_finite(loss_v, step, "loss")
            log.write(step=step, loss=loss_v, loss_rec=rec.item(), loss_vq=code_term.item(),
                      loss_commit=commit_term.item(), loss_disc=disc_loss, usage=usage.usage(),
                      psnr=psnr(imgs, recon),
                      ssim=float(np.mean(ssim_batch(imgs, recon))),
                      wall_ms=1000.0 * (time.perf_counter() - t0))
    finally:
        log.close()
    model.meta = {"train_steps": cfg.steps, "seed": cfg.seed}
    return model, log.rows


def _shifted(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """The same view of an image displaced by (dy, dx), reflect-padded."""
    if dy == 0 and dx == 0:
        return img
    pad = max(abs(dy), abs(dx))
    c, h, w = img.shape
    padded = np.pad(img, ((0, 0), (pad, pad), (pad, pad)), mode="reflect")
    return padded[:, pad + dy:pad + dy + h, pad + dx:pad + dx + w]


_RING = ((-2, -2), (-2, 0), (-2, 2), (0, -2), (0, 2), (2, -2), (2, 0), (2, 2))


def crop_offsets(crops_per_image: int, seed: int) -> list[tuple[int, int]]:
    """Center first, then the radius-2 compass ring, then seeded random shifts."""
    if crops_per_image < 1:
        raise ConfigError(f"crops_per_image must be >= 1, got {crops_per_image}")
    offsets = [(0, 0), *_RING][:crops_per_image]
    rng = CounterRng(mix64(seed ^ 0x63726F7073))
    while len(offsets) < crops_per_image:
        offsets.append((rng.randint(5) - 2, rng.randint(5) - 2))
    return offsets


def precompute_codes(dataset: SyntheticDataset, tokenizer: TokenizerModel,
                     crops_per_image: int = 10, seed: int = 0,
                     out_path=None) -> tuple[np.ndarray, np.ndarray]:
    """Encode every image under a fixed family of crops.

    Returns ([images, crops, gh, gw] uint32 codes, [images] labels) and
    optionally writes them as a token file plus its label sidecar.
    """
    offsets = crop_offsets(crops_per_image, seed)
    per_crop = []
    for dy, dx in offsets:
        grids = []
        for start in range(0, dataset.n_images, 64):
            imgs, _ = dataset.batch(np.arange(start, min(start + 64, dataset.n_images)))
            shifted = np.stack([_shifted(im, dy, dx) for im in imgs])
            grids.append(tokenizer.tokenize(shifted))
        per_crop.append(np.concatenate(grids))
    tokens = np.stack(per_crop, axis=1)  # [images, crops, gh, gw]
    labels = dataset.labels()
    if out_path is not None:
        save_tokens(out_path, tokens, tokenizer.config.codebook_size)
        save_labels(out_path, labels, dataset.n_classes,
                    extra={"crops_per_image": crops_per_image})
    return tokens, labels


def train_ar(tokens: np.ndarray, labels: np.ndarray, model_config: ModelConfig,
             train_config: TrainConfig, metrics_path=None) -> tuple[ARModel, list[dict]]:
    """Next-token training of the decoder on precomputed codes.

    Each sample picks one image and one of its crops; its class condition is
    replaced by the null condition with probability ``cond_dropout``. Stops
    early once the running loss reaches ``target_loss``, if one is set.
    """
    cfg = train_config
    tokens = np.asarray(tokens)
    labels = np.asarray(labels, dtype=np.int64)
    if tokens.ndim != 4:
        raise ShapeError(f"tokens must be [images, crops, h, w], got shape {tokens.shape}")
    n, crops, gh, gw = tokens.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels must be [{n}], got shape {labels.shape}")
    if (gh, gw) != (model_config.grid_h, model_config.grid_w):
        raise ConfigError(f"token grid {gh}x{gw} vs model grid {model_config.grid_h}x{model_config.grid_w}")
    if int(tokens.max()) >= model_config.vocab_size:
        raise ConfigError(f"token id {int(tokens.max())} outside model vocabulary {model_config.vocab_size}")
    if model_config.num_classes is not None and int(labels.max()) >= model_config.num_classes:
        raise ConfigError(f"label {int(labels.max())} outside {model_config.num_classes} classes")

    model = ARModel.create(model_config, seed=cfg.seed)
    opt = AdamW(list(model.weights.values()), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                weight_decay=cfg.weight_decay, grad_clip=cfg.grad_clip)
    order = CounterRng(mix64(cfg.seed ^ 0x617574 ^ 0x72656772))
    crop_rng = CounterRng(mix64(cfg.seed ^ 0x63686F696365))
    drop_rng = CounterRng(mix64(cfg.seed ^ 0x64726F70))
    net_rng = CounterRng(mix64(cfg.seed ^ 0x6E6574))
    flat = tokens.reshape(n, crops, gh * gw).astype(np.int64)
    log = _Log(metrics_path)

    try:
        for step in range(cfg.steps):
            t0 = time.perf_counter()
            img_idx = np.array([order.randint(n) for _ in range(cfg.batch_size)])
            crop_idx = np.array([crop_rng.randint(crops) for _ in range(cfg.batch_size)])
            batch = flat[img_idx, crop_idx]
            cond = model.class_condition(labels[img_idx])
            if cfg.cond_dropout > 0:
                cond = condition_dropout(cond, model.null_condition(cfg.batch_size),
                                         cfg.cond_dropout, drop_rng)
            loss = model.sequence_loss(batch, cond, train_mode=True, rng=net_rng)
            opt.zero_grad()
            loss.backward()
            opt.step()

            v = loss.item()
            _check_finite(v, step, "loss")
            log.write(step=step, loss=v, wall_ms=1000.0 * (time.perf_counter() - t0))
            if cfg.target_loss is not None and v <= cfg.target_loss:
                break
    finally:
        log.close()
    model.meta = {"train_steps": len(log.rows), "seed": cfg.seed}
    return model, log.rows


def eval_reconstruction(dataset: SyntheticDataset, tokenizer: TokenizerModel,
                        indices=None, csv_path=None, queue_capacity: int = 65536) -> dict:
    """Tokenize-decode every requested image and score the round trip.

    Returns mean PSNR/SSIM, global code usage over the split, and one row per
    image; the rows mirror to ``csv_path`` when given.
    """
    if indices is None:
        indices = np.arange(dataset.n_images)
    indices = np.asarray(indices, dtype=np.int64)
    usage = CodeUsageQueue(tokenizer.config.codebook_size, capacity=queue_capacity)
    rows = []
    csv = MetricsLogger(csv_path, ["index", "psnr", "ssim"]) if csv_path else None
    try:
        for idx in indices:
            img = dataset.image(int(idx))[None]
            toks = tokenizer.tokenize(img)
            recon = tokenizer.decode_tokens(toks)
            usage.extend(toks)
            row = {"index": int(idx), "psnr": psnr(img, recon), "ssim": ssim(img[0], recon[0])}
            rows.append(row)
            if csv:
                csv.write(**row)
    finally:
        if csv:
            csv.close()
    return {
        "count": len(rows),
        "psnr": float(np.mean([r["psnr"] for r in rows])) if rows else float("nan"),
        "ssim": float(np.mean([r["ssim"] for r in rows])) if rows else float("nan"),
        "usage": usage.usage() if len(usage) else float("nan"),
        "rows": rows,
    }
