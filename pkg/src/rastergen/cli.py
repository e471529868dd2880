"""Command-line pipeline: data, tokenizer, codes, decoder, images, scores, timings.

Every subcommand takes an optional JSON config path; built-in defaults fill
anything the file leaves out, and command flags override the file. Exit codes:
0 success, 2 malformed config or input file, 3 training diverged.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np

from .bench import run_benchmark
from .convnet import TokenizerConfig, TokenizerModel
from .data import SyntheticDataset
from .errors import ConfigError, DivergenceError, FormatError, ShapeError
from .formats import load_labels, load_json, load_tokens, write_image
from .sampler import SamplingConfig, batch_generate
from .training import TrainConfig, eval_reconstruction, precompute_codes, train_ar, train_tokenizer
from .transformer import DESK_CONFIGS, ARModel, ModelConfig

DEFAULTS = {
    "data": {},
    "tokenizer": {},
    "model": {"name": "nano"},
    "train_tokenizer": {"steps": 3000, "base_lr": 0.032},
    "train_ar": {"steps": 10000, "base_lr": 0.016},
    "sampling": {},
    "encode": {"crops_per_image": 10, "seed": 0},
    "eval": {"n_images": 64, "seed": 1},
    "bench": {"models": ["nano", "micro"], "batch": 8, "repeats": 5, "seed": 0, "cfg_scale": 2.0},
}


def load_config(path=None) -> dict:
    """Built-in defaults, optionally overlaid with a JSON file's sections."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is None:
        return cfg
    doc = load_json(path)
    unknown = sorted(set(doc) - set(cfg))
    if unknown:
        raise ConfigError(f"{path}: unknown config section(s): {', '.join(unknown)}")
    for section, values in doc.items():
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: section {section!r} must be a JSON object")
        if section == "model":
            cfg[section] = dict(values)  # replaces wholesale, so explicit fields drop the default preset name
        else:
            cfg[section].update(values)
    return cfg


def _build(section: dict, cls, label: str):
    """Instantiate a config dataclass, rejecting unknown keys by name."""
    allowed = {f.name for f in dataclass_fields(cls)}
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"unknown {label} option(s): {', '.join(unknown)}")
    try:
        return cls(**section)
    except TypeError as e:
        raise ConfigError(f"bad {label} config: {e}") from e


def _dataset(section: dict, **overrides) -> SyntheticDataset:
    return _build({**section, **overrides}, SyntheticDataset, "data")


def _tokenizer_config(cfg: dict) -> TokenizerConfig:
    section = dict(cfg["tokenizer"])
    section.setdefault("in_channels", cfg["data"].get("channels", 1))
    for key in ("channels", "disc_channels"):
        if key in section:
            section[key] = tuple(section[key])
    return _build(section, TokenizerConfig, "tokenizer")


def _model_config(section: dict) -> ModelConfig:
    section = dict(section)
    name = section.pop("name", None)
    if name is not None:
        if section:
            raise ConfigError("model section must give either a preset name or explicit fields, not both")
        if name not in DESK_CONFIGS:
            raise ConfigError(f"unknown model preset {name!r}; choose from {sorted(DESK_CONFIGS)}")
        return DESK_CONFIGS[name]
    return _build(section, ModelConfig, "model")


def _train_config(section: dict, args, **extra) -> TrainConfig:
    section = dict(section)
    section.update(extra)
    if args.steps is not None:
        section["steps"] = args.steps
    if args.seed is not None:
        section["seed"] = args.seed
    return _build(section, TrainConfig, "training")


def _sampling_config(cfg: dict, args) -> SamplingConfig:
    section = dict(cfg["sampling"])
    for key in ("cfg_scale", "top_k", "top_p", "temperature", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            section[key] = val
    return _build(section, SamplingConfig, "sampling")


def _prepare_out(path, directory=False) -> Path:
    out = Path(path)
    if directory:
        out.mkdir(parents=True, exist_ok=True)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    overrides = {} if args.seed is None else {"seed": args.seed}
    data = _dataset(cfg["data"], **overrides)
    out = _prepare_out(args.out, directory=True)
    ext = ".pgm" if data.channels == 1 else ".ppm"
    for i in range(data.n_images):
        write_image(out / f"img_{i:05d}{ext}", data.image(i))
    doc = {"labels": [int(data.label(i)) for i in range(data.n_images)],
           "num_classes": data.n_classes}
    (out / "labels.json").write_text(json.dumps(doc) + "\n")
    print(f"wrote {data.n_images} images and labels.json to {out}")
    return 0


def _cmd_train_tokenizer(args) -> int:
    cfg = load_config(args.config)
    data = _dataset(cfg["data"])
    tok_config = _tokenizer_config(cfg)
    train_config = _train_config(cfg["train_tokenizer"], args)
    model, rows = train_tokenizer(data, tok_config, train_config, metrics_path=args.metrics)
    model.save(_prepare_out(args.out))
    last = rows[-1]
    print(f"step {last['step']}: loss={last['loss']:.4f} usage={last['usage']}")
    print(f"saved tokenizer to {args.out}")
    return 0


def _cmd_encode(args) -> int:
    cfg = load_config(args.config)
    tokenizer = TokenizerModel.load(args.tokenizer)
    data = _dataset(cfg["data"])
    crops = args.crops if args.crops is not None else cfg["encode"]["crops_per_image"]
    seed = args.seed if args.seed is not None else cfg["encode"]["seed"]
    out = _prepare_out(args.out)
    tokens, _ = precompute_codes(data, tokenizer, crops_per_image=crops, seed=seed, out_path=out)
    print(f"wrote {tokens.shape[0]}x{tokens.shape[1]} token grids "
          f"({tokens.shape[2]}x{tokens.shape[3]}) to {out}")
    return 0


def _cmd_train_ar(args) -> int:
    cfg = load_config(args.config)
    tokens, _ = load_tokens(args.tokens)
    labels, _ = load_labels(args.tokens)
    model_config = _model_config(cfg["model"])
    train_config = _train_config(cfg["train_ar"], args)
    model, rows = train_ar(tokens, labels, model_config, train_config, metrics_path=args.metrics)
    model.save(_prepare_out(args.out))
    last = rows[-1]
    print(f"step {last['step']}: loss={last['loss']:.4f}")
    print(f"saved decoder to {args.out}")
    return 0


def _cmd_generate(args) -> int:
    cfg = load_config(args.config)
    model = ARModel.load(args.model)
    tokenizer = TokenizerModel.load(args.tokenizer)
    if model.config.vocab_size != tokenizer.config.codebook_size:
        raise ConfigError(f"decoder vocab {model.config.vocab_size} does not match "
                          f"tokenizer codebook {tokenizer.config.codebook_size}")
    sampling = _sampling_config(cfg, args)
    if args.count < 1:
        raise ConfigError(f"--count must be >= 1, got {args.count}")
    n_classes = model.config.num_classes
    if n_classes is not None and not 0 <= args.class_id < n_classes:
        raise ConfigError(f"--class-id must lie in [0, {n_classes}), got {args.class_id}")
    class_ids = np.full(args.count, args.class_id, dtype=np.int64)
    grids = batch_generate(model, class_ids, sampling)
    images = tokenizer.decode_tokens(np.stack([g.indices for g in grids]))
    out = _prepare_out(args.out, directory=True)
    ext = ".pgm" if images.shape[1] == 1 else ".ppm"
    for i in range(images.shape[0]):
        write_image(out / f"class{args.class_id}_{i:03d}{ext}", images[i])
    print(f"wrote {images.shape[0]} images to {out}")
    return 0


def _cmd_eval(args) -> int:
    cfg = load_config(args.config)
    tokenizer = TokenizerModel.load(args.tokenizer)
    n = args.count if args.count is not None else cfg["eval"]["n_images"]
    seed = args.seed if args.seed is not None else cfg["eval"]["seed"]
    data = _dataset(cfg["data"], n_images=n, seed=seed)
    report = eval_reconstruction(data, tokenizer, csv_path=_prepare_out(args.out))
    print(f"{report['count']} images: psnr={report['psnr']:.2f} "
          f"ssim={report['ssim']:.4f} usage={report['usage']:.3f}")
    return 0


def _cmd_bench(args) -> int:
    cfg = load_config(args.config)
    section = dict(cfg["bench"])
    if args.models is not None:
        section["models"] = [m.strip() for m in args.models.split(",") if m.strip()]
    for key in ("batch", "repeats", "seed", "cfg_scale"):
        val = getattr(args, key, None)
        if val is not None:
            section[key] = val
    results = run_benchmark(section["models"], batch=section["batch"], repeats=section["repeats"],
                            seed=section["seed"], cfg_scale=section["cfg_scale"],
                            csv_path=_prepare_out(args.out))
    for res in results:
        print(f"{res.model}: naive={res.naive_sec:.3f}s cached={res.cached_sec:.3f}s "
              f"speedup={res.speedup_ratio:.2f}x")
    print(f"wrote benchmark table to {args.out}")
    return 0


def _add_common(sub):
    sub.add_argument("config", nargs="?", default=None, help="JSON config path; defaults apply if omitted")
    sub.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rastergen",
                                     description="Train and run a raster-order image generator.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-data", help="write the synthetic image set as portable pixmaps")
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_gen_data)

    p = subs.add_parser("train-tokenizer", help="fit the image tokenizer")
    _add_common(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--metrics", default=None, help="per-step CSV path")
    p.set_defaults(func=_cmd_train_tokenizer)

    p = subs.add_parser("encode", help="tokenize the image set into a token file")
    _add_common(p)
    p.add_argument("--tokenizer", required=True, help="tokenizer checkpoint")
    p.add_argument("--out", required=True, help="token file path")
    p.add_argument("--crops", type=int, default=None, help="shifted crops per image")
    p.set_defaults(func=_cmd_encode)

    p = subs.add_parser("train-ar", help="fit the raster-order decoder on a token file")
    _add_common(p)
    p.add_argument("--tokens", required=True, help="token file from encode")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--metrics", default=None, help="per-step CSV path")
    p.set_defaults(func=_cmd_train_ar)

    p = subs.add_parser("generate", help="sample token grids and decode them to images")
    _add_common(p)
    p.add_argument("--model", required=True, help="decoder checkpoint")
    p.add_argument("--tokenizer", required=True, help="tokenizer checkpoint")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--class-id", type=int, required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--cfg-scale", dest="cfg_scale", type=float, default=None)
    p.add_argument("--top-k", dest="top_k", type=int, default=None)
    p.add_argument("--top-p", dest="top_p", type=float, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.set_defaults(func=_cmd_generate)

    p = subs.add_parser("eval", help="score tokenizer reconstructions on held-out images")
    _add_common(p)
    p.add_argument("--tokenizer", required=True, help="tokenizer checkpoint")
    p.add_argument("--out", required=True, help="per-image CSV path")
    p.add_argument("--count", type=int, default=None, help="held-out image count")
    p.set_defaults(func=_cmd_eval)

    p = subs.add_parser("bench", help="time cached decoding against full-prefix recompute")
    _add_common(p)
    p.add_argument("--out", required=True, help="benchmark CSV path")
    p.add_argument("--models", default=None, help="comma-separated preset names")
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--repeats", type=int, default=None)
    p.add_argument("--cfg-scale", dest="cfg_scale", type=float, default=None)
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormatError, ShapeError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
