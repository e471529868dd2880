"""Binary and text formats: checkpoints, token files, netpbm images, metric logs.

Byte-level layouts are frozen and documented in FORMATS.md. Everything is
little-endian; array payloads are C-order raw values. Round trips through any
writer/reader pair here are bit-exact.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

CHECKPOINT_MAGIC = b"RGCK"
TOKENS_MAGIC = b"ARTK"
CHECKPOINT_VERSION = 1
TOKENS_VERSION = 1

_DTYPE_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1, np.dtype(np.uint32): 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class _Cursor:
    """Sequential reader that turns short reads into format errors."""

    def __init__(self, blob: bytes, label: str):
        self.blob = blob
        self.pos = 0
        self.label = label

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.label}: truncated at byte {self.pos}, wanted {n} more")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def done(self):
        if self.pos != len(self.blob):
            raise FormatError(f"{self.label}: {len(self.blob) - self.pos} trailing bytes")


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, entries: dict[str, np.ndarray]):
    """Write named arrays. Entry order follows dict order and survives a round trip."""
    out = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(entries))]
    for name, arr in entries.items():
        arr = np.asarray(arr, order="C")  # ascontiguousarray would flatten rank-0 entries
        if arr.dtype not in _DTYPE_CODES:
            raise FormatError(f"checkpoint entry {name!r} has unsupported dtype {arr.dtype}")
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise FormatError(f"checkpoint entry name too long ({len(nb)} bytes)")
        out.append(struct.pack("<H", len(nb)))
        out.append(nb)
        out.append(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    Path(path).write_bytes(b"".join(out))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    cur = _Cursor(Path(path).read_bytes(), str(path))
    if cur.take(4) != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic, not a checkpoint")
    version, count = cur.unpack("II")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = cur.unpack("H")
        name = cur.take(nlen).decode("utf-8")
        code, rank = cur.unpack("BB")
        if code not in _CODE_DTYPES:
            raise FormatError(f"{path}: entry {name!r} has unknown dtype code {code}")
        shape = cur.unpack(f"{rank}I") if rank else ()
        dtype = _CODE_DTYPES[code]
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = cur.take(n * dtype.itemsize)
        entries[name] = np.frombuffer(raw, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(shape)
    cur.done()
    return entries


# ---------------------------------------------------------------------------
# token files


def save_tokens(path, tokens: np.ndarray, vocab_size: int):
    """Write a [images x crops x h x w] grid of code indices."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 4:
        raise FormatError(f"token array must be [images, crops, h, w], got shape {tokens.shape}")
    if not np.issubdtype(tokens.dtype, np.integer):
        raise FormatError(f"token array must be integer, got {tokens.dtype}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= vocab_size):
        raise FormatError(f"token ids must lie in [0, {vocab_size})")
    n, crops, h, w = tokens.shape
    head = TOKENS_MAGIC + struct.pack("<IIHHIH", TOKENS_VERSION, vocab_size, h, w, n, crops)
    Path(path).write_bytes(head + tokens.astype("<u4").tobytes())


def load_tokens(path) -> tuple[np.ndarray, int]:
    """Read a token file back as ([images, crops, h, w] uint32, vocab_size)."""
    cur = _Cursor(Path(path).read_bytes(), str(path))
    if cur.take(4) != TOKENS_MAGIC:
        raise FormatError(f"{path}: bad magic, not a token file")
    version, vocab, h, w, n, crops = cur.unpack("IIHHIH")
    if version != TOKENS_VERSION:
        raise FormatError(f"{path}: unsupported token file version {version}")
    raw = cur.take(n * crops * h * w * 4)
    cur.done()
    tokens = np.frombuffer(raw, dtype="<u4").astype(np.uint32).reshape(n, crops, h, w)
    if tokens.size and tokens.max() >= vocab:
        raise FormatError(f"{path}: token id {tokens.max()} outside vocab {vocab}")
    return tokens, vocab


def labels_path(tokens_file) -> Path:
    return Path(str(tokens_file) + ".labels.json")


def save_labels(tokens_file, labels, num_classes: int, extra: dict | None = None):
    doc = {"labels": [int(x) for x in labels], "num_classes": int(num_classes)}
    if extra:
        doc.update(extra)
    labels_path(tokens_file).write_text(json.dumps(doc))


def load_labels(tokens_file) -> tuple[np.ndarray, int]:
    p = labels_path(tokens_file)
    if not p.exists():
        raise FormatError(f"missing label sidecar {p}")
    doc = json.loads(p.read_text())
    return np.asarray(doc["labels"], dtype=np.int64), int(doc["num_classes"])


# ---------------------------------------------------------------------------
# netpbm images


def write_image(path, img: np.ndarray):
    """Write a [c,h,w] float image in [-1, 1] as binary P5 (c=1) or P6 (c=3)."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise FormatError(f"image must be [1|3, h, w], got shape {img.shape}")
    c, h, w = img.shape
    quant = np.clip(np.rint((img + 1.0) * 127.5), 0, 255).astype(np.uint8)
    magic = b"P5" if c == 1 else b"P6"
    header = magic + b"\n%d %d\n255\n" % (w, h)
    payload = quant[0] if c == 1 else quant.transpose(1, 2, 0)
    Path(path).write_bytes(header + payload.tobytes())


def read_image(path) -> np.ndarray:
    """Read binary P5/P6 back to [c,h,w] float64 in [-1, 1]."""
    blob = Path(path).read_bytes()
    if blob[:2] == b"P5":
        channels = 1
    elif blob[:2] == b"P6":
        channels = 3
    else:
        raise FormatError(f"{path}: not a binary P5/P6 file")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated header")
        fields.append(int(blob[start:pos]))
    pos += 1  # exactly one whitespace byte after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    need = w * h * channels
    raw = blob[pos : pos + need]
    if len(raw) != need:
        raise FormatError(f"{path}: payload has {len(raw)} bytes, expected {need}")
    flat = np.frombuffer(raw, dtype=np.uint8).astype(np.float64)
    if channels == 1:
        img = flat.reshape(1, h, w)
    else:
        img = flat.reshape(h, w, 3).transpose(2, 0, 1)
    return img / 127.5 - 1.0


# ---------------------------------------------------------------------------
# metric logs and run configs


class MetricsLogger:
    """Append-only CSV with a fixed header; rows flush immediately."""

    def __init__(self, path, fieldnames: list[str]):
        self.path = Path(path)
        self.fieldnames = list(fieldnames)
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.DictWriter(self._fh, fieldnames=self.fieldnames)
        self._writer.writeheader()
        self._fh.flush()

    def write(self, **row):
        self._writer.writerow(row)
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def load_json(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: {e}") from e
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: top level must be a JSON object")
    return doc


def save_json(path, doc: dict):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
