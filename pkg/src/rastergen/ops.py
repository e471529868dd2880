"""Differentiable kernels: activations, norms, attention pieces, convolutions.

Each op validates shapes eagerly, computes its forward with numpy, and wires an
analytic backward closure into the graph. Convolutions lower to im2col plus one
BLAS matmul; the transposed convolution is the exact adjoint of ``conv2d`` built
from the same machinery, so ``<conv2d(x, w), y> == <x, conv2d_transpose(y, w)>``
holds to rounding.
"""

from __future__ import annotations

import numpy as np

from .autograd import Tensor
from .errors import ShapeError
from .rng import CounterRng

# ---------------------------------------------------------------------------
# activations


def silu(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    y = x.data * s
    # d(x*sig)/dx = sig * (1 + x * (1 - sig))
    return Tensor._make(y, (x,), lambda g: (g * (s * (1.0 + x.data * (1.0 - s))),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    mask = x.data > 0
    scale = np.where(mask, 1.0, slope)
    return Tensor._make(x.data * scale, (x,), lambda g: (g * scale,))


# ---------------------------------------------------------------------------
# normalization


def rms_norm(x: Tensor, gain: Tensor, eps: float = 1e-6) -> Tensor:
    """Root-mean-square norm over the last axis, scaled by a learned gain."""
    if gain.data.ndim != 1 or gain.data.shape[0] != x.data.shape[-1]:
        raise ShapeError(f"rms_norm gain shape {gain.data.shape} vs x {x.data.shape}")
    n = x.data.shape[-1]
    r = 1.0 / np.sqrt((x.data * x.data).mean(axis=-1, keepdims=True) + eps)
    y = x.data * r * gain.data

    def back(g):
        # dL/dx_j = r*gain_j*g_j - (r^3/n) * x_j * sum_i(g_i*gain_i*x_i)
        inner = (g * gain.data * x.data).sum(axis=-1, keepdims=True)
        dx = r * gain.data * g - (r**3 / n) * x.data * inner
        dgain = (g * x.data * r).reshape(-1, n).sum(axis=0)
        return dx, dgain

    return Tensor._make(y, (x, gain), back)


def l2_normalize_rows(x: Tensor, eps: float = 1e-30) -> Tensor:
    """Scale each last-axis row to unit Euclidean norm.

    The floor guards all-zero rows only; every other row divides by its exact
    norm, so nearest-neighbor ties downstream stay exact ties.
    """
    norm = np.maximum(np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True)), eps)
    y = x.data / norm

    def back(g):
        # for y = x/|x|: dx = (g - y * <y, g>) / |x|
        inner = (y * g).sum(axis=-1, keepdims=True)
        return ((g - y * inner) / norm,)

    return Tensor._make(y, (x,), back)


# ---------------------------------------------------------------------------
# softmax family


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax. Entries equal to -inf come out as exactly 0.0."""
    m = np.max(x.data, axis=axis, keepdims=True)
    z = np.exp(x.data - m)
    p = z / z.sum(axis=axis, keepdims=True)

    def back(g):
        inner = (g * p).sum(axis=axis, keepdims=True)
        return (p * (g - inner),)

    return Tensor._make(p, (x,), back)


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer targets under row-wise softmax.

    ``logits`` is [rows x classes]; ``targets`` holds one class id per row.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"cross entropy expects 2D logits, got {logits.data.shape}")
    targets = np.asarray(targets)
    if not np.issubdtype(targets.dtype, np.integer):
        raise ShapeError(f"targets must be integers, got dtype {targets.dtype}")
    m, k = logits.data.shape
    if targets.shape != (m,):
        raise ShapeError(f"targets shape {targets.shape} vs logits rows {m}")
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise IndexError(f"target ids must lie in [0, {k})")

    mx = logits.data.max(axis=1, keepdims=True)
    z = logits.data - mx
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = -logp[np.arange(m), targets].mean()

    def back(g):
        soft = np.exp(logp)
        soft[np.arange(m), targets] -= 1.0
        return (soft * (float(g) / m),)

    return Tensor._make(np.asarray(loss), (logits,), back)


# ---------------------------------------------------------------------------
# gather / embedding


def embedding(table: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows of a [vocab x dim] table; duplicates accumulate grad additively."""
    indices = np.asarray(indices)
    if not np.issubdtype(indices.dtype, np.integer):
        raise ShapeError(f"embedding indices must be integers, got {indices.dtype}")
    v = table.data.shape[0]
    if indices.size and (indices.min() < 0 or indices.max() >= v):
        raise IndexError(f"embedding index out of range for table with {v} rows")
    out = table.data[indices]

    def back(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, indices.reshape(-1), g.reshape(-1, table.data.shape[1]))
        return (dt,)

    return Tensor._make(out, (table,), back)


# ---------------------------------------------------------------------------
# gated feed-forward


def swiglu(x: Tensor, w_gate: Tensor, w_up: Tensor, w_down: Tensor) -> Tensor:
    """silu(x @ w_gate) * (x @ w_up) projected back by w_down."""
    return (silu(x @ w_gate) * (x @ w_up)) @ w_down


# ---------------------------------------------------------------------------
# rotation for positional mixing


def apply_rope(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate feature pairs of the last axis by per-position angles.

    ``cos``/``sin`` are [positions x dim] tables already laid out to match the
    quarter-block convention: the dim axis is split in four equal blocks
    (a, b, c, d) and rotation pairs a with b, c with d.
    """
    d = x.data.shape[-1]
    if d % 4 != 0:
        raise ShapeError(f"rotation needs feature dim divisible by 4, got {d}")
    if cos.shape != x.data.shape[-2:] or sin.shape != x.data.shape[-2:]:
        raise ShapeError(f"angle tables {cos.shape} vs positions {x.data.shape[-2:]}")
    q = d // 4

    def rot(v):
        a, b, c, e = v[..., :q], v[..., q : 2 * q], v[..., 2 * q : 3 * q], v[..., 3 * q :]
        return np.concatenate([-b, a, -e, c], axis=-1)

    def rot_inv(v):
        a, b, c, e = v[..., :q], v[..., q : 2 * q], v[..., 2 * q : 3 * q], v[..., 3 * q :]
        return np.concatenate([b, -a, e, -c], axis=-1)

    y = x.data * cos + rot(x.data) * sin
    # adjoint of y = cos*x + sin*R(x) is cos*g + R^T(sin*g)
    return Tensor._make(y, (x,), lambda g: (g * cos + rot_inv(g * sin),))


# ---------------------------------------------------------------------------
# dropout


def dropout(x: Tensor, p: float, rng: CounterRng) -> Tensor:
    """Zero each entry with probability p and rescale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ShapeError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        return x
    keep = (rng.uniforms(x.data.size) >= p).reshape(x.data.shape)
    scale = keep / (1.0 - p)
    return Tensor._make(x.data * scale, (x,), lambda g: (g * scale,))


# ---------------------------------------------------------------------------
# straight-through

def straight_through(features: Tensor, quantized: Tensor) -> Tensor:
    """Forward the quantized values bitwise; route the gradient to the features.

    The quantized argument contributes no gradient path here; its training
    signal comes from the codebook loss term instead.
    """
    if features.data.shape != quantized.data.shape:
        raise ShapeError(
            f"straight-through shapes {features.data.shape} vs {quantized.data.shape}"
        )
    return Tensor._make(quantized.data.copy(), (features, quantized), lambda g: (g, None))


# ---------------------------------------------------------------------------
# convolutions


def _check_conv_args(x: Tensor, w: Tensor, stride: int, padding: int):
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv expects 4D input and kernel, got {x.data.shape} and {w.data.shape}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ShapeError(f"padding must be >= 0, got {padding}")


def _pad2d(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
    out[:, :, padding : padding + h, padding : padding + w] = x
    return out


def _im2col_mat(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """Patch matrix [n*oh*ow, c*kh*kw]: row (b, y, x), column (channel, i, j)."""
    n, c = xp.shape[:2]
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)


def _overlap_add(g: np.ndarray, w: np.ndarray, stride: int, hp: int, wp: int) -> np.ndarray:
    """Push [n,o,oh,ow] taps through an [o,c,kh,kw] kernel into [n,c,hp,wp].

    The overlap-add that ``conv2d``'s input gradient and ``conv2d_transpose``'s
    forward both need. At stride 1 the windows tile densely, so the whole sum
    collapses into one correlation GEMM against the tap-reversed kernel; at
    larger strides a dilated GEMM would be mostly zeros, so per-tap slabs are
    accumulated instead. Rows the taps cannot reach stay zero.
    """
    n, o, oh, ow = g.shape
    _, c, kh, kw = w.shape
    if stride == 1:
        gd = np.zeros((n, o, oh + 2 * (kh - 1), ow + 2 * (kw - 1)), dtype=g.dtype)
        gd[:, :, kh - 1 : kh - 1 + oh, kw - 1 : kw - 1 + ow] = g
        w_flip = w[:, :, ::-1, ::-1].transpose(0, 2, 3, 1).reshape(o * kh * kw, c)
        cols = _im2col_mat(gd, kh, kw, 1, hp, wp)
        return np.ascontiguousarray((cols @ w_flip).reshape(n, hp, wp, c).transpose(0, 3, 1, 2))

    g_mat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * oh * ow, o)
    taps = g_mat @ w.reshape(o, c * kh * kw)
    taps = np.ascontiguousarray(taps.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2))
    out = np.zeros((n, c, hp, wp), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += taps[:, :, i, j]
    return out


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate [n,c,h,w] input with an [out,c,kh,kw] kernel."""
    _check_conv_args(x, w, stride, padding)
    n, c, h, wid = x.data.shape
    o, cw, kh, kw = w.data.shape
    if cw != c:
        raise ShapeError(f"kernel expects {cw} input channels, input has {c}")
    hp, wp = h + 2 * padding, wid + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1

    xp = _pad2d(x.data, padding)
    # [n*oh*ow, c*kh*kw] @ [c*kh*kw, o]
    cols_mat = _im2col_mat(xp, kh, kw, stride, oh, ow)
    w_mat = w.data.reshape(o, c * kh * kw)
    y = (cols_mat @ w_mat.T).reshape(n, oh, ow, o).transpose(0, 3, 1, 2)

    def back(g):
        g_mat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * oh * ow, o)
        dw = (g_mat.T @ cols_mat).reshape(o, c, kh, kw)
        if not x.requires_grad:
            return None, dw
        dxp = _overlap_add(g, w.data, stride, hp, wp)
        dx = dxp[:, :, padding : padding + h, padding : padding + wid] if padding else dxp
        return np.ascontiguousarray(dx), dw

    return Tensor._make(np.ascontiguousarray(y), (x, w), back)


def conv2d_transpose(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Adjoint of ``conv2d``: upsample [n,o,h,w] through an [o,i,kh,kw] kernel."""
    _check_conv_args(x, w, stride, padding)
    n, o, hi, wi = x.data.shape
    ow_, i, kh, kw = w.data.shape
    if ow_ != o:
        raise ShapeError(f"kernel expects {ow_} input channels, input has {o}")
    ho = (hi - 1) * stride + kh - 2 * padding
    wo = (wi - 1) * stride + kw - 2 * padding
    if ho < 1 or wo < 1:
        raise ShapeError(f"output {ho}x{wo} collapsed; kernel/stride/padding inconsistent")
    hp, wp = ho + 2 * padding, wo + 2 * padding

    w_mat = w.data.reshape(o, i * kh * kw)
    yp = _overlap_add(x.data, w.data, stride, hp, wp)
    y = yp[:, :, padding : padding + ho, padding : padding + wo] if padding else yp

    def back(g):
        gp = _pad2d(g, padding)
        gcols_mat = _im2col_mat(gp, kh, kw, stride, hi, wi)
        x_mat = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(n * hi * wi, o)
        dw = (x_mat.T @ gcols_mat).reshape(o, i, kh, kw)
        if not x.requires_grad:
            return None, dw
        dx = (gcols_mat @ w_mat.T).reshape(n, hi, wi, o).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(dx), dw

    return Tensor._make(np.ascontiguousarray(y), (x, w), back)


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias to an [n,c,h,w] tensor."""
    if x.data.ndim != 4 or b.data.shape != (x.data.shape[1],):
        raise ShapeError(f"channel bias {b.data.shape} vs input {x.data.shape}")
    return Tensor._make(
        x.data + b.data[None, :, None, None],
        (x, b),
        lambda g: (g, g.sum(axis=(0, 2, 3))),
    )
