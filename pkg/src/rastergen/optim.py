"""AdamW with decoupled weight decay and global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor
from .errors import ShapeError


@dataclass
class OptimizerState:
    """Hyperparameters plus per-parameter moment buffers.

    Moments are allocated lazily on the first step so the state can be built
    before the parameter list is final.
    """

    lr: float
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.05
    eps: float = 1e-8
    grad_clip: float | None = None
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def global_grad_norm(grads: list[np.ndarray]) -> float:
    total = 0.0
    for g in grads:
        total += float((g * g).sum())
    return float(np.sqrt(total))


def adamw_step(params: list[Tensor], grads: list[np.ndarray | None], state: OptimizerState) -> float:
    """One in-place update. Returns the pre-clip global gradient norm.

    Decay is decoupled: it shrinks the parameter directly and is applied even
    where the gradient is zero. With lr == 0 parameters are left untouched
    bit for bit while the moment buffers still advance.
    """
    if len(grads) != len(params):
        raise ShapeError(f"{len(grads)} gradients for {len(params)} parameters")
    dense = []
    for p, g in zip(params, grads):
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} vs parameter {p.data.shape}")
        dense.append(g)

    norm = global_grad_norm(dense)
    if state.grad_clip is not None and norm > state.grad_clip:
        scale = state.grad_clip / norm
        dense = [g * scale for g in dense]

    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    elif len(state.m) != len(params):
        raise ShapeError(f"optimizer state tracks {len(state.m)} parameters, got {len(params)}")

    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, dense, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        if state.lr != 0.0:
            update = (m / bc1) / (np.sqrt(v / bc2) + state.eps) + state.weight_decay * p.data
            p.data -= state.lr * update
    return norm


class AdamW:
    """Convenience wrapper binding a parameter list to an OptimizerState."""

    def __init__(self, params: list[Tensor], lr: float, beta1: float = 0.9, beta2: float = 0.95,
                 weight_decay: float = 0.05, eps: float = 1e-8, grad_clip: float | None = None):
        self.params = list(params)
        self.state = OptimizerState(lr=lr, beta1=beta1, beta2=beta2, weight_decay=weight_decay,
                                    eps=eps, grad_clip=grad_clip)

    def step(self) -> float:
        return adamw_step(self.params, [p.grad for p in self.params], self.state)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
