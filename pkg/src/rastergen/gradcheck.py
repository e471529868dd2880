"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor


@dataclass
class GradCheckReport:
    max_rel_err: float
    per_input: list[float] = field(default_factory=list)
    tolerance: float = 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def finite_diff_check(fn, inputs: list[Tensor], tolerance: float = 1e-4, h: float = 1e-5) -> GradCheckReport:
    """Compare fn's backward against central differences, element by element.

    ``fn`` maps the given tensors to a scalar Tensor. Every element of every
    input is perturbed by +-h, so keep the inputs small. The relative error per
    input is ||analytic - numeric||_inf over max(||analytic||_inf,
    ||numeric||_inf, 1e-8).
    """
    for t in inputs:
        t.zero_grad()
    out = fn(*inputs)
    if out.data.size != 1:
        raise ValueError(f"gradcheck target must be scalar, got shape {out.data.shape}")
    out.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    per_input = []
    for t, a in zip(inputs, analytic):
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn(*inputs).item()
            flat[i] = orig - h
            fm = fn(*inputs).item()
            flat[i] = orig
            nflat[i] = (fp - fm) / (2.0 * h)
        denom = max(np.abs(a).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
        per_input.append(float(np.abs(a - numeric).max(initial=0.0) / denom))

    return GradCheckReport(max_rel_err=max(per_input), per_input=per_input, tolerance=tolerance)
