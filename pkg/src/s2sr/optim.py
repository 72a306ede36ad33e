"""Adam optimizer with bias correction.

The functional :func:`adam_step` owns the update rule; the
:class:`Adam` wrapper binds it to a named parameter dict for the
training loop.  Parameter order is the sorted name order everywhere, so
updates are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import AutodiffError


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(
    params: dict,
    grads: dict,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One Adam update, in place on the arrays in `params`.

    `params` and `grads` map names to ndarrays; missing grads are
    treated as zero (state still advances for those entries).
    """
    state.step += 1
    t = state.step
    for name in sorted(params):
        p = params[name]
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p)
            state.m[name] = m
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)


class Adam:
    """Binds adam_step to a dict of name -> parameter Tensor."""

    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        for name, p in params.items():
            if not isinstance(p, Tensor) or not p.requires_grad:
                raise AutodiffError(f"parameter {name} must require gradients")
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        arrays = {name: p.data for name, p in self.params.items()}
        grads = {
            name: p.grad for name, p in self.params.items() if p.grad is not None
        }
        adam_step(
            arrays, grads, self.state, self.lr, self.beta1, self.beta2, self.eps
        )
