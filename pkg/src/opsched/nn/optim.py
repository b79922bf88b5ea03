from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


class Adam:
    """Bias-corrected Adam over a fixed, ordered parameter list."""

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 grad_clip: float | None = None):
        self.params = list(params)
        self.state = AdamState(lr, betas[0], betas[1], eps, 0,
                               [np.zeros_like(p.data) for p in self.params],
                               [np.zeros_like(p.data) for p in self.params])
        self.grad_clip = grad_clip

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        s = self.state
        s.step += 1
        grads = [p.grad for p in self.params]
        if self.grad_clip is not None:
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads))
            if norm > self.grad_clip:
                grads = [g * (self.grad_clip / norm) for g in grads]
        c1 = 1.0 - s.beta1 ** s.step
        c2 = 1.0 - s.beta2 ** s.step
        for p, g, m, v in zip(self.params, grads, s.m, s.v):
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * g * g
            p.data = p.data - s.lr * (m / c1) / (np.sqrt(v / c2) + s.eps)


def adam_step(params, state: AdamState) -> None:
    """Functional form: update ``params`` in place from their grads."""
    opt = Adam.__new__(Adam)
    opt.params = list(params)
    opt.grad_clip = None
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in opt.params]
        state.v = [np.zeros_like(p.data) for p in opt.params]
    opt.state = state
    opt.step()
