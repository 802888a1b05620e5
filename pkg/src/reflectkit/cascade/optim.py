from __future__ import annotations

import math

import numpy as np


def cosine_lr(t: float, total: float, lr0: float) -> float:
    """lr0 * (1 + cos(pi * t / total)) / 2."""
    if total <= 0 or not 0 <= t <= total:
        raise ValueError(f"need 0 <= t <= total, got t={t}, total={total}")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * t / total))


class Adam:
    """Adam with bias correction; moments kept per parameter name."""

    def __init__(self, betas=(0.9, 0.999), eps=1e-8):
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, lr: float, names=None):
        names = list(params.keys()) if names is None else list(names)
        missing = [n for n in names if params[n].grad is None]
        if missing:
            raise ValueError(f"missing gradient buffers: {', '.join(missing)}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for n in names:
            p = params[n]
            g = p.grad.astype(np.float32, copy=False)
            m = self.m.get(n)
            if m is None:
                m = self.m[n] = np.zeros_like(p.data)
                self.v[n] = np.zeros_like(p.data)
            v = self.v[n]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)


def adam_step(params, state: Adam, lr: float, names=None):
    state.step(params, lr, names)
