"""Adam and RMSProp updates, plus global-norm gradient clipping."""
from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from .tensor import Parameter


def clip_grad_norm(params: Iterable[Parameter], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most *max_norm*; returns the norm before clipping."""
    params = [p for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            p.grad = p.grad * scale
    return total


def adam_step(params: Iterable[Parameter], lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-7):
    for p in params:
        if p.grad is None:
            continue
        p.step += 1
        g = p.grad
        p.m = beta1 * p.m + (1 - beta1) * g
        p.v = beta2 * p.v + (1 - beta2) * g * g
        m_hat = p.m / (1 - beta1 ** p.step)
        v_hat = p.v / (1 - beta2 ** p.step)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)


def rmsprop_step(params: Iterable[Parameter], lr: float = 1e-3, rho: float = 0.9, eps: float = 1e-7):
    for p in params:
        if p.grad is None:
            continue
        p.step += 1
        g = p.grad
        p.v = rho * p.v + (1 - rho) * g * g
        p.data -= (lr * g / (np.sqrt(p.v) + eps)).astype(p.data.dtype)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-7):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps

    def step(self):
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps)


class RMSProp:
    def __init__(self, params, lr=1e-3, rho=0.9, eps=1e-7):
        self.params = list(params)
        self.lr, self.rho, self.eps = lr, rho, eps

    def step(self):
        rmsprop_step(self.params, self.lr, self.rho, self.eps)


OPTIMIZERS = {"adam": Adam, "rmsprop": RMSProp}
