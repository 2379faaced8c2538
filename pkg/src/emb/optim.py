"""Adam with bias correction, global-norm gradient clipping, and the
linearly decaying learning-rate scale used across training."""

from __future__ import annotations

import numpy as np

from .tensor import AutodiffError


class Adam:
    """Standard Adam; the effective step size is base_lr * lr_scale."""

    def __init__(self, params, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr_scale=1.0):
        if not 0.0 < lr_scale <= 1.0:
            raise AutodiffError(f"lr_scale {lr_scale} outside (0, 1]")
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1 ** t
        bias2 = 1.0 - self.beta2 ** t
        alpha = self.lr * lr_scale
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise AutodiffError(f"gradient shape {g.shape} != param {p.data.shape}")
            if not np.all(np.isfinite(g)):
                raise AutodiffError(f"non-finite gradient for {p.name or '<param>'}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            mhat = m / bias1
            vhat = v / bias2
            p.data -= (alpha * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)


def clip_global_norm(params, max_norm):
    """Rescale all gradients so their joint L2 norm is at most max_norm.

    Norm accumulation is in float64 for order-stable results; returns the
    pre-clip norm.
    """
    if max_norm <= 0:
        raise AutodiffError("max_norm must be positive")
    total = 0.0
    for p in params:
        if p.grad is None:
            continue
        g = p.grad.reshape(-1)
        total += float(np.dot(g, g))
    if not np.isfinite(total):
        raise AutodiffError("non-finite gradient norm")
    norm = float(np.sqrt(total))
    if norm > max_norm:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= p.grad.dtype.type(factor)
    return norm


def linear_lr_scale(epoch, total_epochs):
    """Linear decay from 1 at epoch 0 toward 1/total at the final epoch."""
    if total_epochs <= 0:
        return 1.0
    return max(1.0 - epoch / total_epochs, 1.0 / (2.0 * total_epochs))
