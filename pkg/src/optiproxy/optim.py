"""Decoupled-weight-decay adaptive moment optimizer over named arrays."""

from __future__ import annotations

import numpy as np

try:  # fused single-pass update; numpy fallback below is equivalent
    from numba import njit

    @njit(cache=True)
    def _adamw_update(p, g, m, v, lr, beta1, beta2, eps, weight_decay,
                      bias1, bias2):
        decay = 1.0 - lr * weight_decay
        step_size = lr / bias1
        inv_bias2 = 1.0 / bias2
        for i in range(p.size):
            gi = g[i]
            mi = beta1 * m[i] + (1.0 - beta1) * gi
            vi = beta2 * v[i] + (1.0 - beta2) * gi * gi
            m[i] = mi
            v[i] = vi
            p[i] = p[i] * decay - step_size * mi / (np.sqrt(vi * inv_bias2) + eps)

except ImportError:  # pragma: no cover - exercised only without numba
    def _adamw_update(p, g, m, v, lr, beta1, beta2, eps, weight_decay,
                      bias1, bias2):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        p -= (lr / bias1) * m / (np.sqrt(v / bias2) + eps)


class AdamW:
    """Adam with decoupled weight decay, operating on a dict of arrays.

    Parameters are updated in place. ``step`` accepts a per-call learning
    rate so schedules stay outside the optimizer.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.01):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.exp_avg = {k: np.zeros_like(v) for k, v in params.items()}
        self.exp_avg_sq = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        bias1 = 1.0 - self.beta1**self.t
        bias2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            g = np.ascontiguousarray(g, dtype=np.float64)
            _adamw_update(
                p.reshape(-1), g.reshape(-1),
                self.exp_avg[name].reshape(-1),
                self.exp_avg_sq[name].reshape(-1),
                lr, self.beta1, self.beta2, self.eps, self.weight_decay,
                bias1, bias2,
            )
