"""SGD with momentum, Adam and the polynomial learning-rate schedule."""
from __future__ import annotations

import numba
import numpy as np


def poly_lr(base_lr, step, total_steps, power=0.9):
    return base_lr * (1.0 - step / total_steps) ** power


class SGD:
    """Momentum SGD with L2 weight decay folded into the gradient."""

    def __init__(self, params: dict, lr, momentum=0.9, weight_decay=5e-4):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict):
        for name, w in self.params.items():
            g = grads[name]
            if self.weight_decay:
                g = g + self.weight_decay * w
            buf = self.buffers[name]
            buf *= self.momentum
            buf += g
            w -= float(self.lr) * buf

    def state(self, prefix="opt_g/"):
        return {prefix + k: v for k, v in self.buffers.items()}

    def load_state(self, arrays, prefix="opt_g/"):
        for k in self.buffers:
            self.buffers[k][...] = arrays[prefix + k]


@numba.njit(cache=True, fastmath=True, error_model="numpy")
def _adam_update(w, g, m, v, b1, b2, eps, wd, step_size):
    # scalars arrive in the array dtype so the loop vectorizes
    w, g, m, v = w.ravel(), g.ravel(), m.ravel(), v.ravel()
    c1, c2 = 1 - b1, 1 - b2
    for i in range(w.size):
        gi = g[i] + wd * w[i]
        m[i] = b1 * m[i] + c1 * gi
        v[i] = b2 * v[i] + c2 * gi * gi
        w[i] -= step_size * m[i] / (np.sqrt(v[i]) + eps)


class Adam:
    """Adam with L2 weight decay added to the gradient."""

    def __init__(self, params: dict, lr, betas=(0.9, 0.99), eps=1e-8, weight_decay=5e-4):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        root_c2 = np.sqrt(1.0 - b2 ** self.t)
        step_size = float(self.lr * root_c2 / (1.0 - b1 ** self.t))
        # eps scaled so the update equals m_hat / (sqrt(v_hat) + eps)
        eps = float(self.eps * root_c2)
        for name, w in self.params.items():
            t = w.dtype.type
            _adam_update(w, grads[name], self.m[name], self.v[name], t(b1), t(b2),
                         t(eps), t(self.weight_decay), t(step_size))

    def state(self, prefix="opt_d/"):
        out = {prefix + "m/" + k: v for k, v in self.m.items()}
        out.update({prefix + "v/" + k: v for k, v in self.v.items()})
        out[prefix + "t"] = np.array(self.t)
        return out

    def load_state(self, arrays, prefix="opt_d/"):
        for k in self.m:
            self.m[k][...] = arrays[prefix + "m/" + k]
            self.v[k][...] = arrays[prefix + "v/" + k]
        self.t = int(arrays[prefix + "t"])
