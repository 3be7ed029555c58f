"""Array layers with explicit forward/backward passes.

Every layer works on ``(N, C, H, W)`` arrays, keeps whatever it needs from
the most recent ``forward`` call and exposes ``backward`` which returns the
gradient with respect to its input while accumulating parameter gradients
into ``self.grads``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import UsageError


class Module:
    """Base layer: named parameters, accumulated gradients, one cached pass."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _require_cache(self):
        if self._cache is None:
            raise UsageError(f"{type(self).__name__}.backward called before forward")
        return self._cache

    def named_parameters(self, prefix=""):
        for name, value in self.params.items():
            yield prefix + name, value

    def named_gradients(self, prefix=""):
        for name in self.params:
            yield prefix + name, self.grads[name]

    def zero_grad(self):
        for name, value in self.params.items():
            g = self.grads.get(name)
            if g is None or g.shape != value.shape:
                self.grads[name] = np.zeros_like(value)
            else:
                g.fill(0)

    def clear(self):
        self._cache = None


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0,
                 rng=None, dtype=np.float32, weight_std=None, negative_slope=0.0):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        k = kernel_size
        fan_in = in_channels * k * k
        if weight_std is None:
            weight_std = np.sqrt(2.0 / ((1.0 + negative_slope ** 2) * fan_in))
        self.kernel_size = k
        self.stride = stride
        self.padding = padding
        self.params["weight"] = (rng.standard_normal((out_channels, in_channels, k, k))
                                 * weight_std).astype(dtype)
        self.params["bias"] = np.zeros(out_channels, dtype=dtype)
        self.zero_grad()

    def output_size(self, size):
        return (size + 2 * self.padding - self.kernel_size) // self.stride + 1

    def forward(self, x):
        w = self.params["weight"]
        out_ch, in_ch, k, _ = w.shape
        if x.ndim != 4 or x.shape[1] != in_ch:
            raise ValueError(f"expected (N, {in_ch}, H, W) input, got {x.shape}")
        p, s = self.padding, self.stride
        n = x.shape[0]
        if k == 1 and s == 1 and p == 0:
            # pointwise: no patch extraction needed
            cols_t = x.transpose(1, 0, 2, 3).reshape(in_ch, -1)
            ho, wo = x.shape[2:]
            xp_shape = x.shape
        else:
            xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
            win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
            ho, wo = win.shape[2:4]
            # (C, k, k, N, Ho, Wo) flattened to (C*k*k, N*Ho*Wo)
            cols_t = win.transpose(1, 4, 5, 0, 2, 3).reshape(in_ch * k * k, -1)
            xp_shape = xp.shape
        out = w.reshape(out_ch, -1) @ cols_t
        out += self.params["bias"][:, None]
        self._cache = (cols_t, xp_shape, n, ho, wo)
        return out.reshape(out_ch, n, ho, wo).transpose(1, 0, 2, 3)

    def backward(self, grad, param_grads=True, input_grad=True):
        cols_t, xp_shape, n, ho, wo = self._require_cache()
        w = self.params["weight"]
        out_ch, in_ch, k, _ = w.shape
        g2 = grad.transpose(1, 0, 2, 3).reshape(out_ch, -1)
        if param_grads:
            self.grads["weight"] += (g2 @ cols_t.T).reshape(w.shape)
            self.grads["bias"] += g2.sum(axis=1)
        if not input_grad:
            return None
        s, p = self.stride, self.padding
        gcols = w.reshape(out_ch, -1).T @ g2
        if k == 1 and s == 1 and p == 0:
            return gcols.reshape(in_ch, n, ho, wo).transpose(1, 0, 2, 3)
        gcols = gcols.reshape(in_ch, k, k, n, ho, wo)
        gxp = np.zeros((in_ch, n) + tuple(xp_shape[2:]), dtype=gcols.dtype)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += gcols[:, i, j]
        gx = gxp.transpose(1, 0, 2, 3)
        if p:
            gx = gx[:, :, p:-p, p:-p]
        return gx


class ReLU(Module):
    def forward(self, x):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, grad, **_):
        return grad * self._require_cache()


class LeakyReLU(Module):
    def __init__(self, negative_slope=0.2):
        super().__init__()
        self.negative_slope = negative_slope

    def forward(self, x):
        mask = x > 0
        self._cache = mask
        return np.where(mask, x, self.negative_slope * x)

    def backward(self, grad, **_):
        mask = self._require_cache()
        return np.where(mask, grad, self.negative_slope * grad)


def interpolation_matrix(size_in, size_out, dtype=np.float64):
    """Linear interpolation weights, half-pixel centres, edge clamped."""
    m = np.zeros((size_out, size_in), dtype=dtype)
    scale = size_in / size_out
    for o in range(size_out):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), size_in - 1)
        i1 = min(i0 + 1, size_in - 1)
        frac = src - i0
        m[o, i0] += 1.0 - frac
        m[o, i1] += frac
    return m


class BilinearUpsample(Module):
    """Resize the spatial axes to a fixed ``(H, W)`` by separable interpolation."""

    def __init__(self, out_hw):
        super().__init__()
        self.out_hw = tuple(out_hw)
        self._mats = {}

    def _matrices(self, h, w, dtype):
        key = (h, w, np.dtype(dtype).str)
        if key not in self._mats:
            self._mats[key] = (interpolation_matrix(h, self.out_hw[0], dtype),
                               interpolation_matrix(w, self.out_hw[1], dtype))
        return self._mats[key]

    def forward(self, x):
        mh, mw = self._matrices(x.shape[2], x.shape[3], x.dtype)
        self._cache = (mh, mw)
        return mh @ (x @ mw.T)

    def backward(self, grad, **_):
        mh, mw = self._require_cache()
        return (mh.T @ grad) @ mw


class Sequential(Module):
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)

    def named_parameters(self, prefix=""):
        for i, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"{prefix}{i}.")

    def named_gradients(self, prefix=""):
        for i, layer in enumerate(self.layers):
            yield from layer.named_gradients(f"{prefix}{i}.")

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def clear(self):
        for layer in self.layers:
            layer.clear()

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        self._cache = True
        return x

    def backward(self, grad, param_grads=True, input_grad=True):
        self._require_cache()
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            grad = self.layers[i].backward(
                grad, param_grads=param_grads, input_grad=input_grad or i > 0)
        return grad


def softmax(logits, axis=1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(probs, grad_probs, axis=1):
    """Gradient wrt logits given the softmax output and dL/dprobs."""
    return probs * (grad_probs - (probs * grad_probs).sum(axis=axis, keepdims=True))


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
