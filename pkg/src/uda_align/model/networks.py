"""Segmentation generator (shared encoder, two decoders) and output-space discriminator."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, UsageError
from .layers import (BilinearUpsample, Conv2d, LeakyReLU, Module, ReLU, Sequential,
                     sigmoid, softmax, softmax_backward)

DOMAINS = ("source", "target")


@dataclass
class ModelConfig:
    in_channels: int = 3
    encoder_depth: int = 4
    encoder_width: int = 16
    feat_dim: int = 64
    disc_channels: tuple = (64, 128, 256, 512, 1)
    disc_negative_slope: float = 0.2
    dtype: str = "float32"

    def validate(self):
        if self.encoder_depth < 1 or self.encoder_width < 1 or self.feat_dim < 1:
            raise ConfigError("model.encoder_depth, encoder_width and feat_dim must be >= 1")
        if len(self.disc_channels) < 1 or self.disc_channels[-1] != 1:
            raise ConfigError("model.disc_channels must end with a single output channel")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("model.dtype must be float32 or float64")


class _Stack(Module):
    """Named sub-modules with prefixed parameter names."""

    def __init__(self):
        super().__init__()
        self.children: dict[str, Module] = {}

    def named_parameters(self, prefix=""):
        for name, child in self.children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_gradients(self, prefix=""):
        for name, child in self.children.items():
            yield from child.named_gradients(f"{prefix}{name}.")

    def zero_grad(self):
        for child in self.children.values():
            child.zero_grad()

    def clear(self):
        self._cache = None
        for child in self.children.values():
            child.clear()

    def state_dict(self):
        return {name: value.copy() for name, value in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise ConfigError(f"state is missing parameters: {sorted(missing)}")
        for name, value in own.items():
            if state[name].shape != value.shape:
                raise ConfigError(f"shape mismatch for {name}: {state[name].shape} vs {value.shape}")
            value[...] = state[name]

    def gradients(self):
        return {name: g.copy() for name, g in self.named_gradients()}

    def param_hash(self):
        h = hashlib.sha256()
        for name, value in sorted(self.named_parameters()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(value).tobytes())
        return h.hexdigest()


def build_encoder(cfg: ModelConfig, rng, dtype):
    layers = []
    in_ch = cfg.in_channels
    for i in range(cfg.encoder_depth):
        out_ch = cfg.encoder_width * 2 ** min(i // 2, 3)
        stride = 2 if i in (1, 3) else 1
        layers += [Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, rng=rng, dtype=dtype), ReLU()]
        in_ch = out_ch
    return Sequential(*layers), in_ch


def encoder_stride(cfg: ModelConfig):
    return 2 ** sum(1 for i in range(cfg.encoder_depth) if i in (1, 3))


class Decoder(_Stack):
    """Feature head (upsampled to input resolution) followed by a 1x1 classifier."""

    def __init__(self, in_channels, feat_dim, num_classes, out_hw, rng, dtype):
        super().__init__()
        self.children["proj"] = Conv2d(in_channels, feat_dim, 3, padding=1, rng=rng, dtype=dtype)
        self.children["cls"] = Conv2d(feat_dim, num_classes, 1, rng=rng, dtype=dtype,
                                      weight_std=0.01)
        self.relu = ReLU()
        self.up = BilinearUpsample(out_hw)

    def forward(self, enc):
        feat = self.up.forward(self.relu.forward(self.children["proj"].forward(enc)))
        logits = self.children["cls"].forward(feat)
        self._cache = True
        return feat, logits

    def backward(self, grad_feat=None, grad_logits=None, param_grads=True):
        self._require_cache()
        total = None
        if grad_logits is not None:
            total = self.children["cls"].backward(grad_logits, param_grads=param_grads)
        if grad_feat is not None:
            total = grad_feat if total is None else total + grad_feat
        if total is None:
            raise UsageError("decoder backward needs at least one upstream gradient")
        g = self.relu.backward(self.up.backward(total))
        return self.children["proj"].backward(g, param_grads=param_grads)


class Generator(_Stack):
    """Shared encoder feeding a source decoder and a target decoder."""

    def __init__(self, cfg: ModelConfig, num_classes, height, width, seed=0):
        super().__init__()
        cfg.validate()
        stride = encoder_stride(cfg)
        if height % stride or width % stride:
            raise ConfigError(f"image size {height}x{width} must be divisible by {stride}")
        self.cfg = cfg
        self.num_classes = num_classes
        self.height, self.width = height, width
        self.dtype = np.dtype(cfg.dtype)
        rng = np.random.default_rng([seed, 11])
        self.children["encoder"], enc_ch = build_encoder(cfg, rng, self.dtype)
        for domain in DOMAINS:
            self.children[domain] = Decoder(enc_ch, cfg.feat_dim, num_classes,
                                             (height, width), rng, self.dtype)
        self.zero_grad()

    @property
    def encoder(self):
        return self.children["encoder"]

    def decoder(self, domain):
        if domain not in DOMAINS:
            raise ConfigError(f"domain must be one of {DOMAINS}, got {domain!r}")
        return self.children[domain]

    def _check_input(self, x):
        expected = (self.cfg.in_channels, self.height, self.width)
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise ConfigError(f"expected input (N, {expected[0]}, {expected[1]}, {expected[2]}), "
                              f"got {x.shape}")
        return x.astype(self.dtype, copy=False)

    def forward(self, x, domain):
        """Run one branch; returns ``(features, probabilities, logits)``."""
        x = self._check_input(x)
        enc = self.encoder.forward(x)
        feat, logits = self.decoder(domain).forward(enc)
        probs = softmax(logits)
        self._cache = (domain, probs)
        return feat, probs, logits

    def backward(self, grad_feat=None, grad_logits=None, grad_probs=None):
        """Backpropagate through the last ``forward``; returns parameter gradients."""
        domain, probs = self._require_cache()
        self.zero_grad()
        if grad_probs is not None:
            gl = softmax_backward(probs, grad_probs)
            grad_logits = gl if grad_logits is None else grad_logits + gl
        g_enc = self.decoder(domain).backward(grad_feat, grad_logits)
        self.encoder.backward(g_enc, input_grad=False)
        return self.gradients()

    def predict(self, x, domain="target", batch=16):
        """Softmax output of one branch, evaluated in chunks."""
        out = []
        for i in range(0, len(x), batch):
            _, probs, _ = self.forward(x[i:i + batch], domain)
            out.append(probs)
        self.clear()
        return np.concatenate(out, axis=0)


class Discriminator(_Stack):
    """Strided 4x4 conv stack with leaky rectifiers; outputs a per-patch target score."""

    def __init__(self, cfg: ModelConfig, num_classes, seed=0):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.dtype = np.dtype(cfg.dtype)
        rng = np.random.default_rng([seed, 23])
        layers = []
        in_ch = num_classes
        chans = list(cfg.disc_channels)
        for i, out_ch in enumerate(chans):
            last = i == len(chans) - 1
            layers.append(Conv2d(in_ch, out_ch, 4, stride=2, padding=1, rng=rng, dtype=self.dtype,
                                 negative_slope=cfg.disc_negative_slope,
                                 weight_std=0.02 if last else None))
            if not last:
                layers.append(LeakyReLU(cfg.disc_negative_slope))
            in_ch = out_ch
        self.children["net"] = Sequential(*layers)
        self.zero_grad()

    @property
    def final_layer(self):
        return self.children["net"].layers[-1]

    def output_shape(self, height, width):
        for layer in self.children["net"].layers:
            if isinstance(layer, Conv2d):
                height, width = layer.output_size(height), layer.output_size(width)
        return height, width

    def forward(self, probs):
        logits = self.children["net"].forward(probs.astype(self.dtype, copy=False))
        scores = sigmoid(logits.astype(np.float64))
        self._cache = scores
        return scores

    def backward(self, grad_scores, param_grads=True, input_grad=True):
        """Chain dL/dscores through the sigmoid and the conv stack."""
        scores = self._require_cache()
        g = (grad_scores * scores * (1.0 - scores)).astype(self.dtype)
        return self.children["net"].backward(g, param_grads=param_grads, input_grad=input_grad)
