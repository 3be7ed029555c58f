"""Scalar objectives with analytic gradients.

Conventions: probability and feature maps are ``(N, C, H, W)``, label maps
``(N, H, W)``. Discriminator scores close to 1 mean "target domain".
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import IGNORE_INDEX
from .errors import ConfigError

_TINY = 1e-12
NORM_GUARD = 1e-12


@dataclass
class LossWeights:
    seg: float = 1.0
    d: float = 1.0
    adv: float = 0.001
    isia: float = 0.001
    aim: float = 0.001
    beta: float = 1.0

    def validate(self):
        for name, value in vars(self).items():
            if not np.isfinite(value) or value < 0:
                raise ConfigError(f"loss.{name} must be a finite value >= 0, got {value!r}")
        return self


class LossOutput(NamedTuple):
    loss: float
    grad: np.ndarray
    empty: bool = False


def _as_batch(probs, labels):
    if probs.ndim == 3:
        probs = probs[None]
    if labels.ndim == 2:
        labels = labels[None]
    if probs.shape[0] != labels.shape[0] or probs.shape[2:] != labels.shape[1:]:
        raise ValueError(f"probability map {probs.shape} and labels {labels.shape} misaligned")
    return probs, labels


def seg_cross_entropy(probs, labels, ignore_index=IGNORE_INDEX) -> LossOutput:
    """Mean ``-log p[label]`` over non-ignored pixels; gradient is wrt the logits."""
    squeeze = probs.ndim == 3
    probs, labels = _as_batch(probs, labels)
    n_cls = probs.shape[1]
    valid = labels != ignore_index
    n_valid = int(valid.sum())
    grad = np.zeros_like(probs)
    if n_valid == 0:
        return LossOutput(0.0, grad[0] if squeeze else grad, True)
    if labels[valid].max() >= n_cls:
        raise ValueError("label id exceeds the number of classes")
    lab = np.where(valid, labels, 0).astype(np.intp)
    picked = np.take_along_axis(probs, lab[:, None], axis=1)[:, 0]
    loss = float(-np.log(np.maximum(picked[valid].astype(np.float64), _TINY)).sum() / n_valid)
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, lab[:, None], 1.0, axis=1)
    grad[:] = (probs - onehot) * (valid[:, None] / n_valid)
    return LossOutput(loss, grad[0] if squeeze else grad, False)


def _clip_scores(scores):
    return np.clip(np.asarray(scores, dtype=np.float64), _TINY, 1.0 - _TINY)


def adv_generator_loss(target_scores, label_convention="target_one") -> LossOutput:
    """Generator loss on target scores: mean ``-log(1 - D)`` (pushes target toward 0).

    With ``label_convention="source_one"`` the discriminator labels are flipped
    and the generator minimises mean ``-log D`` instead.
    """
    d = _clip_scores(target_scores)
    n = d.size
    if label_convention == "target_one":
        return LossOutput(float(-np.log1p(-d).sum() / n), 1.0 / ((1.0 - d) * n))
    if label_convention == "source_one":
        return LossOutput(float(-np.log(d).sum() / n), -1.0 / (d * n))
    raise ConfigError(f"unknown adversarial label convention {label_convention!r}")


class DiscriminatorLoss(NamedTuple):
    loss: float
    grad_target: np.ndarray
    grad_source: np.ndarray


def adv_discriminator_loss(target_scores, source_scores,
                           label_convention="target_one") -> DiscriminatorLoss:
    """mean ``-log D(target)`` + mean ``-log(1 - D(source))``."""
    dt, ds = _clip_scores(target_scores), _clip_scores(source_scores)
    nt, ns = dt.size, ds.size
    if label_convention == "source_one":
        loss = -np.log1p(-dt).sum() / nt - np.log(ds).sum() / ns
        return DiscriminatorLoss(float(loss), 1.0 / ((1.0 - dt) * nt), -1.0 / (ds * ns))
    if label_convention != "target_one":
        raise ConfigError(f"unknown adversarial label convention {label_convention!r}")
    loss = -np.log(dt).sum() / nt - np.log1p(-ds).sum() / ns
    return DiscriminatorLoss(float(loss), -1.0 / (dt * nt), 1.0 / ((1.0 - ds) * ns))


# ---------------------------------------------------------------- ISIA


@dataclass
class ClassSignature:
    """Row ``i`` of ``vectors`` is the mean probability vector over pixels of class ``i``."""
    vectors: np.ndarray
    present: np.ndarray
    counts: np.ndarray

    @property
    def num_classes(self):
        return self.vectors.shape[0]


def _assignment(labels, num_classes, ignore_index):
    flat = labels.reshape(-1)
    valid = (flat != ignore_index) & (flat < num_classes)
    counts = np.bincount(flat[valid], minlength=num_classes)[:num_classes]
    return flat, valid, counts


def extract_class_signatures(probs, mask, ignore_index=IGNORE_INDEX) -> ClassSignature:
    """Masked mean of the full probability vector for every class in ``mask``."""
    probs, mask = _as_batch(probs, mask)
    n_cls = probs.shape[1]
    flat, valid, counts = _assignment(mask, n_cls, ignore_index)
    p = probs.transpose(1, 0, 2, 3).reshape(n_cls, -1).astype(np.float64)
    vectors = np.zeros((n_cls, n_cls))
    for c in range(n_cls):
        vectors[:, c] = np.bincount(flat[valid], weights=p[c, valid], minlength=n_cls)[:n_cls]
    present = counts > 0
    vectors[present] /= counts[present, None]
    return ClassSignature(vectors, present, counts)


def signature_backward(grad_vectors, probs_shape, mask, ignore_index=IGNORE_INDEX, dtype=None):
    """dL/dprobs given dL/dsignature rows; the mask is treated as constant."""
    squeeze = len(probs_shape) == 3
    shape = tuple(probs_shape) if not squeeze else (1,) + tuple(probs_shape)
    mask = mask if mask.ndim == 3 else mask[None]
    n_cls = shape[1]
    flat, valid, counts = _assignment(mask, n_cls, ignore_index)
    scale = np.zeros((n_cls, n_cls))
    nz = counts > 0
    scale[nz] = grad_vectors[nz] / counts[nz, None]
    g = np.zeros((flat.size, n_cls))
    g[valid] = scale[flat[valid]]
    out = g.reshape(shape[0], shape[2], shape[3], n_cls).transpose(0, 3, 1, 2)
    out = out.astype(dtype or np.float64)
    return out[0] if squeeze else out


class CosineOutput(NamedTuple):
    value: float
    grad_a: np.ndarray
    grad_b: np.ndarray


def cosine_similarity_norm(a, b) -> CosineOutput:
    """Cosine similarity rescaled from [-1, 1] to [0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < NORM_GUARD or nb < NORM_GUARD:
        return CosineOutput(0.5, np.zeros_like(a), np.zeros_like(b))
    cos = float(a @ b) / (na * nb)
    ga = 0.5 * (b / (na * nb) - cos * a / (na * na))
    gb = 0.5 * (a / (na * nb) - cos * b / (nb * nb))
    return CosineOutput(0.5 + 0.5 * cos, ga, gb)


class IsiaOutput(NamedTuple):
    loss: float
    grad_source: np.ndarray
    grad_target: np.ndarray
    empty: bool = False


def isia_loss(sig_s: ClassSignature, sig_t: ClassSignature, beta=1.0) -> IsiaOutput:
    """L1 pull between same-class signatures plus ``beta`` times the cross-class similarity."""
    cs, ct = sig_s.vectors, sig_t.vectors
    gs, gt = np.zeros_like(cs), np.zeros_like(ct)
    both = sig_s.present & sig_t.present
    if not both.any():
        return IsiaOutput(0.0, gs, gt, True)
    diff = cs[both] - ct[both]
    loss = float(np.abs(diff).sum())
    sgn = np.sign(diff)
    gs[both] += sgn
    gt[both] -= sgn
    if beta:
        sep = 0.0
        for i in np.flatnonzero(sig_s.present):
            for k in np.flatnonzero(sig_t.present):
                if i == k:
                    continue
                value, ga, gb = cosine_similarity_norm(cs[i], ct[k])
                sep += value
                gs[i] += beta * ga
                gt[k] += beta * gb
        loss += beta * sep
    return IsiaOutput(loss, gs, gt, False)


# ---------------------------------------------------------------- totals

def total_loss_init(components: dict, w: LossWeights) -> float:
    """Weighted first-stage objective; ``components`` keys: seg_s, adv, isia, aim, d."""
    return (w.seg * components["seg_s"] + w.adv * components["adv"]
            + w.isia * components["isia"] + w.aim * components["aim"]
            + w.d * components["d"])


def total_loss_full(components: dict, w: LossWeights) -> float:
    """Second-stage objective: adds the target pseudo-label cross-entropy."""
    return (w.seg * (components["seg_s"] + components["seg_t"]) + w.adv * components["adv"]
            + w.isia * components["isia"] + w.aim * components["aim"]
            + w.d * components["d"])
