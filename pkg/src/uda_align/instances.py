"""Connected-region instances, masked feature pooling and instance matching."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .losses import ClassSignature

_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}
DEGENERATE = 1e-12


def extract_instances(label, k, connectivity=4):
    """Maximal connected regions of class ``k``, ordered by their first pixel in raster order."""
    if connectivity not in _STRUCTURES:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    # ndimage.label numbers components in raster order of their first pixel
    comp, n = ndimage.label(np.asarray(label) == k, structure=_STRUCTURES[connectivity])
    return [comp == i for i in range(1, n + 1)]


def pool_instance_feature(mask, feat, eps=1e-5):
    """Masked mean of a ``(D, H, W)`` feature map; an empty mask pools to zeros."""
    mask = np.asarray(mask, dtype=bool)
    area = float(mask.sum())
    return feat[:, mask].sum(axis=1) / max(eps, area)


@dataclass
class AdaptationWeights:
    """Per-class adaptation complexity ``zeta`` and its re-normalised form ``eta``."""
    zeta: dict = field(default_factory=dict)
    eta: dict = field(default_factory=dict)
    updated_at: dict = field(default_factory=dict)

    def merge(self, other: "AdaptationWeights", step):
        for k in other.eta:
            self.zeta[k] = other.zeta[k]
            self.eta[k] = other.eta[k]
            self.updated_at[k] = step
        return self


def compute_adaptation_weights(sig_s: ClassSignature, sig_t: ClassSignature,
                               foreground_ids) -> AdaptationWeights:
    """Distance-ranked class weights over the foreground classes present in both domains."""
    ids = [k for k in foreground_ids if sig_s.present[k] and sig_t.present[k]]
    if not ids:
        return AdaptationWeights()
    d = {k: float(np.abs(sig_s.vectors[k] - sig_t.vectors[k]).sum()) for k in ids}
    spread = max(d.values()) - min(d.values())
    if spread < DEGENERATE:
        return AdaptationWeights({k: 1.0 for k in ids}, {k: 1.0 for k in ids})
    zeta = {k: d[k] / spread for k in ids}
    zeta_spread = max(abs(zeta[i] - zeta[j]) for i in ids for j in ids)
    if zeta_spread < DEGENERATE:
        return AdaptationWeights({k: 1.0 for k in ids}, {k: 1.0 for k in ids})
    return AdaptationWeights(zeta, {k: zeta[k] / zeta_spread for k in ids})


def rescale_eta(weights: AdaptationWeights) -> AdaptationWeights:
    """Scale ``eta`` to unit mean, keeping the ratios between classes.

    ``eta`` is ``d_k / (max d - min d)``, so two co-present classes at nearly equal
    distance give arbitrarily large weights. The ratios carry the ranking; only the
    overall scale blows up.
    """
    if not weights.eta:
        return weights
    mean = sum(weights.eta.values()) / len(weights.eta)
    eta = {k: v / mean for k, v in weights.eta.items()}
    return AdaptationWeights(dict(weights.zeta), eta, dict(weights.updated_at))


class FeatureBank:
    """Per-class FIFO queues of pooled source instance features."""

    def __init__(self, foreground_ids, capacity=10):
        self.capacity = int(capacity)
        self.queues = {int(k): deque(maxlen=self.capacity) for k in foreground_ids}

    def __len__(self):
        return sum(len(q) for q in self.queues.values())

    def push(self, k, vector):
        self.queues[int(k)].append(np.array(vector, copy=True))

    def entries(self, k):
        q = self.queues.get(int(k))
        if not q:
            return None
        return np.stack(list(q))

    def state(self):
        """Flat arrays for checkpointing."""
        out = {}
        for k, q in self.queues.items():
            if q:
                out[f"bank/{k}"] = np.stack(list(q))
        return out

    def load_state(self, arrays):
        for k in self.queues:
            self.queues[k].clear()
            key = f"bank/{k}"
            if key in arrays:
                for row in arrays[key]:
                    self.queues[k].append(np.array(row))


def update_bank(bank: FeatureBank, label, feat, connectivity=4, min_instance_px=4, eps=1e-5):
    """Pool every sufficiently large source instance and enqueue it under its class."""
    for k in bank.queues:
        for mask in extract_instances(label, k, connectivity):
            if mask.sum() >= min_instance_px:
                bank.push(k, pool_instance_feature(mask, feat, eps))
    return bank


class AimOutput(NamedTuple):
    loss: float
    grad: np.ndarray
    empty: bool
    matched: int


def aim_loss(label, feat, bank: FeatureBank, eta, connectivity=4, min_instance_px=4,
             eps=1e-5) -> AimOutput:
    """Weighted nearest-bank-entry L1 distance of each target instance feature.

    ``label`` is the target (predicted or pseudo) label map ``(H, W)``, ``feat``
    the target features ``(D, H, W)``; ``eta`` maps class id to its weight.
    The gradient is wrt ``feat`` and follows the selected (first minimal) entry.
    """
    grad = np.zeros_like(feat)
    loss = 0.0
    matched = 0
    for k in bank.queues:
        if k not in eta:
            continue
        entries = bank.entries(k)
        if entries is None:
            continue
        masks = [m for m in extract_instances(label, k, connectivity) if m.sum() >= min_instance_px]
        if not masks:
            continue
        weight = eta[k] / len(masks)
        class_loss = 0.0
        for mask in masks:
            area = max(eps, float(mask.sum()))
            v = feat[:, mask].sum(axis=1) / area
            dists = np.abs(v[None, :] - entries).sum(axis=1)
            j = int(np.argmin(dists))
            class_loss += float(dists[j])
            g = weight * np.sign(v - entries[j]) / area
            grad[:, mask] += g[:, None].astype(grad.dtype)
            matched += 1
        loss += weight * class_loss
    return AimOutput(float(loss), grad, matched == 0, matched)
