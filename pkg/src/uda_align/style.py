"""Image-level adaptation by per-channel mean/std matching."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Sample
from .errors import ConfigError

STD_FLOOR = 1e-6


@dataclass(frozen=True)
class StyleStats:
    mean: np.ndarray
    std: np.ndarray


def fit_target_statistics(images) -> StyleStats:
    """Per-channel mean and (population) std over every pixel of every image."""
    images = list(images)
    if not images:
        raise ConfigError("fit_target_statistics needs at least one image")
    n = 0
    total = None
    total_sq = None
    for img in images:
        flat = np.asarray(img, dtype=np.float64).reshape(-1, img.shape[-1])
        s, sq = flat.sum(axis=0), (flat * flat).sum(axis=0)
        total = s if total is None else total + s
        total_sq = sq if total_sq is None else total_sq + sq
        n += flat.shape[0]
    mean = total / n
    var = np.maximum(total_sq / n - mean * mean, 0.0)
    std = np.maximum(np.sqrt(var), STD_FLOOR)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std))):
        raise ConfigError("image statistics are not finite")
    return StyleStats(mean, std)


def transfer(image, source_stats: StyleStats, target_stats: StyleStats):
    """Re-standardise ``image`` from source to target statistics, clipped to [0, 1]."""
    src_std = np.maximum(source_stats.std, STD_FLOOR)
    out = (image - source_stats.mean) / src_std * target_stats.std + target_stats.mean
    return np.clip(out, 0.0, 1.0).astype(image.dtype, copy=False)


def style_samples(samples, source_stats: StyleStats, target_stats: StyleStats):
    """Styled copies of labeled samples; labels are shared, not copied."""
    out = []
    for s in samples:
        img = transfer(s.image, source_stats, target_stats)
        img.setflags(write=False)
        out.append(Sample(img, s.label, s.domain, s.id))
    return out
