import numpy as np
import pytest

from uda_align.data import DatasetSpec, generate_pair_datasets
from uda_align.errors import ConfigError
from uda_align.style import STD_FLOOR, StyleStats, fit_target_statistics, style_samples, transfer


def test_constant_images_floor_std():
    stats = fit_target_statistics([np.full((4, 4, 3), 0.5)] * 3)
    assert np.allclose(stats.mean, 0.5)
    assert np.all(stats.std == STD_FLOOR)


def test_two_level_images():
    stats = fit_target_statistics([np.zeros((2, 2, 3)), np.ones((2, 2, 3))])
    assert np.allclose(stats.mean, 0.5) and np.allclose(stats.std, 0.5)


def test_matches_brute_force():
    rng = np.random.default_rng(0)
    images = [rng.random((5, 7, 3)) for _ in range(6)]
    stats = fit_target_statistics(images)
    for c in range(3):
        values = [img[i, j, c] for img in images for i in range(5) for j in range(7)]
        mean = sum(values) / len(values)
        var = sum((v - mean) ** 2 for v in values) / len(values)
        assert abs(stats.mean[c] - mean) < 1e-12
        assert abs(stats.std[c] - var ** 0.5) < 1e-12


def test_empty_input():
    with pytest.raises(ConfigError):
        fit_target_statistics([])


def test_identity_when_stats_equal():
    rng = np.random.default_rng(1)
    img = rng.uniform(-0.2, 1.2, size=(4, 4, 3))
    stats = StyleStats(np.array([0.3, 0.4, 0.5]), np.array([0.1, 0.2, 0.3]))
    assert np.allclose(transfer(img, stats, stats), np.clip(img, 0, 1))


def test_idempotent_once_stats_match():
    rng = np.random.default_rng(2)
    img = rng.random((6, 6, 3))
    s = fit_target_statistics([img])
    once = transfer(img, s, s)
    assert np.allclose(transfer(once, s, s), once)


def test_output_means_track_target():
    pair = generate_pair_datasets(DatasetSpec(seed=4), 60, 60)
    src = fit_target_statistics(s.image for s in pair.source)
    tgt = fit_target_statistics(s.image for s in pair.target)
    styled = style_samples(pair.source, src, tgt)
    means = np.stack([s.image for s in styled]).mean(axis=(0, 1, 2))
    assert np.abs(means - tgt.mean).max() <= 0.05
    assert all(a.label is b.label for a, b in zip(styled, pair.source))
    assert styled[0].image.shape == pair.source[0].image.shape


def test_zero_variance_source_channel():
    img = np.zeros((3, 3, 3))
    src = StyleStats(np.zeros(3), np.zeros(3))
    tgt = StyleStats(np.full(3, 0.5), np.full(3, 0.2))
    out = transfer(img, src, tgt)
    assert np.all(np.isfinite(out)) and np.allclose(out, 0.5)
