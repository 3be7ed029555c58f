import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from uda_align import IGNORE_INDEX
from uda_align.errors import ConfigError
from uda_align.losses import (ClassSignature, LossWeights, adv_discriminator_loss,
                              adv_generator_loss, cosine_similarity_norm,
                              extract_class_signatures, isia_loss, seg_cross_entropy,
                              total_loss_full, total_loss_init)

LN2 = math.log(2)


def _probs(rng, n_cls, h, w):
    z = rng.normal(size=(n_cls, h, w))
    e = np.exp(z - z.max(axis=0))
    return e / e.sum(axis=0)


def test_ce_examples():
    p = np.array([0.5, 0.5]).reshape(2, 1, 1)
    assert seg_cross_entropy(p, np.zeros((1, 1), int)).loss == pytest.approx(LN2, abs=1e-4)
    onehot = np.zeros((3, 2, 2))
    onehot[1] = 1
    assert seg_cross_entropy(onehot, np.ones((2, 2), int)).loss == 0


def test_ce_matches_double_loop():
    rng = np.random.default_rng(0)
    p = _probs(rng, 4, 6, 6)
    y = rng.integers(0, 4, size=(6, 6))
    y[0, :3] = IGNORE_INDEX
    total, n = 0.0, 0
    for i in range(6):
        for j in range(6):
            if y[i, j] == IGNORE_INDEX:
                continue
            for c in range(4):
                total -= (y[i, j] == c) * math.log(p[c, i, j])
            n += 1
    assert seg_cross_entropy(p, y).loss == pytest.approx(total / n, rel=1e-12)


def test_ce_all_ignored_flags_empty():
    out = seg_cross_entropy(np.full((2, 3, 3), 0.5), np.full((3, 3), IGNORE_INDEX))
    assert out.empty and out.loss == 0 and not out.grad.any()


def test_adversarial_examples():
    assert adv_generator_loss(np.full((1, 1, 2, 2), 0.5)).loss == pytest.approx(LN2)
    assert adv_generator_loss(np.full(4, 1e-15)).loss < 1e-9
    eps = 1e-9
    assert adv_discriminator_loss(np.full(4, 1 - eps), np.full(4, eps)).loss < 1e-7
    assert adv_discriminator_loss(np.full(3, 0.5), np.full(5, 0.5)).loss == pytest.approx(2 * LN2)


def test_adversarial_brute_force_means():
    rng = np.random.default_rng(1)
    t, s = rng.uniform(0.01, 0.99, (1, 1, 3, 3)), rng.uniform(0.01, 0.99, (1, 1, 3, 3))
    g = sum(-math.log(1 - v) for v in t.ravel()) / t.size
    d = sum(-math.log(v) for v in t.ravel()) / t.size + sum(-math.log(1 - v) for v in s.ravel()) / s.size
    assert adv_generator_loss(t).loss == pytest.approx(g, rel=1e-12)
    assert adv_discriminator_loss(t, s).loss == pytest.approx(d, rel=1e-12)
    flipped = sum(-math.log(v) for v in t.ravel()) / t.size
    assert adv_generator_loss(t, "source_one").loss == pytest.approx(flipped, rel=1e-12)
    with pytest.raises(ConfigError):
        adv_generator_loss(t, "sideways")


def test_signature_examples():
    p = np.zeros((3, 2, 2))
    p[:, 0, 0] = (0.1, 0.2, 0.7)
    mask = np.full((2, 2), IGNORE_INDEX)
    mask[0, 0] = 2
    sig = extract_class_signatures(p, mask)
    assert np.allclose(sig.vectors[2], (0.1, 0.2, 0.7))
    assert sig.present.tolist() == [False, False, True]
    uniform = extract_class_signatures(np.full((4, 3, 3), 0.25), np.arange(9).reshape(3, 3) % 4)
    assert np.allclose(uniform.vectors, 0.25)


def test_signature_matches_masked_mean_loop():
    rng = np.random.default_rng(2)
    p = _probs(rng, 3, 5, 5)
    mask = rng.integers(0, 3, size=(5, 5))
    sig = extract_class_signatures(p, mask)
    for c in range(3):
        pix = [(i, j) for i in range(5) for j in range(5) if mask[i, j] == c]
        expect = [sum(p[k, i, j] for i, j in pix) / len(pix) for k in range(3)]
        assert np.allclose(sig.vectors[c], expect, atol=1e-14)


def test_cosine_cases():
    a = np.array([0.2, 0.3, 0.5])
    assert cosine_similarity_norm(a, a).value == pytest.approx(1.0)
    assert cosine_similarity_norm([1, 0], [0, 1]).value == 0.5
    assert cosine_similarity_norm(a, -a).value == pytest.approx(0.0)
    assert cosine_similarity_norm(np.zeros(3), a).value == 0.5


vectors = arrays(np.float64, 4, elements=st.floats(-10, 10, allow_nan=False))


@settings(max_examples=200, deadline=None)
@given(vectors, vectors)
def test_cosine_bounded_and_symmetric(a, b):
    ab, ba = cosine_similarity_norm(a, b).value, cosine_similarity_norm(b, a).value
    assert 0.0 <= ab <= 1.0 + 1e-12
    assert ab == pytest.approx(ba, abs=1e-12)


def _sig(vectors, present=None):
    vectors = np.asarray(vectors, dtype=float)
    present = np.ones(len(vectors), bool) if present is None else np.asarray(present)
    return ClassSignature(vectors, present, present.astype(int))


def test_isia_orthogonal_example():
    s = _sig(np.eye(2))
    out = isia_loss(s, s, beta=1.0)
    assert out.loss == pytest.approx(1.0)


def test_isia_beta_zero_is_plain_l1():
    rng = np.random.default_rng(3)
    cs, ct = rng.random((4, 4)), rng.random((4, 4))
    assert isia_loss(_sig(cs), _sig(ct), beta=0).loss == pytest.approx(np.abs(cs - ct).sum())


def test_isia_no_copresent_class():
    out = isia_loss(_sig(np.eye(2), [True, False]), _sig(np.eye(2), [False, True]))
    assert out.empty and out.loss == 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_isia_l1_decreases_toward_source(seed):
    rng = np.random.default_rng(seed)
    cs, ct = rng.random((3, 3)), rng.random((3, 3))
    values = [isia_loss(_sig(cs), _sig(ct + a * (cs - ct)), beta=0).loss
              for a in np.linspace(0, 1, 6)]
    assert all(x > y for x, y in zip(values, values[1:]))
    assert values[-1] == pytest.approx(0, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_losses_nonnegative(seed):
    rng = np.random.default_rng(seed)
    p = _probs(rng, 3, 4, 4)
    y = rng.integers(0, 3, size=(4, 4))
    assert seg_cross_entropy(p, y).loss >= 0
    scores = rng.random((1, 1, 2, 2))
    assert adv_generator_loss(scores).loss >= 0
    assert adv_discriminator_loss(scores, rng.random(4)).loss >= 0
    assert isia_loss(_sig(rng.random((3, 3))), _sig(rng.random((3, 3)))).loss >= 0


def test_totals():
    rng = np.random.default_rng(4)
    comps = dict(zip(("seg_s", "seg_t", "adv", "isia", "aim", "d"), rng.random(6)))
    zero = LossWeights(0, 0, 0, 0, 0, 0)
    assert total_loss_init(comps, zero) == 0 and total_loss_full(comps, zero) == 0
    assert total_loss_init(comps, LossWeights(1, 0, 0, 0, 0)) == comps["seg_s"]
    w = LossWeights()
    hand = (comps["seg_s"] + comps["d"] + 0.001 * (comps["adv"] + comps["isia"] + comps["aim"]))
    assert total_loss_init(comps, w) == pytest.approx(hand, rel=1e-14)
    diff = total_loss_full(comps, w) - total_loss_init(comps, w)
    assert diff == pytest.approx(w.seg * comps["seg_t"], rel=1e-12)


def test_negative_weight_rejected():
    with pytest.raises(ConfigError, match="loss.adv"):
        LossWeights(adv=-1).validate()
