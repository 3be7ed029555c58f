import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uda_align import IGNORE_INDEX
from uda_align.errors import ConfigError
from uda_align.eval import (CHECK, AblationRow, ablation_report, build_eval_report, confusion,
                            iou_per_class, miou, nam, parse_ablation_report, parse_eval_text)


def test_confusion_examples():
    y = np.array([[0, 1], [2, 2]])
    assert np.array_equal(confusion(y, y, 3), np.diag([1, 1, 2]))
    assert not confusion(y, np.full((2, 2), IGNORE_INDEX), 3).any()


def test_confusion_matches_loop():
    rng = np.random.default_rng(0)
    pred, label = rng.integers(0, 4, (8, 8)), rng.integers(0, 4, (8, 8))
    label[0] = IGNORE_INDEX
    expect = np.zeros((4, 4), int)
    for p, t in zip(pred.ravel(), label.ravel()):
        if t != IGNORE_INDEX:
            expect[t, p] += 1
    cm = confusion(pred, label, 4)
    assert np.array_equal(cm, expect)
    assert cm.sum() == 56 and cm.sum(axis=1).sum() == 56


def test_iou_examples():
    cm = np.array([[8, 0], [2, 0]])
    res = iou_per_class(cm)
    assert res.iou[0] == pytest.approx(0.8)
    res = iou_per_class(np.array([[5, 0], [0, 0]]))
    assert res.valid.tolist() == [True, False] and np.isnan(res.iou[1])
    assert miou(res.iou, res.valid) == 1.0


def test_iou_formula_and_permutation():
    rng = np.random.default_rng(1)
    cm = rng.integers(0, 20, (5, 5))
    res = iou_per_class(cm)
    for k in range(5):
        tp, fp, fn = cm[k, k], cm[:, k].sum() - cm[k, k], cm[k].sum() - cm[k, k]
        assert res.iou[k] == pytest.approx(tp / (tp + fp + fn))
    assert np.all((res.iou >= 0) & (res.iou <= 1))
    perm = rng.permutation(5)
    assert miou(iou_per_class(cm[np.ix_(perm, perm)]).iou) == pytest.approx(miou(res.iou))


def test_nam_values():
    assert round(nam(46.8, 66.3, 78.4), 1) == 61.7
    assert nam(40, 40, 70) == 0 and nam(40, 70, 70) == 100
    with pytest.raises(ConfigError):
        nam(50, 60, 50)


@settings(max_examples=200, deadline=None)
@given(st.floats(-5, 5).filter(lambda a: abs(a) > 1e-3), st.floats(-100, 100))
def test_nam_affine_invariant(a, b):
    base = nam(46.8, 66.3, 78.4)
    assert nam(a * 46.8 + b, a * 66.3 + b, a * 78.4 + b) == pytest.approx(base, rel=1e-9)


def test_perfect_predictions_report_100():
    y = np.array([[0, 1], [1, 2]])
    rep = build_eval_report(confusion(y, y, 3))
    assert rep.miou == 100.0


def test_report_json_and_text_agree():
    cm = np.array([[30, 5, 0], [4, 20, 1], [0, 0, 0]])
    rep = build_eval_report(cm, nam_baselines=(46.8, 78.4))
    data = json.loads(rep.to_json())
    text = parse_eval_text(rep.to_text(per_class=True))
    assert text["miou"] == data["miou"] and text["iou"] == data["iou"]
    assert text["nam"] == data["nam"] and text["num_pixels"] == data["num_pixels"] == 60


def test_nam_through_report():
    # IoUs 0.5 and 4747/5747 average to 66.30 % after rounding
    cm = np.array([[1000, 1000], [0, 4747]])
    rep = build_eval_report(cm, (46.8, 78.4))
    assert rep.miou == 66.3 and rep.nam == 61.7


def test_ablation_single_row():
    text = ablation_report([("Source only", 40.0)])
    assert len(text.strip().splitlines()) == 3


def test_ablation_checkmarks():
    rows = parse_ablation_report(ablation_report(
        [AblationRow("Source only", 40.0), AblationRow("+IMA", 44.0), AblationRow("+all", 55.5)]))
    assert [r.label for r in rows] == ["Source only", "+IMA", "+all"]
    assert [r.components for r in rows] == [(), ("IMA",), ("IMA", "GFA", "ISIA", "AIM")]
    assert CHECK in ablation_report([("+all", 1.0)])


def test_ablation_round_trip_with_per_class():
    rows = [AblationRow("Source only", 61.2, per_class=[95.1, 60.0, 40.2, 49.5]),
            AblationRow("+gfa", 66.0, per_class=[96.0, 65.5, None, 50.0]),
            AblationRow("+all", 70.4, per_class=[96.3, 70.1, 55.0, 60.2]),
            AblationRow("Target only", 85.0, per_class=[98.0, 85.5, 77.7, 79.0])]
    back = parse_ablation_report(ablation_report(rows, ["bg", "a", "b", "c"], per_class=True))
    for a, b in zip(rows, back):
        assert (a.label, a.miou, list(a.per_class)) == (b.label, b.miou, b.per_class)
        assert a.resolved_components() == b.components


def test_ablation_needs_rows():
    with pytest.raises(ConfigError):
        ablation_report([])
