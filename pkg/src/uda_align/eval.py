"""Segmentation metrics, the normalized adaptability measure and report tables."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import IGNORE_INDEX
from .errors import ConfigError

COMPONENTS = ("IMA", "GFA", "ISIA", "AIM")
# Component pattern of the standard ablation rows.
ROW_COMPONENTS = {
    "source only": (),
    "target only": (),
    "+ima": ("IMA",),
    "+gfa": ("IMA", "GFA"),
    "+isia": ("IMA", "GFA", "ISIA"),
    "+aim": ("IMA", "GFA", "AIM"),
    "+all": COMPONENTS,
}
CHECK = "✓"


def confusion(pred, label, num_classes, ignore_index=IGNORE_INDEX):
    """``counts[truth, pred]`` over non-ignored pixels."""
    pred = np.asarray(pred).reshape(-1).astype(np.int64)
    label = np.asarray(label).reshape(-1).astype(np.int64)
    if pred.shape != label.shape:
        raise ValueError("prediction and label shapes differ")
    keep = (label != ignore_index) & (label < num_classes) & (label >= 0)
    idx = label[keep] * num_classes + pred[keep]
    return np.bincount(idx, minlength=num_classes ** 2).reshape(num_classes, num_classes)


class IoUResult(NamedTuple):
    iou: np.ndarray
    valid: np.ndarray


def iou_per_class(cm) -> IoUResult:
    """TP / (TP + FP + FN) per class; zero-union classes are NaN and flagged invalid."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    valid = union > 0
    iou = np.full(len(tp), np.nan)
    iou[valid] = tp[valid] / union[valid]
    return IoUResult(iou, valid)


def miou(iou, valid=None):
    iou = np.asarray(iou, dtype=np.float64)
    valid = ~np.isnan(iou) if valid is None else np.asarray(valid)
    if not valid.any():
        return float("nan")
    return float(iou[valid].mean())


def nam(source_only, adapted, target_only):
    """Share of the source-only to target-only gap closed by adaptation, in percent."""
    if target_only == source_only:
        raise ConfigError("NAM is undefined when target-only equals source-only")
    return (adapted - source_only) / (target_only - source_only) * 100.0


def evaluate_predictions(preds, labels, num_classes, ignore_index=IGNORE_INDEX):
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for p, y in zip(preds, labels):
        cm += confusion(p, y, num_classes, ignore_index)
    return cm


# ---------------------------------------------------------------- reports

@dataclass
class AblationRow:
    label: str
    miou: float
    components: tuple | None = None
    per_class: list | None = None
    std: float | None = None

    def resolved_components(self):
        if self.components is not None:
            return tuple(self.components)
        return ROW_COMPONENTS.get(self.label.strip().lower(), ())


def _fmt(value, precision):
    return "-" if value is None or (isinstance(value, float) and np.isnan(value)) \
        else f"{value:.{precision}f}"


def ablation_report(rows, class_names=None, per_class=False, precision=1):
    """Aligned plain-text table with component check marks, one row per entry in order."""
    rows = [r if isinstance(r, AblationRow) else AblationRow(*r) for r in rows]
    if not rows:
        raise ConfigError("ablation_report needs at least one row")
    header = ["Method", *COMPONENTS]
    n_cls = 0
    if per_class:
        n_cls = max(len(r.per_class or []) for r in rows)
        names = list(class_names or [f"c{i}" for i in range(n_cls)])
        header += names[:n_cls]
    header.append("mIoU(%)")
    table = [header]
    for r in rows:
        comps = r.resolved_components()
        line = [r.label, *[CHECK if c in comps else "" for c in COMPONENTS]]
        if per_class:
            pc = list(r.per_class or []) + [None] * n_cls
            line += [_fmt(v, precision) for v in pc[:n_cls]]
        line.append(_fmt(r.miou, precision))
        table.append(line)
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    out = []
    for j, row in enumerate(table):
        cells = [row[0].ljust(widths[0])] + [row[i].center(widths[i]) for i in range(1, len(row))]
        out.append(" | ".join(cells).rstrip())
        if j == 0:
            out.append("-+-".join("-" * w for w in widths))
    return "\n".join(out) + "\n"


def parse_ablation_report(text):
    """Inverse of :func:`ablation_report` for label, components, per-class values and mIoU."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = [c.strip() for c in lines[0].split("|")]
    rows = []
    for ln in lines[2:]:
        cells = [c.strip() for c in ln.split("|")]
        cells += [""] * (len(header) - len(cells))
        comps = tuple(c for c, cell in zip(COMPONENTS, cells[1:5]) if cell == CHECK)
        values = [None if c in ("-", "") else float(c) for c in cells[5:]]
        per_class = values[:-1] if len(header) > 6 else None
        rows.append(AblationRow(cells[0], values[-1], comps, per_class))
    return rows


@dataclass
class EvalReport:
    miou: float
    iou: list
    valid: list
    confusion: list
    num_pixels: int
    nam: float | None = None
    baselines: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def to_text(self, per_class=False, class_names=None):
        lines = [f"mIoU(%): {self.miou:.2f}"]
        if per_class:
            names = class_names or [f"c{i}" for i in range(len(self.iou))]
            for name, v, ok in zip(names, self.iou, self.valid):
                lines.append(f"IoU[{name}](%): {v:.2f}" if ok else f"IoU[{name}](%): excluded")
        if self.nam is not None:
            lines.append(f"NAM(%): {self.nam:.1f}")
            lines.append(f"baselines: SO={self.baselines['SO']:.2f} TO={self.baselines['TO']:.2f}")
        lines.append(f"pixels: {self.num_pixels}")
        return "\n".join(lines) + "\n"


def build_eval_report(cm, nam_baselines=None) -> EvalReport:
    """Rounded report: mIoU/IoU to 2 decimals (percent), NAM to 1 decimal."""
    res = iou_per_class(cm)
    m = round(miou(res.iou, res.valid) * 100.0, 2)
    iou = [round(float(v) * 100.0, 2) if ok else None for v, ok in zip(res.iou, res.valid)]
    report = EvalReport(m, iou, [bool(v) for v in res.valid], np.asarray(cm).tolist(),
                        int(np.asarray(cm).sum()))
    if nam_baselines is not None:
        so, to = nam_baselines
        report.nam = round(nam(so, m, to), 1)
        report.baselines = {"SO": so, "TO": to}
    return report


def parse_eval_text(text):
    """Values of an :meth:`EvalReport.to_text` block as a dict."""
    out = {}
    for ln in text.splitlines():
        key, _, value = ln.partition(":")
        value = value.strip()
        if key == "mIoU(%)":
            out["miou"] = float(value)
        elif key.startswith("IoU["):
            out.setdefault("iou", []).append(None if value == "excluded" else float(value))
        elif key == "NAM(%)":
            out["nam"] = float(value)
        elif key == "pixels":
            out["num_pixels"] = int(value)
    return out
