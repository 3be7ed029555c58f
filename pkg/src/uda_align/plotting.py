"""Figures written next to the text reports (PNG, headless Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}

LOSS_KEYS = ("L_seg_S", "L_seg_T", "L_adv", "L_D", "L_ISIA", "L_AIM", "total")


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_losses(rows, path):
    """One panel per logged loss component against iteration; stage 2 is shaded."""
    keys = [k for k in LOSS_KEYS if any(r.get(k) for r in rows)] or ["total"]
    it = np.array([r["iter"] for r in rows])
    stage2 = [r["iter"] for r in rows if r.get("stage") == 2]
    with plt.rc_context(RC):
        ncols = min(3, len(keys))
        nrows = -(-len(keys) // ncols)
        fig, axes = plt.subplots(nrows, ncols, figsize=(3.2 * ncols, 2.2 * nrows), squeeze=False)
        for ax, key in zip(axes.flat, keys):
            ax.plot(it, [float(r.get(key, 0.0)) for r in rows], lw=0.8, color="k")
            if stage2:
                ax.axvspan(min(stage2), max(stage2), color="0.9", zorder=0)
            ax.set_title(key)
            ax.set_xlabel("iteration")
        for ax in list(axes.flat)[len(keys):]:
            ax.set_visible(False)
        fig.tight_layout()
    return _save(fig, path)


def plot_per_class_iou(iou, class_names, path, title="per-class IoU"):
    """Bar per class; excluded classes (None/NaN) are left empty and marked."""
    vals = [np.nan if v is None else float(v) for v in iou]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(0.7 * len(vals) + 1.5, 2.6))
        x = np.arange(len(vals))
        ax.bar(x, np.nan_to_num(vals), color="0.35")
        for i, v in enumerate(vals):
            ax.text(i, (0 if np.isnan(v) else v) + 1, "n/a" if np.isnan(v) else f"{v:.1f}",
                    ha="center", va="bottom", fontsize=7)
        ax.set_xticks(x, class_names)
        ax.set_ylim(0, 105)
        ax.set_ylabel("IoU (%)")
        ax.set_title(title)
    return _save(fig, path)


def plot_confusion(cm, class_names, path):
    """Row-normalized confusion matrix (truth rows, prediction columns)."""
    cm = np.asarray(cm, dtype=np.float64)
    norm = cm / np.maximum(cm.sum(axis=1, keepdims=True), 1)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(0.6 * len(cm) + 1.8, 0.6 * len(cm) + 1.2))
        im = ax.imshow(norm, vmin=0, vmax=1, cmap="Greys")
        for i in range(len(cm)):
            for j in range(len(cm)):
                ax.text(j, i, f"{norm[i, j]:.2f}", ha="center", va="center", fontsize=7,
                        color="w" if norm[i, j] > 0.5 else "k")
        ax.set_xticks(range(len(cm)), class_names)
        ax.set_yticks(range(len(cm)), class_names)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        fig.colorbar(im, ax=ax, fraction=0.046)
    return _save(fig, path)


def plot_ablation(rows, path):
    """Horizontal bars of seed-averaged mIoU per ablation row, with std whiskers."""
    labels = [r.label for r in rows]
    vals = [r.miou for r in rows]
    err = [r.std or 0.0 for r in rows]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 0.35 * len(rows) + 1.0))
        y = np.arange(len(rows))[::-1]
        ax.barh(y, vals, xerr=err, color="0.45", capsize=2)
        ax.set_yticks(y, labels)
        ax.set_xlabel("target mIoU (%)")
        ax.set_xlim(0, 100)
    return _save(fig, path)
