"""Named pipeline variants, single runs and seed-averaged ablation sweeps."""
from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import Config
from .data import Sample, generate_pair_datasets
from .errors import ConfigError
from .eval import AblationRow, iou_per_class, miou, nam
from .trainer import Trainer

log = logging.getLogger(__name__)

FLAGS = ("ima", "gfa", "isia", "aim", "self_training")
# train flags switched on for each row; everything else is off
ROW_FLAGS = {
    "source only": (),
    "+ima": ("ima",),
    "+gfa": ("ima", "gfa"),
    "+isia": ("ima", "gfa", "isia"),
    "+aim": ("ima", "gfa", "aim"),
    "+all": FLAGS,
    "target only": (),
}
ALIASES = {"so": "source only", "to": "target only", "gfa": "+gfa", "full": "+all",
           "ima": "+ima", "isia": "+isia", "aim": "+aim", "all": "+all"}


def resolve_row(name):
    key = ALIASES.get(name.strip().lower(), name.strip().lower())
    if key not in ROW_FLAGS:
        raise ConfigError(f"unknown ablation row {name!r}; choose from {', '.join(ROW_FLAGS)}")
    return key


def row_config(cfg: Config, row, seed=None) -> Config:
    """Copy of ``cfg`` with the row's component flags (and optionally the seed) applied."""
    row = resolve_row(row)
    out = copy.deepcopy(cfg)
    for flag in FLAGS:
        setattr(out.train, flag, flag in ROW_FLAGS[row])
    if seed is not None:
        out.train.seed = seed
        out.data.seed = seed
    return out.validate()


@dataclass
class RunResult:
    row: str
    seed: int
    miou: float
    iou: list
    confusion: np.ndarray
    seconds: float
    coverage: float | None = None
    trainer: Trainer | None = field(default=None, repr=False)


def run_pipeline(cfg: Config, pair, row="+all", metrics_path=None, keep_trainer=False):
    """Train one row on ``pair`` and score the target branch on the held-out target labels."""
    row = resolve_row(row)
    t0 = time.perf_counter()
    source = pair.source
    if row == "target only":
        # oracle upper bound: supervised on the labelled target images
        source = [Sample(s.image, s.label, "target", s.id) for s in pair.target_eval()]
    tr = Trainer(cfg, source, pair.target)
    tr.metrics_path = metrics_path
    tr.train_stage1()
    coverage = None
    if cfg.train.self_training and cfg.train.total_iters > tr.iteration:
        pseudo = tr.pseudo_labels()
        coverage = pseudo.coverage
        tr.train_stage2(pseudo)
    cm = tr.evaluate(pair.target_eval())
    res = iou_per_class(cm)
    out = RunResult(row, cfg.train.seed, miou(res.iou, res.valid) * 100.0,
                    [float(v) * 100.0 for v in res.iou], cm, time.perf_counter() - t0, coverage,
                    tr if keep_trainer else None)
    log.info("%s seed=%d mIoU=%.2f (%.0fs)", row, out.seed, out.miou, out.seconds)
    return out


def run_ablation(cfg: Config, rows=("source only", "+gfa", "+all", "target only"),
                 seeds=(0, 1, 2), n_source=None, n_target=None):
    """Every row under every seed; data and model seeds move together."""
    rows = [resolve_row(r) for r in rows]
    results = {r: [] for r in rows}
    for seed in seeds:
        spec = copy.deepcopy(cfg.data)
        spec.seed = seed
        pair = generate_pair_datasets(spec, n_source or cfg.n_source, n_target or cfg.n_target)
        for r in rows:
            results[r].append(run_pipeline(row_config(cfg, r, seed), pair, r))
    return results


def summarize(results) -> list:
    """Seed-averaged :class:`AblationRow` per row, in insertion order."""
    rows = []
    for name, runs in results.items():
        per_class = np.nanmean(np.array([r.iou for r in runs], dtype=np.float64), axis=0)
        values = [r.miou for r in runs]
        rows.append(AblationRow(name, float(np.mean(values)), None,
                                [float(v) for v in per_class], float(np.std(values))))
    return rows


def nam_from_rows(rows, adapted="+all"):
    by = {r.label: r.miou for r in rows}
    if "source only" not in by or "target only" not in by or adapted not in by:
        return None
    return nam(by["source only"], by[adapted], by["target only"])
