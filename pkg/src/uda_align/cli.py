"""Command line entry point: ``uda-align {gen-data,train,eval,ablate}``.

Exit codes: 0 success, 2 usage/config/data problems, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import SEED_ENV, config_from_dict, documented_keys, load_config, save_config
from .errors import ConfigError, DataError, NumericError, UsageError

log = logging.getLogger("uda_align")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


def _keys_epilog():
    lines = ["config keys (set in the YAML file or with --set key=value):"]
    for key, default in documented_keys():
        lines.append(f"  {key:<32} default: {default!r}")
    lines.append(f"\nenvironment: {SEED_ENV} overrides train.seed and data.seed")
    lines.append("exit codes: 0 ok, 2 usage/config/data error, 3 non-finite loss")
    return "\n".join(lines)


def _class_names(n):
    return ["bg"] + [f"c{i}" for i in range(1, n)]


def _write_report(out_dir, report, class_names, per_class):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text = report.to_text(per_class=per_class, class_names=class_names)
    (out_dir / "report.txt").write_text(text)
    (out_dir / "report.json").write_text(report.to_json())
    return text


def _eval_figures(out_dir, report, class_names):
    from .plotting import plot_confusion, plot_per_class_iou
    fig_dir = Path(out_dir) / "figures"
    plot_per_class_iou(report.iou, class_names, fig_dir / "per_class_iou.png")
    plot_confusion(report.confusion, class_names, fig_dir / "confusion.png")


# ---------------------------------------------------------------- commands

def cmd_gen_data(args):
    from .data import generate_pair_datasets, manifest_hash, write_pair_dataset
    cfg = load_config(args.config, args.set)
    out = Path(args.out or cfg.data_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"cannot write to {out}: {exc}")
    pair = generate_pair_datasets(cfg.data, cfg.n_source, cfg.n_target)
    write_pair_dataset(pair, out, cfg.data)
    print(f"wrote {len(pair.source)} source + {len(pair.target)} target samples to {out}")
    print(f"manifest sha256: {manifest_hash(out)}")
    return EXIT_OK


def _load_pair(data_dir):
    from .data import load_pair_dataset
    data_dir = Path(data_dir)
    if not (data_dir / "manifest.json").is_file():
        raise DataError(f"no dataset at {data_dir} (run `uda-align gen-data` first)")
    return load_pair_dataset(data_dir)


def _save_pseudo_labels(pseudo, out_dir):
    from .data import _save_label
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for sid, lab in pseudo.labels.items():
        _save_label(out_dir / f"{sid}.png", lab)
    (out_dir / "summary.json").write_text(json.dumps(
        {"coverage": pseudo.coverage, "per_sample": pseudo.per_sample}, indent=2, sort_keys=True))


def cmd_train(args):
    from .eval import build_eval_report
    from .plotting import plot_losses
    from .trainer import Trainer

    cfg = load_config(args.config, args.set)
    run_dir = Path(args.run_dir or cfg.run_dir)
    pair = _load_pair(args.data or cfg.data_dir)
    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, run_dir / "config.yaml")
    tr = Trainer(cfg, pair.source, pair.target)
    metrics = run_dir / "metrics.jsonl"
    if args.resume:
        header = tr.load(args.resume, force=args.force)
        log.info("resumed %s at iteration %d (stage %d)", args.resume, tr.iteration,
                 header["stage"])
    elif metrics.exists():
        metrics.unlink()
    tr.metrics_path = metrics

    try:
        if args.stage in ("1", "all"):
            tr.train_stage1()
            tr.save(ckpt_dir / "M_step1.npz")
            print(f"stage 1 done at iteration {tr.iteration}: {ckpt_dir / 'M_step1.npz'}")
        if args.stage in ("2", "all") and cfg.train.self_training:
            if args.stage == "2" and tr.stage_done < 1:
                raise UsageError("--stage 2 needs --resume with a stage-1 checkpoint")
            if tr.iteration < cfg.train.total_iters:
                pseudo = tr.pseudo_labels()
                _save_pseudo_labels(pseudo, run_dir / "pseudo_labels")
                print(f"pseudo-label coverage at tau={cfg.train.tau}: {pseudo.coverage:.4f}")
                tr.train_stage2(pseudo)
            tr.save(ckpt_dir / "M_step2.npz")
            print(f"stage 2 done at iteration {tr.iteration}: {ckpt_dir / 'M_step2.npz'}")
    except NumericError as exc:
        diag = run_dir / "diagnostic.json"
        diag.write_text(json.dumps({"error": str(exc), "component": exc.component,
                                    **exc.diagnostics}, indent=2, default=str))
        print(f"error: {exc}; diagnostics in {diag}", file=sys.stderr)
        return EXIT_NUMERIC

    if tr.metrics:
        plot_losses(tr.metrics, run_dir / "figures" / "losses.png")
    if pair.target_labels:
        report = build_eval_report(tr.evaluate(pair.target_eval()))
        names = _class_names(cfg.data.num_classes)
        print(_write_report(run_dir, report, names, per_class=True), end="")
        _eval_figures(run_dir, report, names)
    return EXIT_OK


def _parse_nam(value):
    try:
        so, to = (float(v) for v in value.split(","))
    except ValueError:
        raise UsageError(f"--nam expects SO,TO (two numbers), got {value!r}")
    return so, to


def cmd_eval(args):
    from .data import load_directory
    from .eval import build_eval_report
    from .model.checkpoint import load_checkpoint
    from .model.networks import Generator
    from .trainer import evaluate

    nam_baselines = _parse_nam(args.nam) if args.nam else None
    header, arrays = load_checkpoint(args.ckpt)
    cfg = config_from_dict(header["config"]) if "config" in header else load_config(args.config)
    data = Path(args.data)
    if (data / "manifest.json").is_file():
        samples = _load_pair(data).target_eval()
    else:
        samples = load_directory(data, labels_dir="labels", domain="target")
    if not samples:
        raise DataError(f"no labelled samples under {data}")
    h, w = samples[0].image.shape[:2]
    gen = Generator(cfg.model, cfg.data.num_classes, h, w, seed=cfg.train.seed)
    gen.load_state_dict({k[4:]: v for k, v in arrays.items() if k.startswith("gen/")})
    report = build_eval_report(evaluate(gen, samples), nam_baselines)
    out_dir = Path(args.out or Path(args.ckpt).resolve().parent.parent)
    names = _class_names(cfg.data.num_classes)
    print(_write_report(out_dir, report, names, args.per_class), end="")
    _eval_figures(out_dir, report, names)
    return EXIT_OK


def cmd_ablate(args):
    from .ablation import nam_from_rows, run_ablation, summarize
    from .eval import ablation_report
    from .plotting import plot_ablation

    cfg = load_config(args.config, args.set)
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = [r.strip() for r in args.rows.split(",")]
    results = run_ablation(cfg, rows, seeds)
    summary = summarize(results)
    table = ablation_report(summary, _class_names(cfg.data.num_classes), args.per_class)
    out = Path(args.out or cfg.run_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [table]
    score = nam_from_rows(summary)
    if score is not None:
        lines.append(f"NAM(%): {score:.1f}\n")
    text = "".join(lines)
    (out / "ablation.txt").write_text(text)
    (out / "ablation.json").write_text(json.dumps(
        {name: [{"seed": r.seed, "miou": r.miou, "iou": r.iou, "seconds": r.seconds}
                for r in runs] for name, runs in results.items()}, indent=2))
    plot_ablation(summary, out / "figures" / "ablation.png")
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(
        prog="uda-align", description="Two-stage domain-adaptive segmentation on a synthetic "
        "two-domain benchmark.", epilog=_keys_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")

    g = sub.add_parser("gen-data", help="generate and write the synthetic benchmark",
                       epilog=_keys_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    common(g)
    g.add_argument("--out", help="output directory (default: data_dir from config)")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="stage 1, pseudo-labelling and stage 2",
                       epilog=_keys_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    common(t)
    t.add_argument("--data", help="dataset directory (default: data_dir from config)")
    t.add_argument("--run-dir", help="output directory (default: run_dir from config)")
    t.add_argument("--stage", choices=("1", "2", "all"), default="all")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--force", action="store_true", help="resume despite a config-hash mismatch")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on labelled target images")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True,
                   help="dataset root (uses target_eval/) or a dir with images/ and labels/")
    e.add_argument("--config", help="config used when the checkpoint carries none")
    e.add_argument("--per-class", action="store_true")
    e.add_argument("--nam", metavar="SO,TO", help="source-only and target-only mIoU (%%)")
    e.add_argument("--out", help="report directory (default: the checkpoint's run dir)")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="seed-averaged ablation table",
                       epilog=_keys_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    common(a)
    a.add_argument("--rows", default="source only,+gfa,+all,target only",
                   help="comma-separated rows: source only, +ima, +gfa, +isia, +aim, +all, "
                        "target only")
    a.add_argument("--seeds", default="0,1,2")
    a.add_argument("--per-class", action="store_true")
    a.add_argument("--out", help="output directory (default: run_dir from config)")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
