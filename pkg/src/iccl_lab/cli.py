"""``iccl`` command line: prepare, train, rebalance, eval, sweep, compare, config.

Every failure exits nonzero after printing one JSON line to stderr, e.g.
``{"error": "ConfigError", "message": "unknown key 'omega_q' in section [loss]"}``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as C
from . import evaluation as E
from . import plotting
from .data import SyntheticSpec, build_longtailed, load_cifar_dir, read_dataset, standardize_images, synthetic_longtailed, write_dataset
from .experiments import METHODS, SWEEP_AXES, final_report, run_methods, sweep
from .sampling import substream
from .train import (
    RunReport,
    load_checkpoint,
    load_datasets,
    run_experiment,
    save_checkpoint,
    stage1_from_checkpoint,
    stage2_rebalance,
    thread_limit,
)

log = logging.getLogger("iccl_lab")
PRESETS = {"default": C.ExperimentConfig, "desk": C.desk_preset, "cifar10": lambda: C.cifar_preset(10),
           "cifar100": lambda: C.cifar_preset(100)}


class CliError(RuntimeError):
    pass


def _load_config(args):
    cfg = C.load(args.config) if getattr(args, "config", None) else PRESETS[getattr(args, "preset", "desk")]()
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise C.ConfigError(f"--set expects section.key=value, got {item!r}")
        C.set_value(cfg, key.strip(), value)
    if getattr(args, "seed", None) is not None:
        cfg.schedule.seed = args.seed
    return cfg.validate()


def _out_dir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _parse_seeds(text):
    seeds = []
    for part in text.split(","):
        a, sep, b = part.partition("-")
        seeds.extend(range(int(a), int(b) + 1) if sep else [int(a)])
    return seeds


def _test_path(out):
    out = Path(out)
    return out.with_name(out.stem + "_test" + out.suffix)


def cmd_prepare(args):
    ratio = args.imbalance_ratio
    if args.input == "synthetic":
        cfg = _load_config(args)
        d = cfg.dataset
        spec = SyntheticSpec(d.num_classes, d.dim, d.n_max, ratio, d.test_per_class, d.mean_scale, d.noise,
                             d.modes_per_class, d.mode_spread)
        train, test = synthetic_longtailed(spec, int(substream(args.seed, "data").integers(2**32)))
    else:
        base = load_cifar_dir(args.input, "train", args.num_classes)
        train = build_longtailed(base, ratio, seed=int(substream(args.seed, "data").integers(2**32)))
        test = load_cifar_dir(args.input, "test", args.num_classes)
    write_dataset(args.out, train)
    write_dataset(_test_path(args.out), test)
    counts = train.class_counts
    print(f"classes={train.num_classes} total={len(train)} realized_imbalance_ratio={train.imbalance_ratio:g} "
          f"counts={','.join(map(str, counts))} test_total={len(test)}")
    print(f"wrote {args.out} and {_test_path(args.out)}")


def _write_stage_outputs(out, report, stage, norms_by_stage):
    rep = report.metrics.get(stage)
    report.write_csv(out / "report.csv")
    report.write_summary(out / "summary.json")
    if rep is not None:
        E.write_split_csv(rep, out / f"split_{stage}.csv")
        E.write_plot_data(out / f"plot_data_{stage}.csv", report.norms[stage], rep)
        plotting.plot_split_accuracy(out / "accuracy.png", dict(report.metrics))
        print(E.format_split_table(rep))
    plotting.plot_norms(out / "norms.png", norms_by_stage, rep.splits if rep is not None else None)
    plotting.plot_loss_curves(out / "loss.png", report)


def cmd_train(args):
    cfg = _load_config(args)
    out = _out_dir(args.out_dir)
    C.dump(cfg, out / "config.ini")
    train, test = load_datasets(cfg)
    write_dataset(out / "test.bin", test)
    res = run_experiment(cfg, train, test, rebalance=args.rebalance)
    s1 = res.stage1
    save_checkpoint(out / "stage1.ckpt", s1.model, s1.bank, s1.optimizer, s1.train_counts)
    stage = "stage1"
    if res.stage2 is not None:
        save_checkpoint(out / "stage2.ckpt", res.stage2.model, s1.bank, None, s1.train_counts, res.stage2.teacher)
        stage = "stage2"
    _write_stage_outputs(out, res.report, stage, dict(res.report.norms))
    print(f"config_hash={cfg.hash()} seed={cfg.schedule.seed} out_dir={out}")


def cmd_rebalance(args):
    cfg = _load_config(args)
    out = _out_dir(args.out_dir)
    C.dump(cfg, out / "config.ini")
    loaded = load_checkpoint(args.stage1)
    s1 = stage1_from_checkpoint(loaded, cfg)
    train, test = load_datasets(cfg)
    if s1.train_counts is not None and s1.train_counts.tolist() != train.class_counts.tolist():
        raise CliError(f"checkpoint was trained on counts {s1.train_counts.tolist()}, "
                       f"config yields {train.class_counts.tolist()}")
    report = RunReport(cfg.hash(), cfg.schedule.seed)
    with thread_limit():
        report.metrics["stage1"] = E.evaluate(s1.model, test, train.class_counts, cfg.eval.many_threshold, cfg.eval.few_threshold)
        report.norms["stage1"] = E.norm_report(s1.model.classifier.weight, s1.bank)
        s2 = stage2_rebalance(cfg, s1, train, test, report=report)
    save_checkpoint(out / "stage2.ckpt", s2.model, s1.bank, None, train.class_counts, s2.teacher)
    _write_stage_outputs(out, report, "stage2", dict(report.norms))
    print(f"config_hash={cfg.hash()} seed={cfg.schedule.seed} out_dir={out}")


def cmd_eval(args):
    loaded = load_checkpoint(args.checkpoint)
    cfg = _load_config(args) if args.config else C.ExperimentConfig()
    ds = read_dataset(args.dataset)
    if ds.x.dtype == np.uint8:
        ds.x = standardize_images(ds.x, cfg.dataset.norm_mean, cfg.dataset.norm_std)
    counts = loaded.train_counts
    if counts is None:
        raise CliError("checkpoint has no meta/train_counts; splits cannot be assigned")
    with thread_limit():
        rep = E.evaluate(loaded.model, ds, counts, cfg.eval.many_threshold, cfg.eval.few_threshold)
    print(E.format_split_table(rep))
    if args.out:
        E.write_split_csv(rep, args.out)
        if loaded.bank is not None:
            E.write_plot_data(Path(args.out).with_suffix(".plot.csv"), E.norm_report(loaded.model.classifier.weight, loaded.bank), rep)


def _emit_rows(rows, out, title):
    print(E.format_comparison(rows))
    if out:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        E.write_comparison_csv(rows, out)
        plotting.plot_comparison(out.with_suffix(".png"), rows)
        print(f"wrote {out}")


def cmd_sweep(args):
    cfg = _load_config(args)
    values = [v for chunk in args.values for v in chunk.split(",") if v]
    rows = sweep(cfg, args.axis, values, _parse_seeds(args.seeds), rebalance=not args.no_rebalance)
    _emit_rows(rows, args.out, args.axis)


def cmd_compare(args):
    cfg = _load_config(args)
    methods = [m for m in args.methods.split(",") if m]
    runs = run_methods(cfg, methods, _parse_seeds(args.seeds))
    _emit_rows(E.compare_runs(runs), args.out, "methods")


def cmd_config(args):
    cfg = _load_config(args)
    text = C.dumps(cfg)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _add_config_args(p, seed=True):
    p.add_argument("--config", help="config file (sectioned key = value)")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk", help="base config when --config is absent")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config field")
    if seed:
        p.add_argument("--seed", type=int, help="override schedule.seed")


def build_parser():
    ap = argparse.ArgumentParser(prog="iccl", description="Long-tailed classification with interpolative centroid contrastive learning.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="build a long-tailed dataset file")
    p.add_argument("--input", required=True, help="CIFAR binary directory, or 'synthetic'")
    p.add_argument("--imbalance-ratio", type=float, default=100.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-classes", type=int, default=10, help="CIFAR class count")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="synthetic mixture settings ([dataset] section)")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="stage 1 (and optionally stage 2) training")
    _add_config_args(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--rebalance", action="store_true", help="run stage 2 right after stage 1")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rebalance", help="stage 2 classifier rebalancing from a stage-1 checkpoint")
    _add_config_args(p)
    p.add_argument("--stage1", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_rebalance)

    p = sub.add_parser("eval", help="split accuracies of a checkpoint on a dataset file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", help="eval thresholds and image normalisation")
    p.add_argument("--out", help="write the split report CSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="one-axis sweep, comparison table")
    _add_config_args(p, seed=False)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, nargs="+", help="values (space or comma separated); 'all' for loss-ablation")
    p.add_argument("--seeds", default="0", help="e.g. 0-4 or 0,2")
    p.add_argument("--no-rebalance", action="store_true")
    p.add_argument("--out", help="comparison CSV path (a .png is written alongside)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="named methods across seeds")
    _add_config_args(p, seed=False)
    p.add_argument("--methods", default="ce,mixup,iccl", help=f"comma list from {', '.join(METHODS)}")
    p.add_argument("--seeds", default="0-4")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("config", help="print or write a config file")
    _add_config_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_config)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        with thread_limit():
            args.func(args)
    except Exception as exc:  # report every failure as one machine-readable line
        if args.verbose:
            log.exception("command failed")
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
