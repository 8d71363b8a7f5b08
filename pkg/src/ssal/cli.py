"""Command-line interface: ``ssal <command> [--config FILE] [--set key=value ...]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 budget infeasible.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import load_config
from .errors import ConfigError, SSALError
from .experiment import (
    RunReport,
    load_dataset,
    make_split,
    plot,
    run_arm,
    run_seeds,
    run_table1,
    run_table2,
)
from .features import extract, read_features, write_features
from .imaging import synth_dataset, write_dataset
from .net import build, load_checkpoint, save_checkpoint, transfer_weights
from .select import SelectionResult, random_result, select_initial, select_random
from .seg import evaluate_per_sample, mean_dice, train_seg, write_eval_report
from .ssl import pretrain, write_loss_log

log = logging.getLogger("ssal")


def _seeds(text: str | None) -> list[int] | None:
    if not text:
        return None
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds must be a comma-separated list of integers, got {text!r}") from None


def _cfg(args):
    return load_config(args.config, args.set or [])


def cmd_synth(args):
    ds = synth_dataset(args.n, tuple(args.size), args.seed)
    manifest = write_dataset(ds, args.out)
    print(manifest)


def cmd_pretrain(args):
    cfg = _cfg(args)
    pool, _ = make_split(cfg, load_dataset(cfg))
    ssl_cfg = replace(cfg.ssl, seed=cfg.seeds.resolve("ssl"))
    model, history = pretrain(pool, replace(cfg.net, head="reconstruction"), ssl_cfg,
                              on_epoch=lambda e, v: print(f"epoch {e + 1} loss {v:.5f}"))
    out = Path(args.out)
    save_checkpoint(model, out / "ssl.bin", meta={"loss_history": history})
    write_loss_log(history, out / "loss.csv")
    print(out / "ssl.bin")


def cmd_extract(args):
    cfg = _cfg(args)
    pool, _ = make_split(cfg, load_dataset(cfg))
    fm = extract(load_checkpoint(args.checkpoint), pool, cfg.g, standardize=cfg.standardize_features)
    print(write_features(fm, args.out))


def cmd_select(args):
    fm = read_features(args.features)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.method == "random":
        result = random_result(select_random(fm.ids, args.budget, args.seed), 0)
    else:
        result, state = select_initial(fm, args.k, args.budget, args.seed, args.restarts)
        state.save(out.with_name(out.stem + "_state.json"))
    result.save(out)
    print(out)


def cmd_train(args):
    cfg = _cfg(args)
    pool, _ = make_split(cfg, load_dataset(cfg))
    labeled = pool.subset(SelectionResult.load(args.selection).ids, "labeled")
    seed = cfg.seeds.resolve("training")
    model = build(replace(cfg.net, head="segmentation"), seed, input_size=cfg.data.size)
    if args.warm_start:
        transfer_weights(load_checkpoint(args.warm_start), model, cfg.transfer_scope)
    epochs = args.epochs or cfg.seg.base_epochs
    model, history = train_seg(model, labeled, replace(cfg.seg, seed=seed), epochs)
    save_checkpoint(model, args.out, meta={"loss_history": history})
    print(args.out)


def cmd_eval(args):
    cfg = _cfg(args)
    _, test = make_split(cfg, load_dataset(cfg))
    per = evaluate_per_sample(load_checkpoint(args.checkpoint), test, cfg.seg.threshold)
    write_eval_report(per, args.out, cfg.seg.threshold)
    print(f"mean_dice {mean_dice(per):.4f} n={len(per)}")


def _print_report(name, rep: RunReport):
    print(name)
    for r in rep.records:
        print(f"  t={r['t']:<2d} labeled={r['labeled_count']:<5d} dice={r['mean_dice']:.4f}")


def cmd_al(args):
    cfg = _cfg(args)
    seeds = _seeds(args.seeds)
    if seeds:
        per_seed = run_seeds(lambda c, o, r: {c.arm: run_arm(c, o, r)}, cfg, args.out, seeds, not args.no_resume)
        for s, reps in per_seed.items():
            for name, rep in reps.items():
                _print_report(f"{name} seed={s}", rep)
        return
    _print_report(cfg.arm, run_arm(cfg, args.out, resume=not args.no_resume))


def _cmd_table(fn):
    def run(args):
        cfg = _cfg(args)
        seeds = _seeds(args.seeds)
        if seeds:
            run_seeds(fn, cfg, args.out, seeds, not args.no_resume)
            print(Path(args.out) / "summary.csv")
            return
        for name, rep in fn(cfg, args.out, not args.no_resume).items():
            _print_report(name, rep)
    return run


def cmd_plot(args):
    reports = {}
    for p in args.reports:
        p = Path(p)
        paths = sorted(p.rglob("report.json")) if p.is_dir() else [p]
        for rp in paths:
            rep = RunReport.load(rp)
            reports[str(rp.parent.relative_to(p)) if p.is_dir() else rep.arm] = rep
    img, table = plot(reports, args.out)
    print(img)
    print(table)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssal", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, config=True):
        p = sub.add_parser(name, help=help_)
        if config:
            p.add_argument("--config", help="TOML or JSON experiment config")
            p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        p.set_defaults(func=fn)
        return p

    p = add("synth", cmd_synth, "write a synthetic lesion dataset (PNG + manifest)", config=False)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--size", type=int, nargs=2, default=[64, 64], metavar=("H", "W"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("pretrain", cmd_pretrain, "self-supervised reconstruction pretraining on the pool")
    p.add_argument("--out", required=True, help="output directory (ssl.bin, loss.csv)")

    p = add("extract", cmd_extract, "extract pooled bottleneck features of the pool")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="feature store path")

    p = add("select", cmd_select, "select an initial annotation set from stored features", config=False)
    p.add_argument("--features", required=True)
    p.add_argument("--method", choices=("representative", "random"), default="representative")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--out", required=True, help="selection JSON path")

    p = add("train", cmd_train, "train a segmentation model on a selection")
    p.add_argument("--selection", required=True)
    p.add_argument("--warm-start", help="pretrained checkpoint to initialize from")
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", required=True, help="checkpoint path")

    p = add("eval", cmd_eval, "Dice evaluation on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="directory for eval.csv / eval.json")

    for name, fn, help_ in (
        ("al", cmd_al, "run one active-learning arm (resumable)"),
        ("table1", _cmd_table(run_table1), "random vs representative x cold vs warm"),
        ("table2", _cmd_table(run_table2), "cold-start grid over k and pooling grid"),
    ):
        p = add(name, fn, help_)
        p.add_argument("--out", required=True)
        p.add_argument("--seeds", help="comma-separated global seeds; reports mean and std")
        p.add_argument("--no-resume", action="store_true")

    p = add("plot", cmd_plot, "plot Dice against labeled count from saved reports", config=False)
    p.add_argument("reports", nargs="+", help="report.json files or directories containing them")
    p.add_argument("--out", required=True, help="image path (a CSV is written alongside)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        args.func(args)
    except SSALError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (json.JSONDecodeError, OSError) as exc:  # unreadable inputs count as data errors
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
