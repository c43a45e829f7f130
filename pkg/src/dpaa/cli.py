"""``dpaa`` command-line entry point.

Every subcommand accepts ``--config FILE`` (see :mod:`dpaa.config` for the
format); explicit flags override the matching config keys.  Failures exit
nonzero after printing a single line such as::

    error kind=io message="missing interaction file: data/train.tsv"
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import experiments
from .config import load_config
from .errors import ConfigError, DPAAError

EXIT_DPAA = 2
EXIT_IO = 3

# flag dest -> config key
_FLAG_KEYS = {
    "train": "data.train", "valid": "data.valid", "test": "data.test",
    "candidates": "data.candidates", "data_dir": "data.dir", "coat_dir": "data.coat_dir",
    "num_users": "data.num_users", "num_items": "data.num_items",
    "dim": "model.dim", "layers": "model.layers", "mode": "model.mode",
    "C": "plan.C", "eta": "plan.eta", "delta": "plan.delta", "gamma": "plan.gamma",
    "learning_rate": "train.learning_rate", "batch_size": "train.batch_size",
    "max_epochs": "train.max_epochs", "patience": "train.patience", "reg": "train.reg",
    "k": "train.eval_k", "seed": "train.seed", "seeds": "train.seeds",
    "cache": "cache.path", "out": "output.dir", "workers": "output.workers",
    "pool": "data.pool", "severities": "sweep.severities",
    "sample_fraction": "sweep.sample_fraction", "split_seed": "sweep.split_seed",
    "synthetic_users": "sweep.synthetic_users", "synthetic_items": "sweep.synthetic_items",
    "C_grid": "grid.C", "eta_grid": "grid.eta", "delta_grid": "grid.delta",
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI-style experiment config")
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _data(p):
    g = p.add_argument_group("data")
    g.add_argument("--train")
    g.add_argument("--valid")
    g.add_argument("--test")
    g.add_argument("--candidates", help="file with one candidate item id per line")
    g.add_argument("--data-dir", help="directory holding train/valid/test.tsv")
    g.add_argument("--coat-dir", help="directory holding Coat train.ascii/test.ascii")
    g.add_argument("--num-users", type=int)
    g.add_argument("--num-items", type=int)


def _model(p):
    g = p.add_argument_group("model")
    g.add_argument("--dim", type=int)
    g.add_argument("--layers", type=int)
    g.add_argument("--mode", choices=["dpaa", "lightgcn"])
    g.add_argument("--C", type=float)
    g.add_argument("--eta", type=float)
    g.add_argument("--delta", type=float)
    g.add_argument("--gamma", type=int, choices=[0, 1])
    g.add_argument("--cache", help="IIW cache file (default: <out>/iiw.cache)")


def _training(p):
    g = p.add_argument_group("training")
    g.add_argument("--lr", "--learning-rate", dest="learning_rate", type=float)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--max-epochs", type=int)
    g.add_argument("--patience", type=int)
    g.add_argument("--reg", type=float)
    g.add_argument("--k", type=int, help="cutoff for validation and reports (default 20)")
    g.add_argument("--seed", type=int)
    g.add_argument("--seeds", type=int, help="number of seeds to average (default 1)")
    g.add_argument("--workers", type=int, help="parallel worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpaa", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train the LightGCN baseline and write the IIW cache")
    for f in (_common, _data, _model, _training):
        f(p)

    p = sub.add_parser("train", help="train a model, evaluate on test, write a report")
    for f in (_common, _data, _model, _training):
        f(p)

    p = sub.add_parser("evaluate", help="evaluate a saved checkpoint on the test split")
    for f in (_common, _data, _model, _training):
        f(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("generate", help="draw skewed training data from an unbiased pool")
    _common(p)
    p.add_argument("--pool", required=True)
    p.add_argument("--severity", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=int, help="interactions per user")
    p.add_argument("--sample-fraction", type=float)
    p.add_argument("--num-users", type=int)
    p.add_argument("--num-items", type=int)

    p = sub.add_parser("sweep-severity", help="DPAA vs LightGCN across severity levels")
    for f in (_common, _model, _training):
        f(p)
    p.add_argument("--pool", help="unbiased pool TSV (default: built-in synthetic pool)")
    p.add_argument("--severities", help="comma-separated, e.g. 0,3,6,9")
    p.add_argument("--sample-fraction", type=float)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--synthetic-users", type=int)
    p.add_argument("--synthetic-items", type=int)
    p.add_argument("--num-users", type=int)
    p.add_argument("--num-items", type=int)

    p = sub.add_parser("grid", help="exhaustive (C, eta, delta) search on validation")
    for f in (_common, _data, _model, _training):
        f(p)
    p.add_argument("--C-grid", help="comma-separated C values")
    p.add_argument("--eta-grid", help="comma-separated eta values")
    p.add_argument("--delta-grid", help="comma-separated delta values")

    p = sub.add_parser("report", help="collect run directories into one markdown file")
    p.add_argument("runs", nargs="+", help="run directories")
    p.add_argument("--out", help="markdown output path")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def resolve_config(args: argparse.Namespace):
    cfg = load_config(getattr(args, "config", None))
    overrides = {}
    for item in getattr(args, "set", []):
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    for dest, key in _FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[key] = value
    cfg.update(overrides)
    return cfg


def run(args: argparse.Namespace):
    if args.command == "report":
        return experiments.cmd_report(args.runs, args.out)
    cfg = resolve_config(args)
    if args.command == "pretrain":
        return experiments.cmd_pretrain(cfg)
    if args.command == "train":
        return experiments.cmd_train(cfg)
    if args.command == "evaluate":
        return experiments.cmd_evaluate(cfg, args.checkpoint)
    if args.command == "generate":
        return experiments.cmd_generate(cfg, args.pool, args.severity, args.seed, args.budget)
    if args.command == "sweep-severity":
        return experiments.cmd_sweep_severity(cfg)
    if args.command == "grid":
        return experiments.cmd_grid(cfg)
    raise AssertionError(args.command)


def _error_line(kind: str, exc: BaseException) -> str:
    message = str(exc).replace("\n", " ")
    if isinstance(exc, KeyError) and exc.args:
        message = str(exc.args[0])
    return f"error kind={kind} message={json.dumps(message)}"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except DPAAError as exc:
        print(_error_line(exc.kind, exc), file=sys.stderr)
        return EXIT_DPAA
    except OSError as exc:
        print(_error_line("io", exc), file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
