"""Experiment drivers behind the command-line subcommands.

Each ``cmd_*`` function takes a resolved :class:`ExperimentConfig`, writes
its artefacts plus a ``manifest.json`` into the output directory and
returns a small result object for programmatic use.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .data import Dataset, load_coat, load_dataset, load_dataset_dir, semi_synthetic
from .datagen import SplitSpec, synthetic_preference_pool
from .errors import ConfigError, DataError
from .evaluation import GROUPS, EvalReport, GroupMetrics, evaluate
from .graph import read_interactions, write_interactions
from .model import Checkpoint, final_embeddings
from .train import FitResult, fit, pretrain_base
from .weights import PretrainedIIWCache, WeightPlan

logger = logging.getLogger(__name__)

PRETRAIN_CKPT = "pretrain.ckpt"
CACHE_FILE = "iiw.cache"


# -- helpers ------------------------------------------------------------------

def write_manifest(out: Path, command: str, cfg: ExperimentConfig, **extra) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, "config": cfg.as_dict(), **extra}
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n",
                    encoding="utf-8")
    return path


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (tuple, set, frozenset, np.ndarray)):
        return list(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dataset_from_config(cfg: ExperimentConfig) -> Dataset:
    if cfg.get("data.coat_dir"):
        return load_coat(cfg.get("data.coat_dir"), seed=cfg.get("train.seed", 0))
    if cfg.get("data.dir"):
        return load_dataset_dir(cfg.get("data.dir"))
    paths = [cfg.get(f"data.{k}") for k in ("train", "valid", "test")]
    if not all(paths):
        raise ConfigError("dataset needs data.dir, data.coat_dir or all of "
                          "data.train, data.valid and data.test")
    return load_dataset(*paths, candidates_path=cfg.get("data.candidates"),
                        num_users=cfg.get("data.num_users"), num_items=cfg.get("data.num_items"))


def mean_report(reports: list[EvalReport]) -> EvalReport:
    """Per-group arithmetic mean over seeds."""
    out = EvalReport(k=reports[0].k)
    for g in GROUPS:
        if all(g in r.groups for r in reports):
            ms = [r.groups[g] for r in reports]
            out.groups[g] = GroupMetrics(
                recall=float(np.mean([m.recall for m in ms])),
                ndcg=float(np.mean([m.ndcg for m in ms])),
                hr=float(np.mean([m.hr for m in ms])),
                num_users=ms[0].num_users)
    return out


def split_report(ds: Dataset, ckpt: Checkpoint, cache, k: int) -> EvalReport:
    graph = ds.graph()
    final = final_embeddings(graph, ckpt.config, ckpt.table, cache, ckpt.beta_t)
    return evaluate(final, ds.test_task(), ds.popularity_split(), k)


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _pool_map(fn, jobs, workers: int):
    """Run ``fn`` over ``jobs``; results come back in job order either way."""
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


# -- pretrain -----------------------------------------------------------------

@dataclass
class PretrainResult:
    fit: FitResult
    cache: PretrainedIIWCache
    report: EvalReport


def pretrain(ds: Dataset, cfg: ExperimentConfig, seed: int | None = None):
    plan = cfg.plan()
    result, cache = pretrain_base(ds.graph(), ds.valid_task(), cfg.get("model.dim", 256),
                                  plan.num_layers, cfg.train(seed), plan.cached_layers)
    report = split_report(ds, result.checkpoint, None, cfg.get("train.eval_k", 20))
    return PretrainResult(result, cache, report)


def cmd_pretrain(cfg: ExperimentConfig) -> PretrainResult:
    ds = dataset_from_config(cfg)
    out = cfg.output_dir()
    write_manifest(out, "pretrain", cfg, dataset=_dataset_summary(ds))
    res = pretrain(ds, cfg)
    res.fit.checkpoint.save(out / PRETRAIN_CKPT)
    res.cache.save(out / CACHE_FILE)
    res.fit.write_log(out / "pretrain_log.csv")
    res.report.to_csv(out / "pretrain_report.csv")
    print(f"validation recall@{cfg.get('train.eval_k', 20)}={res.fit.best_metric:.6f} "
          f"epoch={res.fit.best_epoch} cache_layers={','.join(map(str, res.cache.layers))}")
    return res


# -- train / evaluate ---------------------------------------------------------

def _cache_path(cfg: ExperimentConfig) -> Path:
    return Path(cfg.get("cache.path") or cfg.output_dir() / CACHE_FILE)


def load_cache(cfg: ExperimentConfig) -> PretrainedIIWCache:
    path = _cache_path(cfg)
    if not path.is_file():
        raise FileNotFoundError(f"missing IIW cache (run pretrain first): {path}")
    return PretrainedIIWCache.load(path)


def cmd_train(cfg: ExperimentConfig) -> EvalReport:
    ds = dataset_from_config(cfg)
    out = cfg.output_dir()
    model_cfg = cfg.model()
    cache = None
    if model_cfg.mode == "dpaa":
        cache = load_cache(cfg)
        cache.check_plan(model_cfg.plan, ds.graph().edge_count)
    seeds = cfg.seeds()
    write_manifest(out, "train", cfg, dataset=_dataset_summary(ds))
    k = cfg.get("train.eval_k", 20)
    graph, valid = ds.graph(), ds.valid_task()
    reports = []
    for seed in seeds:
        res = fit(graph, valid, model_cfg, cfg.train(seed), cache)
        suffix = "" if len(seeds) == 1 else f"_seed{seed}"
        res.checkpoint.save(out / f"model{suffix}.ckpt")
        res.write_log(out / f"train_log{suffix}.csv")
        rep = split_report(ds, res.checkpoint, cache, k)
        if len(seeds) > 1:
            rep.to_csv(out / f"report{suffix}.csv")
        reports.append(rep)
    report = mean_report(reports)
    report.to_csv(out / "report.csv")
    _write(out / "report.md", report.to_markdown())
    print(report.to_markdown(), end="")
    return report


def cmd_evaluate(cfg: ExperimentConfig, checkpoint_path) -> EvalReport:
    ds = dataset_from_config(cfg)
    ckpt = Checkpoint.load(checkpoint_path)
    if (ckpt.num_users, ckpt.num_items) != (ds.num_users, ds.num_items):
        raise ConfigError(f"checkpoint is {ckpt.num_users}x{ckpt.num_items}, "
                          f"dataset is {ds.num_users}x{ds.num_items}")
    cache = load_cache(cfg) if ckpt.config.mode == "dpaa" else None
    out = cfg.output_dir()
    write_manifest(out, "evaluate", cfg, checkpoint=str(checkpoint_path))
    report = split_report(ds, ckpt, cache, cfg.get("train.eval_k", 20))
    report.to_csv(out / "report.csv")
    _write(out / "report.md", report.to_markdown())
    print(report.to_markdown(), end="")
    return report


# -- generate -----------------------------------------------------------------

def cmd_generate(cfg: ExperimentConfig, pool_path, severity: float, seed: int,
                 interactions_per_user: int | None = None) -> Dataset:
    pool = read_interactions(pool_path)
    if pool.shape[0] == 0:
        raise DataError(f"pool file is empty: {pool_path}")
    ds = semi_synthetic(pool, severity, seed, SplitSpec(seed=seed),
                        num_users=cfg.get("data.num_users"), num_items=cfg.get("data.num_items"),
                        interactions_per_user=interactions_per_user,
                        sample_fraction=cfg.get("sweep.sample_fraction", 0.2))
    out = cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    write_interactions(out / "train.tsv", ds.train)
    write_interactions(out / "valid.tsv", ds.valid)
    write_interactions(out / "test.tsv", ds.test)
    write_manifest(out, "generate", cfg, pool=str(pool_path), severity=severity, seed=seed,
                   dataset=_dataset_summary(ds))
    print(f"train={len(ds.train)} valid={len(ds.valid)} test={len(ds.test)}")
    return ds


def _dataset_summary(ds: Dataset) -> dict:
    return {"name": ds.name, "num_users": ds.num_users, "num_items": ds.num_items,
            "train": int(len(ds.train)), "valid": int(len(ds.valid)), "test": int(len(ds.test)),
            "candidates": None if ds.candidates is None else int(len(ds.candidates))}


# -- severity sweep -----------------------------------------------------------

SWEEP_FIELDS = ["severity", "method", "recall", "ndcg", "hr"]


def _sweep_cell(job):
    """One severity level: generate, pretrain (the LightGCN result), train DPAA."""
    cfg, pool, severity, num_users, num_items = job
    data_seed = cfg.get("sweep.split_seed", 0)
    ds = semi_synthetic(pool, severity, data_seed, SplitSpec(seed=data_seed),
                        num_users=num_users, num_items=num_items,
                        sample_fraction=cfg.get("sweep.sample_fraction", 0.2))
    graph, valid = ds.graph(), ds.valid_task()
    k = cfg.get("train.eval_k", 20)
    base, dpaa = [], []
    for seed in cfg.seeds():
        pre = pretrain(ds, cfg, seed)
        base.append(pre.report)
        model_cfg = cfg.model(mode="dpaa")
        res = fit(graph, valid, model_cfg, cfg.train(seed), pre.cache)
        dpaa.append(split_report(ds, res.checkpoint, pre.cache, k))
    return severity, mean_report(dpaa), mean_report(base)


def sweep_pool(cfg: ExperimentConfig):
    if cfg.get("data.pool"):
        pool = read_interactions(cfg.get("data.pool"))
        if pool.shape[0] == 0:
            raise DataError(f"pool file is empty: {cfg.get('data.pool')}")
        return pool, cfg.get("data.num_users"), cfg.get("data.num_items")
    M = cfg.get("sweep.synthetic_users", 500)
    N = cfg.get("sweep.synthetic_items", 800)
    return synthetic_preference_pool(M, N, seed=cfg.get("sweep.split_seed", 0)), M, N


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_FIELDS)
    for severity, method, m in rows:
        w.writerow([f"{severity:g}", method, f"{m.recall:.6f}", f"{m.ndcg:.6f}", f"{m.hr:.6f}"])
    return buf.getvalue()


def cmd_sweep_severity(cfg: ExperimentConfig, severities=None) -> list:
    severities = tuple(severities if severities is not None
                       else cfg.get("sweep.severities", (0.0, 3.0, 6.0, 9.0)))
    if not severities:
        raise ConfigError("no severity values given")
    pool, M, N = sweep_pool(cfg)
    out = cfg.output_dir()
    write_manifest(out, "sweep-severity", cfg, severities=list(severities),
                   pool_interactions=int(len(pool)))
    jobs = [(cfg, pool, s, M, N) for s in severities]
    rows = []
    for severity, dpaa, base in _pool_map(_sweep_cell, jobs, cfg.get("output.workers", 1)):
        rows.append((severity, "dpaa", dpaa["all"]))
        rows.append((severity, "lightgcn", base["all"]))
    _write(out / "severity.csv", sweep_csv(rows))
    print(sweep_csv(rows), end="")
    return rows


# -- grid ---------------------------------------------------------------------

GRID_FIELDS = ["C", "eta", "delta", "val_recall"]


@dataclass(frozen=True)
class GridResult:
    best: tuple
    best_metric: float
    rows: list


def grid_points(C_values, eta_values, delta_values) -> list[tuple]:
    """Lexicographic ``(C, eta, delta)`` enumeration."""
    return list(itertools.product(C_values, eta_values, delta_values))


def _grid_cell(job):
    ds_graph, valid, cfg, cache, point = job
    C, eta, delta = point
    plan = WeightPlan(C=C, eta=eta, gamma=cfg.get("plan.gamma", 1), delta=delta,
                      num_layers=cfg.get("model.layers", 2))
    model_cfg = cfg.model(mode="dpaa", plan=plan)
    scores = [fit(ds_graph, valid, model_cfg, cfg.train(seed), cache).best_metric
              for seed in cfg.seeds()]
    return float(np.mean(scores))


def select_best(points, scores):
    """First point with the maximal score (strict improvement only)."""
    best_i = 0
    for i, s in enumerate(scores):
        if s > scores[best_i]:
            best_i = i
    return points[best_i], scores[best_i]


def cmd_grid(cfg: ExperimentConfig) -> GridResult:
    points = grid_points(*cfg.grids())
    if not points:
        raise ConfigError("grid is empty")
    ds = dataset_from_config(cfg)
    out = cfg.output_dir()
    write_manifest(out, "grid", cfg, grid_size=len(points), dataset=_dataset_summary(ds))
    cache_file = _cache_path(cfg)
    if cache_file.is_file():
        cache = PretrainedIIWCache.load(cache_file)
    else:
        logger.info("no cache at %s; pretraining first", cache_file)
        cache = pretrain(ds, cfg).cache
        cache.save(out / CACHE_FILE)
    graph, valid = ds.graph(), ds.valid_task()
    jobs = [(graph, valid, cfg, cache, p) for p in points]
    scores = _pool_map(_grid_cell, jobs, cfg.get("output.workers", 1))
    best, best_metric = select_best(points, scores)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GRID_FIELDS)
    for (C, eta, delta), s in zip(points, scores):
        w.writerow([f"{C:g}", f"{eta:g}", f"{delta:g}", f"{s:.6f}"])
    _write(out / "grid.csv", buf.getvalue())
    _write(out / "best.json", json.dumps({"C": best[0], "eta": best[1], "delta": best[2],
                                          "val_recall": best_metric}, indent=2) + "\n")
    print(f"best C={best[0]:g} eta={best[1]:g} delta={best[2]:g} val_recall={best_metric:.6f}")
    return GridResult(best, best_metric, list(zip(points, scores)))


# -- report -------------------------------------------------------------------

def _read_csv(path: Path) -> list[dict]:
    with path.open("r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_report(inputs, out=None) -> str:
    """Collect the ``report.csv``/``severity.csv``/``grid.csv`` files of run
    directories into one markdown document."""
    sections = []
    for d in map(Path, inputs):
        if not d.is_dir():
            raise FileNotFoundError(f"missing run directory: {d}")
        found = False
        for name in ("pretrain_report.csv", "report.csv", "severity.csv", "grid.csv"):
            p = d / name
            if p.is_file():
                found = True
                sections.append(f"## {d.name}/{name}\n\n{_markdown_table(_read_csv(p))}")
        if not found:
            raise DataError(f"no report files in {d}")
    text = "\n".join(sections)
    if out is not None:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        _write(out, text)
    print(text, end="")
    return text


def _markdown_table(rows: list[dict]) -> str:
    if not rows:
        return "(empty)\n"
    cols = list(rows[0])
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    lines += ["| " + " | ".join(r[c] for c in cols) + " |" for r in rows]
    return "\n".join(lines) + "\n"

