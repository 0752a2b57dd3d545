"""Training runs, one-shot evaluation and timing benchmarks.

A run directory holds::

    config.txt      resolved configuration
    reports.jsonl   one metric record per evaluation checkpoint
    timings.jsonl   hash-function / hash-table seconds for the same checkpoints
    trace.jsonl     loss and gradient norm of every class subprocess
    auc.json        areas under the mAP and precision@K curves
    model.fcoh      final weights and class statistics
    table.bctb      final packed code table of the database

Everything except ``timings.jsonl`` is a pure function of the configuration.
"""

from __future__ import annotations

import json
import logging
import math
import statistics
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fcoh.baseline import lsh_init
from fcoh.config import RunConfig
from fcoh.data import Dataset, StreamSpec, load_features, make_splits, stream, synth_clusters
from fcoh.errors import ShapeError
from fcoh.index import BinaryCodeTable, pack_codes, rebuild, save_table
from fcoh.metrics import EvalReport, GroundTruth, auc, evaluate
from fcoh.model import (
    ClassRunningStats,
    HashModel,
    encode,
    init_model,
    load_checkpoint,
    save_checkpoint,
    train_batch,
)

log = logging.getLogger(__name__)


def _splits(cfg: RunConfig, ds: Dataset):
    return make_splits(
        ds,
        cfg.seed,
        query_per_class=cfg.query_per_class or None,
        query_total=cfg.query_total or None,
        train_size=cfg.train_size,
        database_size=cfg.database_size or None,
    )


def _shift(X: np.ndarray, offset) -> np.ndarray:
    return X if offset is None else X - offset[:, None]


def _evaluate(model: HashModel, table: BinaryCodeTable, queries: Dataset, offset, cfg: RunConfig,
              stage: int, seen: int) -> EvalReport:
    qwords = pack_codes(encode(model, _shift(queries.features, offset)))
    gt = GroundTruth(queries.labels, table.labels)
    return evaluate(qwords, table, gt, stage=stage, samples_seen=seen, ks=cfg.ks,
                    map_cutoff=cfg.map_cutoff or None)


@dataclass
class RunResult:
    reports: list[EvalReport]
    model: HashModel
    stats: ClassRunningStats
    table: BinaryCodeTable
    summary: dict


def run_training(cfg: RunConfig, ds: Dataset | None = None, out_dir=None) -> RunResult:
    """Stream the training split through the learner, evaluating every ``eval_every`` batches.

    The database table is rebuilt after every weight update, as a deployed
    index would be; its cost is timed separately from the weight update.
    """
    if ds is None:
        ds = load_features(cfg.dataset, cfg.format or None)
    splits = _splits(cfg, ds)
    db = splits.database
    batches = stream(splits.train, StreamSpec(cfg.n_t, cfg.train_size, cfg.seed), center=cfg.center)
    hp = cfg.hyperparams()

    if cfg.method == "lsh":
        model = lsh_init(ds.d, cfg.r, cfg.seed).model
    else:
        model = init_model(ds.d, cfg.r, cfg.seed)
    stats = ClassRunningStats(ds.d)

    reports, trace = [], []
    fn_seconds = table_seconds = 0.0
    table = None
    n_batches = len(batches)
    seen = 0
    for stage, batch in enumerate(batches, 1):
        seen += batch.n
        if cfg.method == "fcoh":
            t0 = time.perf_counter()
            model, stats, entries = train_batch(model, stats, batch, hp, stage, cfg.freeze_per_batch)
            fn_seconds += time.perf_counter() - t0
            trace.extend(entries)
        else:
            for part_label in np.unique(batch.labels):
                stats.update(int(part_label), batch.X[:, batch.labels == part_label])
        if table is None or cfg.method == "fcoh":
            t0 = time.perf_counter()
            table = rebuild(table, model, _shift(db.features, batches.offset), db.ids, db.labels)
            table_seconds += time.perf_counter() - t0
        if stage % cfg.eval_every == 0 or stage == n_batches:
            t0 = time.perf_counter()
            rep = _evaluate(model, table, splits.queries, batches.offset, cfg, stage, seen)
            rep.timings = {
                "hash_function_s": fn_seconds,
                "hash_table_s": table_seconds,
                "total_s": fn_seconds + table_seconds,
                "eval_s": time.perf_counter() - t0,
            }
            reports.append(rep)
            log.info("stage %d (%d samples): mAP %.4f", stage, seen, rep.map)

    summary = summarize(reports)
    result = RunResult(reports, model, stats, table, summary)
    if out_dir is not None:
        write_run(Path(out_dir), cfg, result, trace, batches.offset)
    return result


def summarize(reports: list[EvalReport]) -> dict:
    final = reports[-1]
    curve = [(r.samples_seen, r.map) for r in reports]
    return {
        "final_stage": final.stage,
        "final_map": final.map,
        "map_auc": auc(curve) if len(curve) >= 2 else None,
        "precision_at_k_auc": auc(final.precision_at_k) if len(final.precision_at_k) >= 2 else None,
        "map_curve": [{"samples_seen": x, "map": y} for x, y in curve],
    }


def write_run(out: Path, cfg: RunConfig, result: RunResult, trace, offset):
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    with open(out / "reports.jsonl", "w") as f:
        for rep in result.reports:
            f.write(rep.to_json() + "\n")
    with open(out / "timings.jsonl", "w") as f:
        for rep in result.reports:
            f.write(json.dumps(rep.timing_record()) + "\n")
    with open(out / "trace.jsonl", "w") as f:
        for e in trace:
            f.write(json.dumps({"stage": e.stage, "label": e.label, "loss": e.loss,
                                "grad_norm": e.grad_norm}) + "\n")
    (out / "auc.json").write_text(json.dumps(result.summary, indent=2) + "\n")
    save_checkpoint(out / "model.fcoh", result.model, result.stats, offset)
    save_table(out / "table.bctb", result.table)


def run_eval(cfg: RunConfig, checkpoint, ds: Dataset | None = None) -> EvalReport:
    """Evaluate a saved model on the configured splits without any training."""
    model, stats, offset = load_checkpoint(checkpoint)
    if ds is None:
        ds = load_features(cfg.dataset, cfg.format or None)
    if ds.d != model.d:
        raise ShapeError(f"checkpoint expects {model.d}-dim features, dataset has {ds.d}")
    splits = _splits(cfg, ds)
    db = splits.database
    table = rebuild(None, model, _shift(db.features, offset), db.ids, db.labels)
    seen = sum(stats.counts.values())
    stage = math.ceil(seen / cfg.n_t)
    return _evaluate(model, table, splits.queries, offset, cfg, stage, seen)


@dataclass
class BenchRow:
    name: str
    d: int
    hash_function_s: float
    hash_table_s: float

    @property
    def total_s(self) -> float:
        return self.hash_function_s + self.hash_table_s

    def to_record(self) -> dict:
        return {"name": self.name, "d": self.d, "hash_function_s": self.hash_function_s,
                "hash_table_s": self.hash_table_s, "total_s": self.total_s}


def time_run(cfg: RunConfig, ds: Dataset) -> tuple[float, float]:
    """One timed pass: seconds spent updating weights and rebuilding the table."""
    splits = _splits(cfg, ds)
    db = splits.database
    hp = cfg.hyperparams()
    model = init_model(ds.d, cfg.r, cfg.seed)
    stats = ClassRunningStats(ds.d)
    fn = tab = 0.0
    table = None
    for batch in stream(splits.train, StreamSpec(cfg.n_t, cfg.train_size, cfg.seed)):
        t0 = time.perf_counter()
        model, stats, _ = train_batch(model, stats, batch, hp, 0, cfg.freeze_per_batch)
        t1 = time.perf_counter()
        table = rebuild(table, model, db.features, db.ids, db.labels)
        t2 = time.perf_counter()
        fn += t1 - t0
        tab += t2 - t1
    return fn, tab


def bench(configs: list[tuple[str, RunConfig, Dataset]], repeats: int = 3) -> list[BenchRow]:
    """Median-of-``repeats`` timings per configuration."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    rows = []
    for name, cfg, ds in configs:
        runs = [time_run(cfg, ds) for _ in range(repeats)]
        rows.append(BenchRow(
            name,
            ds.d,
            statistics.median(fn for fn, _ in runs),
            statistics.median(tab for _, tab in runs),
        ))
    return rows


# Stable settings for the synthetic clusters produced by synth_clusters(sep=1, noise=0.1).
SYNTH_HP = {"lambda1": 0.01, "lambda2": 0.01, "mu": 0.01}


def synthetic_sweep(dims, *, n_classes=10, per_class=300, r=32, n_t=100, train_size=2000,
                    database_size=1000, seed=0, hp: dict | None = None) -> list[tuple[str, RunConfig, Dataset]]:
    """Bench configurations over feature dimensions on synthetic clusters."""
    out = []
    for d in dims:
        ds = synth_clusters(d, n_classes, per_class, sep=1.0, noise=0.1, seed=seed)
        cfg = RunConfig(dataset="<synthetic>", r=r, n_t=n_t, seed=seed, train_size=train_size,
                        query_total=n_classes * 10, database_size=database_size,
                        **(hp or SYNTH_HP))
        out.append((f"synth-d{d}", cfg, ds))
    return out


def format_bench(rows: list[BenchRow]) -> str:
    head = f"{'config':<24}{'d':>6}{'hash function (s)':>20}{'hash table (s)':>18}{'total (s)':>12}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r.name:<24}{r.d:>6}{r.hash_function_s:>20.4f}{r.hash_table_s:>18.4f}{r.total_s:>12.4f}")
    return "\n".join(lines)
