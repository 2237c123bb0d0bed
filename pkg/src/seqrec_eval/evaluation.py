"""Score instances with many models and turn target sets into per-instance ranks.

Scores are computed once per (model, instance); target sets once per
(strategy, run, instance) and shared by every model, so all models in a run
are ranked against identical candidates.
"""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np

from . import rng as rngmod
from .dataset import EvaluationInstance
from .metrics import MetricSpec, ndcg_from_rank
from .targetset import (DegenerateInstanceError, PoolExhaustedWarning, TargetSetSpec, build,
                        negative_pool)

WORKERS_ENV = "SEQREC_EVAL_WORKERS"


class ScoreFunction(Protocol):
    name: str
    n_items: int

    def score_instances(self, instances: Sequence[EvaluationInstance]) -> np.ndarray:
        """One row of catalog-wide scores per instance."""


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


@dataclass
class RankTable:
    """Per-instance 1-based ranks; ``-1`` marks a skipped (degenerate) instance."""

    ranks: dict[str, dict[tuple[str, int], np.ndarray]]
    skipped: dict[tuple[str, int], int] = field(default_factory=dict)
    exhausted: dict[tuple[str, int], int] = field(default_factory=dict)


def _chunk_ranks(scorers, instances, n_items, jobs, counts, offset):
    B = len(instances)
    out = {s.name: {} for s in scorers}
    skipped, exhausted = {}, {}
    score_rows = {s.name: np.asarray(s.score_instances(instances), dtype=np.float64) for s in scorers}
    for name, rows in score_rows.items():
        if rows.shape != (B, n_items):
            raise ValueError(f"{name}: expected scores of shape {(B, n_items)}, got {rows.shape}")
        if not np.all(np.isfinite(rows)):
            bad = np.argwhere(~np.isfinite(rows))[0]
            raise ValueError(f"{name}: non-finite score for item {int(bad[1])}")
    relevant = np.array([inst.relevant for inst in instances], dtype=np.int64)
    for spec, run in jobs:
        key = (spec.label(), run)
        if spec.strategy == "full" and not spec.exclude_seen_full:
            for name, rows in score_rows.items():
                r = rows[np.arange(B), relevant][:, None]
                lower = np.arange(n_items)[None, :] < relevant[:, None]
                out[name][key] = 1 + np.count_nonzero(rows > r, axis=1) \
                    + np.count_nonzero((rows == r) & lower, axis=1)
            skipped[key] = 0
            exhausted[key] = 0
            continue
        ranks = {name: np.full(B, -1, dtype=np.int64) for name in score_rows}
        n_skip = n_exh = 0
        for j, inst in enumerate(instances):
            gen = rngmod.stream(spec.seed, rngmod.SAMPLING, run, offset + j) if spec.sampled else None
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", PoolExhaustedWarning)
                    ts = build(inst, n_items, spec, gen, counts)
            except DegenerateInstanceError:
                n_skip += 1
                continue
            if spec.sampled and len(ts) - 1 < spec.eta:
                n_exh += 1
            cands = ts.candidates
            for name, rows in score_rows.items():
                s = rows[j, cands]
                r = rows[j, inst.relevant]
                ranks[name][j] = 1 + np.count_nonzero(s > r) \
                    + np.count_nonzero((s == r) & (cands < inst.relevant))
        for name in score_rows:
            out[name][key] = ranks[name]
        skipped[key] = n_skip
        exhausted[key] = n_exh
    return out, skipped, exhausted


def compute_ranks(scorers: Sequence, instances: Sequence[EvaluationInstance], n_items: int,
                  jobs: Sequence[tuple[TargetSetSpec, int]], counts=None,
                  chunk_size: int = 256, workers: int | None = None) -> RankTable:
    """Rank every instance's relevant item for every model and (strategy, run) job.

    The sampling stream for an instance is keyed by ``(spec.seed, run, position)``,
    so results do not depend on chunking or on the number of workers.
    """
    names = [s.name for s in scorers]
    if len(set(names)) != len(names):
        raise ValueError("model names must be unique")
    workers = worker_count() if workers is None else workers
    starts = range(0, len(instances), chunk_size)

    def work(i):
        return _chunk_ranks(scorers, instances[i:i + chunk_size], n_items, jobs, counts, i)

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(i) for i in starts]
    table = RankTable({n: {} for n in names})
    for spec, run in jobs:
        key = (spec.label(), run)
        for n in names:
            table.ranks[n][key] = np.concatenate([p[0][n][key] for p in parts]) if parts \
                else np.zeros(0, dtype=np.int64)
        table.skipped[key] = sum(p[1][key] for p in parts)
        table.exhausted[key] = sum(p[2][key] for p in parts)
    return table


def metric_values(ranks: np.ndarray, metric: MetricSpec) -> np.ndarray:
    """Per-instance metric values for valid ranks (skipped instances dropped)."""
    valid = ranks[ranks > 0]
    if metric.kind == "HR":
        return (valid <= metric.k).astype(np.float64)
    return np.array([ndcg_from_rank(int(r), metric.k) for r in valid], dtype=np.float64)


def mean_of(values: np.ndarray) -> float:
    """Exactly rounded mean: the result does not depend on summation order."""
    if values.size == 0:
        raise ValueError("no evaluated instances")
    return math.fsum(values.tolist()) / values.size


def evaluate(scorers: Sequence, instances: Sequence[EvaluationInstance], n_items: int,
             spec: TargetSetSpec, metrics: Sequence[MetricSpec], runs: int = 1, counts=None,
             workers: int | None = None) -> dict[str, dict[str, list[float]]]:
    """Mean metric per model, metric and run: ``result[model][str(metric)][run]``."""
    jobs = [(spec, r) for r in range(runs)]
    table = compute_ranks(scorers, instances, n_items, jobs, counts, workers=workers)
    return {
        name: {str(m): [mean_of(metric_values(per[(spec.label(), r)], m)) for r in range(runs)]
               for m in metrics}
        for name, per in table.ranks.items()
    }


def max_pool_size(instances: Sequence[EvaluationInstance], n_items: int) -> int:
    return max(negative_pool(inst, n_items).size for inst in instances)
