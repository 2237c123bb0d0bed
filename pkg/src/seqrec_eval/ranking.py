"""Model rankings, Kendall's Tau-a, consistency, repeated runs and sample-size sweeps."""
from __future__ import annotations

import math
import statistics
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from .evaluation import compute_ranks, max_pool_size, mean_of, metric_values
from .metrics import MetricSpec
from .targetset import FULL, TargetSetSpec


class RankingError(ValueError):
    pass


class RankTieWarning(UserWarning):
    pass


class EtaClampedWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RankEntry:
    model: str
    value: float
    rank: int


@dataclass
class ModelRanking:
    entries: list[RankEntry]
    metric: MetricSpec | None = None
    strategy: TargetSetSpec | None = None

    def ranks(self) -> dict[str, int]:
        return {e.model: e.rank for e in self.entries}

    def values(self) -> dict[str, float]:
        return {e.model: e.value for e in self.entries}

    def models(self) -> list[str]:
        return [e.model for e in self.entries]

    def order(self) -> list[str]:
        return [e.model for e in sorted(self.entries, key=lambda e: e.rank)]

    @classmethod
    def from_ranks(cls, ranks: Mapping[str, int], **kw) -> "ModelRanking":
        """Build a ranking from known ranks (values are set to ``nan``)."""
        return cls([RankEntry(m, math.nan, int(r)) for m, r in ranks.items()], **kw)


@dataclass(frozen=True)
class TauResult:
    tau_exact: Fraction
    concordant: int
    discordant: int
    m: int

    @property
    def tau(self) -> float:
        return float(self.tau_exact)


@dataclass(frozen=True)
class ConsistencyVerdict:
    consistent: bool
    pairs: dict  # model -> (rank in first, rank in second)


def rank_models(means: Mapping[str, float], metric: MetricSpec | None = None,
                strategy: TargetSetSpec | None = None) -> ModelRanking:
    """Rank 1 goes to the highest mean; exact ties fall back to the model name."""
    if len(means) < 2:
        raise RankingError("need at least two models to rank")
    for name, v in means.items():
        if not math.isfinite(v):
            raise RankingError(f"non-finite mean for model {name}")
    ordered = sorted(means.items(), key=lambda kv: (-kv[1], kv[0]))
    values = [v for _, v in ordered]
    if len(set(values)) < len(values):
        tied = sorted({m for m, v in ordered if values.count(v) > 1})
        warnings.warn(f"tied means for {tied}; order decided by model name", RankTieWarning,
                      stacklevel=2)
    return ModelRanking([RankEntry(m, float(v), i + 1) for i, (m, v) in enumerate(ordered)],
                        metric, strategy)


def _checked_ranks(r1: ModelRanking, r2: ModelRanking) -> tuple[dict, dict]:
    a, b = r1.ranks(), r2.ranks()
    if set(a) != set(b):
        raise RankingError(f"rankings cover different models: {sorted(a)} vs {sorted(b)}")
    return a, b


def kendall_tau_a(r1: ModelRanking, r2: ModelRanking) -> TauResult:
    """tau = 2 (m_c - m_d) / (m (m - 1)) over all model pairs."""
    a, b = _checked_ranks(r1, r2)
    for label, ranks in (("first", a), ("second", b)):
        if len(set(ranks.values())) != len(ranks):
            raise RankingError(f"{label} ranking has ties; Tau-a is undefined")
    models = sorted(a)
    m = len(models)
    if m < 2:
        raise RankingError("need at least two models")
    mc = md = 0
    for x, y in combinations(models, 2):
        if (a[x] < a[y] and b[x] < b[y]) or (a[x] > a[y] and b[x] > b[y]):
            mc += 1
        else:
            md += 1
    return TauResult(Fraction(2 * (mc - md), m * (m - 1)), mc, md, m)


def consistency(r1: ModelRanking, r2: ModelRanking) -> ConsistencyVerdict:
    a, b = _checked_ranks(r1, r2)
    pairs = {m: (a[m], b[m]) for m in sorted(a)}
    return ConsistencyVerdict(all(x == y for x, y in pairs.values()), pairs)


# ---------------------------------------------------------------- repeated runs and sweeps

@dataclass
class RepeatedResult:
    spec: TargetSetSpec
    metric: MetricSpec
    run_means: dict[str, list[float]]
    skipped: int = 0

    @property
    def mean(self) -> dict[str, float]:
        return {m: math.fsum(v) / len(v) for m, v in self.run_means.items()}

    @property
    def std(self) -> dict[str, float]:
        # population std over runs, computed exactly; identical runs give exactly 0
        return {m: float(statistics.pstdev(v)) for m, v in self.run_means.items()}

    def ranking(self) -> ModelRanking:
        return rank_models(self.mean, self.metric, self.spec)


def repeated_sampled_evaluation(models: Sequence, instances, n_items: int, spec: TargetSetSpec,
                                runs: int = 20, metric: MetricSpec = MetricSpec("HR", 10),
                                counts=None, workers: int | None = None) -> RepeatedResult:
    """Evaluate every model on ``runs`` independently sampled target-set draws."""
    if runs < 1:
        raise RankingError("runs must be >= 1")
    if not spec.sampled:
        raise RankingError("repeating a full-catalog evaluation gives identical runs")
    table = compute_ranks(models, instances, n_items, [(spec, r) for r in range(runs)], counts,
                          workers=workers)
    run_means = {name: [mean_of(metric_values(per[(spec.label(), r)], metric)) for r in range(runs)]
                 for name, per in table.ranks.items()}
    return RepeatedResult(spec, metric, run_means, table.skipped[(spec.label(), 0)])


def default_eta_grid(n_items: int) -> list:
    grid = [e for e in (100, 500, 1000, 2500, 5000, 10000) if e < n_items]
    half = n_items // 2
    if half >= 1 and half not in grid:
        grid.append(half)
    return sorted(grid) + [FULL]


@dataclass
class SweepResult:
    strategy: str
    metric: MetricSpec
    full: ModelRanking
    rankings: dict  # eta (int or FULL) -> ModelRanking
    taus: dict  # eta -> TauResult vs the full ranking
    run_means: dict = field(default_factory=dict)  # eta -> model -> [run means]


def sample_size_sweep(models: Sequence, instances, n_items: int, strategy: str,
                      eta_list: Sequence, metric: MetricSpec = MetricSpec("HR", 10),
                      runs: int = 20, counts=None, seed: int = 0,
                      workers: int | None = None) -> SweepResult:
    """One model ranking per negative-sample size, each compared with the full ranking.

    ``FULL`` in ``eta_list`` stands for the full-catalog evaluation.  Sizes
    above the catalog size are clamped to it.
    """
    if strategy not in ("uniform", "popularity"):
        raise RankingError("sweeps need a sampled strategy")
    full_spec = TargetSetSpec("full", seed=seed)
    etas = []
    for e in eta_list:
        if e == FULL or (isinstance(e, str) and e.upper() == FULL):
            etas.append(FULL)
            continue
        e = int(e)
        if e < 1:
            raise RankingError("eta values must be positive")
        if e > n_items:
            warnings.warn(f"eta={e} exceeds the catalog size {n_items}; clamped",
                          EtaClampedWarning, stacklevel=2)
            e = n_items
        etas.append(e)
    specs = {e: TargetSetSpec(strategy, e, seed) for e in etas if e != FULL}
    jobs = [(full_spec, 0)] + [(s, r) for s in specs.values() for r in range(runs)]
    table = compute_ranks(models, instances, n_items, jobs, counts, workers=workers)

    def means(label, n_runs):
        return {name: [mean_of(metric_values(per[(label, r)], metric)) for r in range(n_runs)]
                for name, per in table.ranks.items()}

    full_means = means(full_spec.label(), 1)
    full = rank_models({m: v[0] for m, v in full_means.items()}, metric, full_spec)
    rankings, taus, run_means = {}, {}, {}
    for e in etas:
        if e == FULL:
            rankings[e] = full
            run_means[e] = full_means
        else:
            rm = means(specs[e].label(), runs)
            run_means[e] = rm
            rankings[e] = rank_models({m: math.fsum(v) / len(v) for m, v in rm.items()},
                                      metric, specs[e])
        taus[e] = kendall_tau_a(rankings[e], full)
    return SweepResult(strategy, metric, full, rankings, taus, run_means)
