"""HR@k and NDCG@k for a single relevant item.

NDCG uses a base-2 logarithm and is divided by the ideal DCG of one relevant
item (which is 1), so a hit at rank ``p <= k`` scores ``1 / log2(p + 1)``.
``raw_dcg_at_k`` keeps the unnormalised natural-log form for literal
comparisons.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricSpec:
    kind: str  # "HR" | "NDCG"
    k: int

    def __post_init__(self):
        if self.kind not in ("HR", "NDCG"):
            raise MetricError(f"unknown metric kind {self.kind!r}")
        if int(self.k) < 1:
            raise MetricError("k must be >= 1")

    def __str__(self) -> str:
        return f"{self.kind}@{self.k}"

    @classmethod
    def parse(cls, text: str) -> "MetricSpec":
        try:
            kind, k = text.strip().split("@")
            return cls(kind.strip().upper(), int(k))
        except ValueError:
            raise MetricError(f"cannot parse metric {text!r}; expected e.g. HR@10") from None

    def from_rank(self, rank: int) -> float:
        if self.kind == "HR":
            return float(rank <= self.k)
        return ndcg_from_rank(rank, self.k)


class RankedList:
    """Items in descending score order with a 1-based position lookup."""

    __slots__ = ("items",)

    def __init__(self, items):
        self.items = np.asarray(items, dtype=np.int64)
        if np.unique(self.items).size != self.items.size:
            raise MetricError("ranking contains duplicate items")

    def __len__(self) -> int:
        return int(self.items.size)

    def __iter__(self):
        return iter(self.items.tolist())

    def rank_of(self, item: int) -> int:
        pos = np.flatnonzero(self.items == item)
        if pos.size == 0:
            raise MetricError(f"item {item} is not in the ranking")
        return int(pos[0]) + 1


def _check_k(k: int) -> None:
    if k < 1:
        raise MetricError("k must be >= 1")


def hr_from_rank(rank: int, k: int) -> float:
    return 1.0 if rank <= k else 0.0


def ndcg_from_rank(rank: int, k: int) -> float:
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


def hit_rate_at_k(ranking: RankedList, relevant: int, k: int) -> float:
    _check_k(k)
    return hr_from_rank(ranking.rank_of(relevant), k)


def ndcg_at_k(ranking: RankedList, relevant: int, k: int) -> float:
    _check_k(k)
    return ndcg_from_rank(ranking.rank_of(relevant), k)


def raw_dcg_at_k(ranking: RankedList, relevant: int, k: int) -> float:
    """Unnormalised DCG with natural log; equals 1/ln 2 > 1 at rank 1."""
    _check_k(k)
    p = ranking.rank_of(relevant)
    return 1.0 / math.log(p + 1) if p <= k else 0.0


def metric_value(ranking: RankedList, relevant: int, spec: MetricSpec) -> float:
    if spec.kind == "HR":
        return hit_rate_at_k(ranking, relevant, spec.k)
    return ndcg_at_k(ranking, relevant, spec.k)


def mean_metric(instances: Iterable[tuple[RankedList, int]], spec: MetricSpec) -> float:
    values = [metric_value(r, rel, spec) for r, rel in instances]
    if not values:
        raise MetricError("mean_metric needs at least one instance")
    return math.fsum(values) / len(values)
