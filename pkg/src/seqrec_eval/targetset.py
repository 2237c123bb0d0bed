"""Candidate sets for evaluation: the full catalog or sampled negatives.

Sampled strategies draw negatives from ``N = catalog - {relevant} - set(prefix)``
without replacement.  Both use exponential-key selection (Efraimidis and
Spirakis): item ``i`` gets key ``log(u_i) / w_i`` with ``u_i ~ U[0, 1)`` and
the ``eta`` largest keys win.  With ``w_i = counts[i]`` this is exactly the
distribution of ``eta`` sequential draws, each proportional to the counts of
the items not drawn yet.  Uniform sampling is the ``w_i = 1`` case, so
equal counts and uniform sampling pick the same set from the same stream.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import EvaluationInstance
from .metrics import RankedList

FULL = "FULL"
STRATEGIES = ("full", "uniform", "popularity")


class TargetSetError(ValueError):
    pass


class DegenerateInstanceError(TargetSetError):
    """The negative pool is empty, so the target set would be the relevant item alone."""


class PoolExhaustedWarning(UserWarning):
    pass


class PopularityFallbackWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TargetSetSpec:
    strategy: str
    eta: int | None = None
    seed: int = 0
    exclude_seen_full: bool = False
    zero_count: str = "exclude"  # or "smooth": add one to every count

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise TargetSetError(f"unknown strategy {self.strategy!r}; use one of {STRATEGIES}")
        if self.strategy != "full" and (self.eta is None or int(self.eta) < 1):
            raise TargetSetError("sampled strategies need eta >= 1")
        if self.zero_count not in ("exclude", "smooth"):
            raise TargetSetError("zero_count must be 'exclude' or 'smooth'")

    @property
    def sampled(self) -> bool:
        return self.strategy != "full"

    def label(self) -> str:
        return self.strategy if self.strategy == "full" else f"{self.strategy}@{self.eta}"


@dataclass(frozen=True)
class TargetSet:
    candidates: np.ndarray  # sorted ascending, relevant included once
    relevant: int

    def __len__(self) -> int:
        return int(self.candidates.size)


def _n_items(catalog) -> int:
    return int(catalog) if isinstance(catalog, (int, np.integer)) else len(catalog)


def negative_pool(instance: EvaluationInstance, catalog) -> np.ndarray:
    n = _n_items(catalog)
    allowed = np.ones(n, dtype=bool)
    if instance.prefix:
        allowed[np.fromiter(instance.prefix, dtype=np.int64)] = False
    allowed[instance.relevant] = False
    return np.flatnonzero(allowed)


def _with_relevant(negatives: np.ndarray, relevant: int) -> TargetSet:
    cands = np.sort(np.append(negatives.astype(np.int64), relevant))
    return TargetSet(cands, int(relevant))


def _top_keys(pool: np.ndarray, keys: np.ndarray, k: int) -> np.ndarray:
    if k >= pool.size:
        return pool
    idx = np.argpartition(-keys, k - 1)[:k]
    return pool[idx]


def build_full(instance: EvaluationInstance, catalog, exclude_seen: bool = False) -> TargetSet:
    n = _n_items(catalog)
    if n < 1:
        raise TargetSetError("catalog is empty")
    if not exclude_seen:
        return TargetSet(np.arange(n, dtype=np.int64), int(instance.relevant))
    return _with_relevant(negative_pool(instance, n), instance.relevant)


def build_uniform(instance: EvaluationInstance, catalog, eta: int,
                  rng: np.random.Generator) -> TargetSet:
    if eta < 1:
        raise TargetSetError("eta must be >= 1")
    pool = negative_pool(instance, catalog)
    if pool.size == 0:
        raise DegenerateInstanceError(f"user {instance.user}: empty negative pool")
    if pool.size < eta:
        warnings.warn(f"negative pool of {pool.size} items is smaller than eta={eta}",
                      PoolExhaustedWarning, stacklevel=2)
    keys = rng.random(pool.size)
    return _with_relevant(_top_keys(pool, keys, eta), instance.relevant)


def build_popularity(instance: EvaluationInstance, catalog, eta: int, counts,
                     rng: np.random.Generator, zero_count: str = "exclude") -> TargetSet:
    if eta < 1:
        raise TargetSetError("eta must be >= 1")
    counts = np.asarray(counts, dtype=np.float64)
    pool = negative_pool(instance, catalog)
    if pool.size == 0:
        raise DegenerateInstanceError(f"user {instance.user}: empty negative pool")
    weights = counts[pool]
    if zero_count == "smooth":
        weights = weights + 1.0
    if not np.any(weights > 0):
        warnings.warn("all candidate counts are zero; sampling uniformly instead",
                      PopularityFallbackWarning, stacklevel=2)
        return build_uniform(instance, catalog, eta, rng)
    keys = rng.random(pool.size)
    positive = weights > 0
    pool, keys, weights = pool[positive], keys[positive], weights[positive]
    if pool.size < eta:
        warnings.warn(f"popularity pool of {pool.size} items is smaller than eta={eta}",
                      PoolExhaustedWarning, stacklevel=2)
    with np.errstate(divide="ignore"):
        keys = np.log(keys) / weights
    return _with_relevant(_top_keys(pool, keys, eta), instance.relevant)


def build(instance: EvaluationInstance, catalog, spec: TargetSetSpec,
          rng: np.random.Generator | None = None, counts=None) -> TargetSet:
    if spec.strategy == "full":
        return build_full(instance, catalog, spec.exclude_seen_full)
    if rng is None:
        raise TargetSetError("sampled strategies need a random generator")
    if spec.strategy == "uniform":
        return build_uniform(instance, catalog, spec.eta, rng)
    if counts is None:
        raise TargetSetError("popularity sampling needs item counts")
    return build_popularity(instance, catalog, spec.eta, counts, rng, spec.zero_count)


def rank_target_set(scores, candidates) -> RankedList:
    """Sort candidates by descending score; equal scores go to the lower item index first."""
    scores = np.asarray(scores, dtype=np.float64)
    candidates = np.asarray(candidates, dtype=np.int64)
    if scores.shape != candidates.shape:
        raise TargetSetError(f"{scores.size} scores for {candidates.size} candidates")
    bad = ~np.isfinite(scores)
    if bad.any():
        raise TargetSetError(f"non-finite score for item {int(candidates[np.argmax(bad)])}")
    order = np.lexsort((candidates, -scores))
    return RankedList(candidates[order])


def relevant_rank(item_scores: np.ndarray, candidates: np.ndarray, relevant: int) -> int:
    """Position of ``relevant`` in ``rank_target_set(item_scores[candidates], candidates)``.

    ``item_scores`` holds one score per catalog item.  Counting beats sorting
    when only the relevant item's position matters.
    """
    s = item_scores[candidates]
    r = item_scores[relevant]
    bad = ~np.isfinite(s)
    if bad.any():
        raise TargetSetError(f"non-finite score for item {int(candidates[np.argmax(bad)])}")
    return 1 + int(np.count_nonzero(s > r)) + int(np.count_nonzero((s == r) & (candidates < relevant)))
