"""Synthetic datasets and fixed scorers for sanity checks and the sampling phenomenon.

* ``cycle_dataset``: item ``i`` is always followed by ``i + 1 mod n``.
* ``zipf_scenario``: a Zipf-popular catalog with evaluation instances and
  hand-built score tables (scorers A and B) whose full-catalog and sampled
  HR@10 can be computed in closed form with ``expected_sampled_hr``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import rng as rngmod
from .dataset import EvaluationInstance, InteractionLog, SequenceDataset, preprocess
from .models.baselines import TableScorer


def cycle_dataset(n_items: int = 20, n_users: int = 200, length: int = 12) -> SequenceDataset:
    """User ``u`` starts at item ``u mod n_items`` and walks the cycle."""
    users, items, times = [], [], []
    for u in range(n_users):
        for t in range(length):
            users.append(f"u{u}")
            items.append(f"i{(u + t) % n_items}")
            times.append(t)
    ds = preprocess(InteractionLog(users, items, times), skip_filtering=True)
    # relabel so that catalog index equals the cycle position
    order = sorted(range(ds.n_items), key=lambda i: int(ds.catalog[i][1:]))
    remap = np.empty(ds.n_items, dtype=np.int64)
    remap[order] = np.arange(ds.n_items)
    return SequenceDataset([ds.catalog[i] for i in order], ds.users,
                           [remap[s] for s in ds.sequences], ds.popularity[order],
                           metadata=dict(ds.metadata, source="cycle"))


def zipf_weights(n_items: int, exponent: float = 1.0) -> np.ndarray:
    w = 1.0 / np.arange(1, n_items + 1) ** exponent
    return w / w.sum()


@dataclass
class ZipfScenario:
    n_items: int
    counts: np.ndarray  # popularity profile used for popularity sampling
    instances: list[EvaluationInstance]
    scorers: dict[str, TableScorer]

    def scorer_list(self, *names: str) -> list[TableScorer]:
        return [self.scorers[n] for n in (names or sorted(self.scorers))]


def zipf_scenario(n_items: int = 1000, n_instances: int = 1000, popular: int = 50,
                  b_rank: int = 6, seed: int = 0, exponent: float = 1.0,
                  count_scale: int = 100_000) -> ZipfScenario:
    """Two fixed scorers over a Zipf-popular catalog.

    Item ``i`` has popularity rank ``i`` (0 is the most popular).  Targets are
    drawn from the Zipf profile; each prefix is one other item.

    * ``A`` puts the target first when it is among the ``popular`` most
      popular items and at a uniformly random full-catalog position otherwise.
    * ``B`` puts the target at full-catalog rank ``b_rank`` for every instance.
    """
    gen = rngmod.stream(seed, rngmod.SYNTHETIC)
    p = zipf_weights(n_items, exponent)
    counts = np.maximum(np.rint(p * count_scale), 1.0)
    targets = gen.choice(n_items, size=n_instances, p=p)
    instances, rows_a, rows_b = [], {}, {}
    for u, r in enumerate(targets.tolist()):
        other = int(gen.integers(n_items - 1))
        other += other >= r
        instances.append(EvaluationInstance(u, (other,), r))
        base = gen.permutation(n_items).astype(np.float64)
        a = base.copy()
        if r < popular:
            a[r] = n_items
        rows_a[u] = a
        b = gen.permutation(n_items).astype(np.float64)
        rest = np.flatnonzero(np.arange(n_items) != r)
        above = gen.choice(rest, size=b_rank - 1, replace=False)
        b[above] = n_items + 1 + np.arange(b_rank - 1)
        b[r] = n_items + 0.5
        rows_b[u] = b
    scorers = {"A": TableScorer("A", rows_a, n_items), "B": TableScorer("B", rows_b, n_items)}
    return ZipfScenario(n_items, counts, instances, scorers)


def items_above(row: np.ndarray, instance: EvaluationInstance) -> tuple[int, int]:
    """(negatives scored above the target, negative pool size) under the
    ascending-index tie rule."""
    n = row.size
    pool = np.ones(n, dtype=bool)
    pool[list(instance.prefix)] = False
    pool[instance.relevant] = False
    s = row[instance.relevant]
    idx = np.arange(n)
    beats = (row > s) | ((row == s) & (idx < instance.relevant))
    return int(np.count_nonzero(beats & pool)), int(np.count_nonzero(pool))


def full_rank(row: np.ndarray, instance: EvaluationInstance) -> int:
    """1-based rank of the target among all catalog items."""
    s = row[instance.relevant]
    idx = np.arange(row.size)
    return 1 + int(np.count_nonzero((row > s) | ((row == s) & (idx < instance.relevant))))


def expected_sampled_hr(row: np.ndarray, instance: EvaluationInstance, eta: int, k: int) -> float:
    """Expected HR@k when ``eta`` negatives are drawn uniformly without replacement.

    The target lands in the top ``k`` iff at most ``k - 1`` of the drawn
    negatives outrank it, a hypergeometric event.
    """
    above, pool = items_above(row, instance)
    eta = min(eta, pool)
    return float(stats.hypergeom.cdf(k - 1, pool, above, eta))


def expected_scenario_hr(scenario: ZipfScenario, name: str, eta: int | None, k: int = 10) -> float:
    """Mean expected HR@k for one scorer; ``eta=None`` is the full catalog."""
    scorer = scenario.scorers[name]
    vals = []
    for inst in scenario.instances:
        row = scorer.rows[inst.user]
        if eta is None:
            vals.append(float(full_rank(row, inst) <= k))
        else:
            vals.append(expected_sampled_hr(row, inst, eta, k))
    return float(np.mean(vals))
