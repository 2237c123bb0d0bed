"""Non-neural scorers: global popularity and a first-order Markov chain."""
from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy import sparse


class PopularityScorer:
    """Scores every item by its count, ignoring the prefix."""

    def __init__(self, counts, name: str = "popularity"):
        counts = np.asarray(counts, dtype=np.float64)
        if counts.size == 0:
            raise ValueError("popularity baseline needs item counts")
        self.counts = counts
        self.n_items = counts.size
        self.name = name

    def score_instances(self, instances) -> np.ndarray:
        return np.broadcast_to(self.counts, (len(instances), self.n_items)).copy()

    def score(self, prefix, candidates) -> np.ndarray:
        return self.counts[np.asarray(candidates, dtype=np.int64)]


class MarkovScorer:
    """Add-one smoothed transition probability from the prefix's last item."""

    def __init__(self, train_sequences: Sequence[np.ndarray], n_items: int, name: str = "markov"):
        src, dst = [], []
        for s in train_sequences:
            s = np.asarray(s, dtype=np.int64)
            if len(s) >= 2:
                src.append(s[:-1])
                dst.append(s[1:])
        if not src:
            raise ValueError("Markov baseline needs at least one training transition")
        src, dst = np.concatenate(src), np.concatenate(dst)
        self.transitions = sparse.csr_matrix(
            (np.ones(src.size), (src, dst)), shape=(n_items, n_items))
        self.transitions.sum_duplicates()
        self.out_degree = np.asarray(self.transitions.sum(axis=1)).ravel()
        self.n_items = n_items
        self.name = name

    def score_all(self, prefixes) -> np.ndarray:
        last = np.array([p[-1] for p in prefixes], dtype=np.int64)
        counts = self.transitions[last].toarray()
        return (counts + 1.0) / (self.out_degree[last][:, None] + self.n_items)

    def score_instances(self, instances) -> np.ndarray:
        return self.score_all([inst.prefix for inst in instances])

    def score(self, prefix, candidates) -> np.ndarray:
        return self.score_all([prefix])[0][np.asarray(candidates, dtype=np.int64)]


class TableScorer:
    """Fixed per-instance score rows, looked up by ``instance.user``.

    Used for synthetic scorers whose scores are defined directly rather than
    learned.
    """

    def __init__(self, name: str, rows: dict[int, np.ndarray], n_items: int):
        self.name = name
        self.rows = rows
        self.n_items = n_items

    def score_instances(self, instances) -> np.ndarray:
        return np.stack([self.rows[inst.user] for inst in instances]) if instances \
            else np.zeros((0, self.n_items))
