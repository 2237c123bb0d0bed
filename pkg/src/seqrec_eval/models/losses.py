"""Training objectives.

* ``loss_cross_entropy_prefixes``: negative log-softmax of the true next item
  after every prefix (GRU, NARM).
* ``loss_bpr_shifted``: ``-log sigmoid(o_pos) - log(1 - sigmoid(o_neg))`` per
  step with one sampled negative (SASRec).
* ``loss_cloze``: cross-entropy at masked positions (BERT4Rec).

All sum their terms unless the model config asks for ``loss_reduction = "mean"``.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from .base import ModelError, left_pad, reduce_terms


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Sum over rows of ``-log softmax(logits)[target]``."""
    ls = ad.log_softmax(logits, axis=-1)
    picked = ls[np.arange(len(targets)), np.asarray(targets, dtype=np.int64)]
    return -picked.sum()


def loss_cross_entropy_prefixes(model, batch: Sequence[np.ndarray], rng=None,
                                reduction: str | None = None) -> Tensor:
    states, targets, _ = model.next_item_states(batch, rng)
    total = cross_entropy(model.output_logits(states), targets)
    return reduce_terms(total, len(targets), reduction or model.config.loss_reduction)


def sample_negatives(rng: np.random.Generator, n_items: int, targets: np.ndarray,
                     rows: np.ndarray, batch: Sequence[np.ndarray], mode: str) -> np.ndarray:
    """One uniform negative per step.

    ``mode="sequence"`` excludes every item of the step's training sequence
    (and its target); ``mode="step"`` excludes only the target.  When the
    sequence covers the whole catalog the step rule is used for that row.
    """
    if mode not in ("sequence", "step"):
        raise ModelError(f"unknown negative sampling mode {mode!r}")
    u = rng.random(len(targets))
    out = np.empty(len(targets), dtype=np.int64)
    pools: dict[int, np.ndarray] = {}
    for i, (t, r) in enumerate(zip(targets.tolist(), rows.tolist())):
        if mode == "sequence":
            pool = pools.get(r)
            if pool is None:
                allowed = np.ones(n_items, dtype=bool)
                allowed[np.asarray(batch[r], dtype=np.int64)] = False
                pool = pools[r] = np.flatnonzero(allowed)
            if pool.size:
                out[i] = pool[min(int(u[i] * pool.size), pool.size - 1)]
                continue
        # step rule: uniform over the catalog without the target
        j = min(int(u[i] * (n_items - 1)), n_items - 2)
        out[i] = j + (j >= t)
    return out


def loss_bpr_shifted(model, batch: Sequence[np.ndarray], rng: np.random.Generator,
                     reduction: str | None = None) -> Tensor:
    states, targets, rows = model.next_item_states(batch, rng)
    negatives = sample_negatives(rng, model.n_items, targets, rows, batch,
                                 getattr(model.config, "negatives", "sequence"))
    pos = model.item_logits(states, targets)
    neg = model.item_logits(states, negatives)
    # log(1 - sigmoid(x)) == log_sigmoid(-x)
    total = -(ad.log_sigmoid(pos).sum() + ad.log_sigmoid(-neg).sum())
    return reduce_terms(total, len(targets), reduction or model.config.loss_reduction)


def cloze_masks(rng: np.random.Generator, lengths: Sequence[int], mask_prob: float,
                last_mask_prob: float) -> list[np.ndarray]:
    """Masked positions per sequence.

    With probability ``last_mask_prob`` only the last position is masked;
    otherwise each position independently with ``mask_prob``, and one random
    position when none was drawn.
    """
    masks = []
    for n in lengths:
        if rng.random() < last_mask_prob:
            m = np.zeros(n, dtype=bool)
            m[-1] = True
        else:
            m = rng.random(n) < mask_prob
            if not m.any():
                m[min(int(rng.random() * n), n - 1)] = True
        masks.append(m)
    return masks


def loss_cloze(model, batch: Sequence[np.ndarray], rng: np.random.Generator, mask_prob: float,
               last_mask_prob: float, reduction: str | None = None) -> Tensor:
    T = model.config.max_len
    seqs = [np.asarray(s, dtype=np.int64)[-T:] for s in batch if len(s) > 0]
    if not seqs:
        raise ModelError(f"{model.name}: empty batch")
    masks = cloze_masks(rng, [len(s) for s in seqs], mask_prob, last_mask_prob)
    inputs = [np.where(m, model.mask_token, s) for s, m in zip(seqs, masks)]
    items, valid = left_pad(inputs, T, model.pad)
    targets_full, _ = left_pad(seqs, T, model.pad)
    where, _ = left_pad([m.astype(np.int64) for m in masks], T, 0)
    where = where.astype(bool)
    H = model.masked_states(items, valid, rng)
    total = cross_entropy(model.output_logits(H[where]), targets_full[where])
    return reduce_terms(total, int(where.sum()), reduction or model.config.loss_reduction)
