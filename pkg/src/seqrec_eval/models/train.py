"""Mini-batch Adam training with validation-based model selection."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import rng as rngmod
from ..autodiff import Adam, AdamState
from ..dataset import LeaveOneOutSplit
from ..evaluation import evaluate
from ..metrics import MetricSpec
from ..targetset import TargetSetSpec

log = logging.getLogger(__name__)

SELECTION_METRIC = MetricSpec("HR", 10)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, state: "TrainState"):
        super().__init__(message)
        self.state = state


@dataclass
class TrainState:
    epoch: int = 0
    best_validation: float = -math.inf
    best_epoch: int = 0
    best_params: dict = field(default_factory=dict)
    last_finite_params: dict = field(default_factory=dict)
    optimizer: AdamState | None = None
    history: list = field(default_factory=list)
    stop_reason: str = ""

    def summary(self) -> dict:
        return {"epoch": self.epoch, "best_validation": self.best_validation,
                "best_epoch": self.best_epoch, "stop_reason": self.stop_reason,
                "history": self.history}


def _validate(model, split: LeaveOneOutSplit, metrics, spec, counts) -> dict[str, float]:
    res = evaluate([model], split.validation_instances, split.n_items, spec, metrics,
                   counts=counts, workers=1)
    return {k: v[0] for k, v in res[model.name].items()}


def train(model, split: LeaveOneOutSplit, epochs: int | None = None,
          validation: TargetSetSpec | None = None, metrics: Sequence[MetricSpec] = (),
          patience: int | None = None, counts=None) -> TrainState:
    """Train ``model`` in place and leave it holding the best validation checkpoint.

    The selection metric is validation HR@10 (full catalog unless
    ``validation`` says otherwise), checked once before training and after
    every epoch.  Training stops after ``epochs`` (default: the config's
    ``max_epochs``) or ``patience`` epochs without strict improvement.
    """
    cfg = model.config
    epochs = cfg.max_epochs if epochs is None else epochs
    patience = cfg.patience if patience is None else patience
    validation = validation or TargetSetSpec("full", seed=cfg.seed)
    tracked = [SELECTION_METRIC] + [m for m in metrics if m != SELECTION_METRIC]
    params = model.parameters()
    opt = Adam(params, lr=cfg.learning_rate, names=list(model.params))
    state = TrainState(optimizer=opt.state)
    train_seqs = [s for s in split.train_sequences if len(s) >= 2]

    scores = _validate(model, split, tracked, validation, counts)
    state.best_validation = scores[str(SELECTION_METRIC)]
    state.best_params = model.state_dict()
    state.last_finite_params = state.best_params
    state.history.append({"epoch": 0, "loss": None, **scores})
    stale = 0
    state.stop_reason = "max_epochs"
    for epoch in range(1, epochs + 1):
        gen = rngmod.stream(cfg.seed, rngmod.TRAINING, epoch)
        order = np.argsort(gen.random(len(train_seqs)), kind="stable")
        model.train()
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_seqs[i] for i in order[start:start + cfg.batch_size]]
            opt.zero_grad()
            loss = model.loss(batch, gen)
            value = loss.item()
            if not math.isfinite(value):
                model.load_state_dict(state.last_finite_params)
                state.stop_reason = "diverged"
                raise TrainingDiverged(f"{model.name}: non-finite loss in epoch {epoch}", state)
            loss.backward()
            try:
                opt.step()
            except FloatingPointError as exc:
                model.load_state_dict(state.last_finite_params)
                state.stop_reason = "diverged"
                raise TrainingDiverged(f"{model.name}: {exc}", state) from exc
            total += value
        model.eval()
        state.epoch = epoch
        state.last_finite_params = model.state_dict()
        scores = _validate(model, split, tracked, validation, counts)
        state.history.append({"epoch": epoch, "loss": total, **scores})
        log.info("%s epoch %d loss %.4f val %s", model.name, epoch, total, scores)
        if scores[str(SELECTION_METRIC)] > state.best_validation:
            state.best_validation = scores[str(SELECTION_METRIC)]
            state.best_epoch = epoch
            state.best_params = state.last_finite_params
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                state.stop_reason = "patience"
                break
    model.load_state_dict(state.best_params)
    model.eval()
    return state
