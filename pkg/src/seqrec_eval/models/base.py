"""Shared model plumbing: configs, parameter handling, padding and scoring."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import checkpoint
from .. import rng as rngmod
from ..autodiff import Tensor, no_grad


class ModelError(ValueError):
    pass


@dataclass
class ModelConfig:
    """Hyperparameters shared by every neural model (toy defaults)."""

    n_items: int = 0
    embedding_size: int = 64
    hidden_size: int = 64
    max_len: int = 50
    dropout: float = 0.2
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 800
    patience: int = 20
    loss_reduction: str = "sum"  # "sum" or "mean" over loss terms
    seed: int = 0

    def validate(self) -> None:
        if self.n_items < 1:
            raise ModelError("n_items must be set to the catalog size")
        if self.max_len < 1:
            raise ModelError("max_len must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelError("dropout must be in [0, 1)")
        if self.loss_reduction not in ("sum", "mean"):
            raise ModelError("loss_reduction must be 'sum' or 'mean'")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ModelError(f"{cls.__name__}: unknown fields {sorted(unknown)}")
        return cls(**d)


def left_pad(seqs: Sequence[Sequence[int]], length: int, pad: int) -> tuple[np.ndarray, np.ndarray]:
    """Right-align the last ``length`` items of each sequence; returns (items, valid mask)."""
    B = len(seqs)
    items = np.full((B, length), pad, dtype=np.int64)
    mask = np.zeros((B, length), dtype=bool)
    for b, s in enumerate(seqs):
        s = list(s)[-length:]
        if s:
            items[b, length - len(s):] = s
            mask[b, length - len(s):] = True
    return items, mask


class SequenceModel:
    """Base for neural scorers; subclasses fill ``self.params`` and define the forward pass."""

    arch = "base"
    config_cls = ModelConfig

    def __init__(self, config: ModelConfig, name: str | None = None):
        config.validate()
        self.config = config
        self.name = name or self.arch
        self.n_items = config.n_items
        self.pad = config.n_items
        self.training = False
        self.params: dict[str, Tensor] = {}
        self.build(rngmod.stream(config.seed, rngmod.INIT))
        for k, p in self.params.items():
            p.name = k

    def build(self, rng: np.random.Generator) -> None:
        raise NotImplementedError

    # parameters
    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise ModelError(f"{self.name}: checkpoint parameters do not match the model")
        for k, p in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ModelError(f"{self.name}: parameter {k} has shape {arr.shape}, expected {p.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def train(self, flag: bool = True) -> "SequenceModel":
        self.training = flag
        return self

    def eval(self) -> "SequenceModel":
        return self.train(False)

    # scoring
    def prefix_logits(self, prefixes: Sequence[Sequence[int]], rng=None) -> Tensor:
        """Catalog-wide logits for the next item after each prefix, shape (B, n_items)."""
        raise NotImplementedError

    def score_all(self, prefixes: Sequence[Sequence[int]], batch_size: int = 256) -> np.ndarray:
        for p in prefixes:
            if len(p) == 0:
                raise ModelError(f"{self.name}: empty prefix (cold-start users are not supported)")
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                rows = [self.prefix_logits(prefixes[i:i + batch_size]).data
                        for i in range(0, len(prefixes), batch_size)]
        finally:
            self.train(was_training)
        return np.concatenate(rows, axis=0) if rows else np.zeros((0, self.n_items))

    def score_instances(self, instances) -> np.ndarray:
        return self.score_all([inst.prefix for inst in instances])

    def score(self, prefix: Sequence[int], candidates) -> np.ndarray:
        return self.score_all([prefix])[0][np.asarray(candidates, dtype=np.int64)]

    def loss(self, batch: Sequence[np.ndarray], rng: np.random.Generator) -> Tensor:
        raise NotImplementedError

    # persistence
    def manifest(self, catalog_checksum: str | None = None) -> dict:
        return {"arch": self.arch, "name": self.name, "config": self.config.to_dict(),
                "catalog_checksum": catalog_checksum, "parameters": self.parameter_count()}

    def save(self, directory: str | Path, catalog_checksum: str | None = None) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        checkpoint.save(d / "params.bin", self.state_dict())
        (d / "manifest.json").write_text(
            json.dumps(self.manifest(catalog_checksum), indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
        return d


def catalog_checksum(catalog: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(catalog).encode("utf-8")).hexdigest()


def reduce_terms(total: Tensor, n_terms: int, reduction: str) -> Tensor:
    if reduction == "mean":
        return total * (1.0 / max(n_terms, 1))
    return total
