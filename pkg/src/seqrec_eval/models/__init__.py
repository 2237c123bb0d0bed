"""Model zoo: neural sequence scorers, baselines and the architecture registry."""
from __future__ import annotations

import json
from pathlib import Path

from .. import checkpoint
from .base import ModelConfig, ModelError, SequenceModel, catalog_checksum
from .baselines import MarkovScorer, PopularityScorer, TableScorer
from .losses import loss_bpr_shifted, loss_cloze, loss_cross_entropy_prefixes
from .recurrent import GruConfig, GRUModel, NarmConfig, NARMModel
from .train import TrainingDiverged, TrainState, train
from .transformer import Bert4RecConfig, BERT4RecModel, SasRecConfig, SASRecModel

ARCHITECTURES: dict[str, type[SequenceModel]] = {
    "gru": GRUModel,
    "narm": NARMModel,
    "sasrec": SASRecModel,
    "bert4rec": BERT4RecModel,
}
BASELINES = ("popularity", "markov")


def create_model(arch: str, n_items: int, name: str | None = None, **overrides) -> SequenceModel:
    try:
        cls = ARCHITECTURES[arch.lower()]
    except KeyError:
        raise ModelError(f"unknown architecture {arch!r}; known: {sorted(ARCHITECTURES)}") from None
    config = cls.config_cls.from_dict({**overrides, "n_items": n_items})
    return cls(config, name=name)


def load_model(directory: str | Path, expected_catalog: str | None = None) -> SequenceModel:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    if expected_catalog is not None and manifest.get("catalog_checksum") != expected_catalog:
        raise ModelError(f"{d}: checkpoint was trained on a different catalog")
    cls = ARCHITECTURES[manifest["arch"]]
    model = cls(cls.config_cls.from_dict(manifest["config"]), name=manifest["name"])
    model.load_state_dict(checkpoint.load(d / "params.bin"))
    return model.eval()


__all__ = [
    "ARCHITECTURES", "BASELINES", "BERT4RecModel", "Bert4RecConfig", "GRUModel", "GruConfig",
    "MarkovScorer", "ModelConfig", "ModelError", "NARMModel", "NarmConfig", "PopularityScorer",
    "SASRecModel", "SasRecConfig", "SequenceModel", "TableScorer", "TrainState", "TrainingDiverged",
    "catalog_checksum", "create_model", "load_model", "loss_bpr_shifted", "loss_cloze",
    "loss_cross_entropy_prefixes", "train",
]
