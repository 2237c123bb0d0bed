"""Experiment configuration: an INI file with ``[experiment]``, ``[dataset]`` and
one ``[model:NAME]`` section per model."""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..metrics import MetricError, MetricSpec
from ..models import ARCHITECTURES, BASELINES, ModelError
from ..targetset import FULL, STRATEGIES


class ConfigError(ValueError):
    pass


def _split_list(text: str) -> list[str]:
    return [t.strip() for t in text.replace("\n", ",").split(",") if t.strip()]


def _bool(text: str, key: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}")


def _int(text: str, key: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {text!r}") from None


def _scalar(text: str):
    """Model hyperparameters: int, then float, then bool, else string."""
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    return text


def stable_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class DatasetConfig:
    source: str = "file"  # "file" or "cycle"
    path: str = ""
    format: str = "tsv"
    min_count: int = 5
    skip_filtering: bool = False
    one_pass: bool = False
    popularity_source: str = "train"
    cycle_items: int = 20
    cycle_users: int = 200
    cycle_length: int = 12

    def validate(self, base: Path) -> None:
        if self.source not in ("file", "cycle"):
            raise ConfigError(f"dataset.source must be 'file' or 'cycle', got {self.source!r}")
        if self.source == "file":
            if not self.path:
                raise ConfigError("dataset.path is required for source = file")
            if not self.resolved_path(base).exists():
                raise ConfigError(f"dataset.path {self.path!r} does not exist")
        if self.popularity_source not in ("train", "all"):
            raise ConfigError("dataset.popularity_source must be 'train' or 'all'")
        if self.min_count < 1:
            raise ConfigError("dataset.min_count must be >= 1")

    def resolved_path(self, base: Path) -> Path:
        p = Path(self.path)
        return p if p.is_absolute() else base / p


@dataclass
class ModelSection:
    name: str
    arch: str
    params: dict = field(default_factory=dict)

    @property
    def trainable(self) -> bool:
        return self.arch in ARCHITECTURES


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    output_dir: str = "runs"
    seed: int = 0
    runs: int = 20
    metrics: list = field(default_factory=lambda: ["HR@10", "NDCG@10"])
    strategies: list = field(default_factory=lambda: list(STRATEGIES))
    eta: int = 100
    sweep: list = field(default_factory=list)  # sampled strategies to sweep over eta
    sweep_etas: list = field(default_factory=list)  # empty: default grid
    sweep_metric: str = "HR@10"
    validation: str = "full"  # target-set strategy used for model selection
    validation_eta: int = 100
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    models: list = field(default_factory=list)
    base_dir: str = "."

    # ------------------------------------------------------------ parsing
    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        return cls.from_text(path.read_text(encoding="utf-8"), base_dir=path.parent)

    @classmethod
    def from_text(cls, text: str, base_dir: str | Path = ".") -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from None
        cfg = cls(base_dir=str(base_dir))
        known = {s for s in cp.sections() if s in ("experiment", "dataset") or s.startswith("model:")}
        unknown = sorted(set(cp.sections()) - known)
        if unknown:
            raise ConfigError(f"unknown config sections: {unknown}")
        if cp.has_section("experiment"):
            cfg._apply_experiment(dict(cp["experiment"]))
        if cp.has_section("dataset"):
            cfg._apply_dataset(dict(cp["dataset"]))
        for sec in cp.sections():
            if sec.startswith("model:"):
                body = dict(cp[sec])
                name = sec.split(":", 1)[1].strip()
                arch = body.pop("arch", name).strip().lower()
                cfg.models.append(ModelSection(name, arch, {k: _scalar(v) for k, v in body.items()}))
        cfg.validate()
        return cfg

    def _apply_experiment(self, sec: dict) -> None:
        for key, raw in sec.items():
            if key in ("name", "output_dir", "sweep_metric", "validation"):
                setattr(self, key, raw.strip())
            elif key in ("seed", "runs", "eta", "validation_eta"):
                setattr(self, key, _int(raw, f"experiment.{key}"))
            elif key in ("metrics", "strategies", "sweep"):
                setattr(self, key, _split_list(raw))
            elif key == "sweep_etas":
                self.sweep_etas = [e.upper() if e.upper() == FULL else _int(e, "experiment.sweep_etas")
                                   for e in _split_list(raw)]
            else:
                raise ConfigError(f"unknown key experiment.{key}")

    def _apply_dataset(self, sec: dict) -> None:
        d = self.dataset
        for key, raw in sec.items():
            if key in ("source", "path", "format", "popularity_source"):
                setattr(d, key, raw.strip())
            elif key in ("min_count", "cycle_items", "cycle_users", "cycle_length"):
                setattr(d, key, _int(raw, f"dataset.{key}"))
            elif key in ("skip_filtering", "one_pass"):
                setattr(d, key, _bool(raw, f"dataset.{key}"))
            else:
                raise ConfigError(f"unknown key dataset.{key}")

    def override(self, dotted: str, value: str) -> None:
        """Apply a ``section.key=value`` override, e.g. from the command line."""
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        if section == "experiment":
            self._apply_experiment({key: value})
        elif section == "dataset":
            self._apply_dataset({key: value})
        elif section.startswith("model:"):
            name = section.split(":", 1)[1]
            match = [m for m in self.models if m.name == name]
            if not match:
                raise ConfigError(f"no model named {name!r}")
            if key == "arch":
                match[0].arch = value.lower()
            else:
                match[0].params[key] = _scalar(value)
        else:
            raise ConfigError(f"unknown config section {section!r}")
        self.validate()

    # ------------------------------------------------------------ checks
    def validate(self) -> None:
        if self.runs < 1:
            raise ConfigError("experiment.runs must be >= 1")
        try:
            metrics = [MetricSpec.parse(m) for m in self.metrics]
            MetricSpec.parse(self.sweep_metric)
        except MetricError as exc:
            raise ConfigError(str(exc)) from None
        if not metrics:
            raise ConfigError("experiment.metrics is empty")
        for s in self.strategies + self.sweep + [self.validation]:
            if s not in STRATEGIES:
                raise ConfigError(f"unknown strategy {s!r}; use one of {STRATEGIES}")
        if not self.strategies:
            raise ConfigError("experiment.strategies is empty")
        if "full" in self.sweep:
            raise ConfigError("experiment.sweep takes sampled strategies only")
        if any(s != "full" for s in self.strategies) and self.eta < 1:
            raise ConfigError("experiment.eta must be >= 1 for sampled strategies")
        for e in self.sweep_etas:
            if e != FULL and int(e) < 1:
                raise ConfigError("experiment.sweep_etas values must be positive")
        names = [m.name for m in self.models]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate model names")
        for m in self.models:
            if m.arch not in ARCHITECTURES and m.arch not in BASELINES:
                raise ConfigError(f"model {m.name!r}: architecture {m.arch!r} is not registered "
                                  f"(known: {sorted(ARCHITECTURES) + list(BASELINES)})")
            if m.trainable:
                cls = ARCHITECTURES[m.arch]
                try:
                    cls.config_cls.from_dict({**m.params, "n_items": 1}).validate()
                except (ModelError, TypeError) as exc:
                    raise ConfigError(f"model {m.name!r}: {exc}") from None
        self.dataset.validate(Path(self.base_dir))

    # ------------------------------------------------------------ derived
    @property
    def metric_specs(self) -> list[MetricSpec]:
        return [MetricSpec.parse(m) for m in self.metrics]

    @property
    def output_path(self) -> Path:
        p = Path(self.output_dir)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def dataset_key(self) -> dict:
        d = asdict(self.dataset)
        if self.dataset.source == "file":
            raw = self.dataset.resolved_path(Path(self.base_dir))
            d["path"] = raw.name
            d["content_sha256"] = _file_sha256(raw)
        return d

    def config_hash(self) -> str:
        """Hash of everything that affects results (not where they are written)."""
        body = self.to_dict()
        body.pop("output_dir")
        body["dataset"] = self.dataset_key()
        return stable_hash(body)


def _file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
