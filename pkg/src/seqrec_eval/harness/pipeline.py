"""Pipeline stages: preprocess -> train -> evaluate -> analyze, with config-hash caching.

Layout under the output directory::

    dataset/<hash>/            dataset bundle
    models/<name>/<hash>/      checkpoint bundle, manifest.json, train.json
    evaluation/<hash>/         report.json, results.csv, runs.csv, table.txt, sweep.csv

Each stage hash covers only the inputs the stage depends on, so changing one
model's section retrains that model alone.
"""
from __future__ import annotations

import json
import logging
import math
import statistics
import warnings
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

from .. import __version__
from ..dataset import (ColumnFormat, DatasetError, SequenceDataset, ingest, load_dataset,
                       popularity_counts, preprocess, save_dataset, split)
from ..evaluation import compute_ranks, mean_of, metric_values
from ..metrics import MetricSpec
from ..models import (MarkovScorer, PopularityScorer, TrainingDiverged, catalog_checksum,
                      create_model, load_model, train)
from ..ranking import RankTieWarning, default_eta_grid, rank_models, sample_size_sweep
from ..synthetic import cycle_dataset
from ..targetset import FULL, TargetSetSpec
from .config import ConfigError, ExperimentConfig, ModelSection, stable_hash
from .report import RankingReport, StrategyBlock, SweepPoint, agreement, emit_reports

log = logging.getLogger(__name__)

SEED_POLICY = ("sampling stream = PCG64(base_seed, purpose=1, run, instance position); "
               "training stream = PCG64(model seed, purpose=2, epoch); "
               "initialisation = PCG64(model seed, purpose=3)")


class StageError(RuntimeError):
    """A pipeline stage failed; artifacts written so far are kept."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def _short(h: str) -> str:
    return h[:16]


# ---------------------------------------------------------------- stage: preprocess

def dataset_hash(cfg: ExperimentConfig) -> str:
    return stable_hash({"dataset": cfg.dataset_key(), "version": 1})


def prepare_dataset(cfg: ExperimentConfig) -> tuple[SequenceDataset, Path]:
    out = cfg.output_path / "dataset" / _short(dataset_hash(cfg))
    if (out / "metadata.json").exists():
        log.info("dataset: cached at %s", out)
        return load_dataset(out), out
    d = cfg.dataset
    try:
        if d.source == "cycle":
            ds = cycle_dataset(d.cycle_items, d.cycle_users, d.cycle_length)
        else:
            fmt = ColumnFormat.preset(d.format)
            log_ = ingest(d.resolved_path(Path(cfg.base_dir)), fmt)
            ds = preprocess(log_, min_count=d.min_count, skip_filtering=d.skip_filtering,
                            one_pass=d.one_pass)
    except (DatasetError, OSError) as exc:
        raise StageError("preprocess", str(exc)) from exc
    save_dataset(ds, out)
    log.info("dataset: %s", ds.stats())
    return ds, out


# ---------------------------------------------------------------- stage: train

def _model_params(cfg: ExperimentConfig, m: ModelSection) -> dict:
    return {"seed": cfg.seed, **m.params}


def model_hash(cfg: ExperimentConfig, m: ModelSection) -> str:
    return stable_hash({"dataset": dataset_hash(cfg), "name": m.name, "arch": m.arch,
                        "params": _model_params(cfg, m), "validation": cfg.validation,
                        "validation_eta": cfg.validation_eta,
                        "popularity_source": cfg.dataset.popularity_source})


def build_scorers(cfg: ExperimentConfig, ds: SequenceDataset, only: Sequence[str] | None = None):
    """Train (or load cached) models and construct baselines, in config order."""
    sp = split(ds)
    counts = popularity_counts(ds, cfg.dataset.popularity_source)
    checksum = catalog_checksum(ds.catalog)
    scorers, states = [], {}
    for m in cfg.models:
        if only and m.name not in only:
            continue
        if m.arch == "popularity":
            scorers.append(PopularityScorer(counts, name=m.name))
            continue
        if m.arch == "markov":
            scorers.append(MarkovScorer(sp.train_sequences, ds.n_items, name=m.name))
            continue
        out = cfg.output_path / "models" / m.name / _short(model_hash(cfg, m))
        if (out / "params.bin").exists():
            log.info("train %s: cached at %s", m.name, out)
            scorers.append(load_model(out, expected_catalog=checksum))
            states[m.name] = json.loads((out / "train.json").read_text(encoding="utf-8"))
            continue
        model = create_model(m.arch, ds.n_items, name=m.name, **_model_params(cfg, m))
        val = TargetSetSpec(cfg.validation, None if cfg.validation == "full" else cfg.validation_eta,
                            cfg.seed)
        try:
            state = train(model, sp, validation=val, metrics=[MetricSpec("HR", 1)], counts=counts)
        except TrainingDiverged as exc:
            model.save(out / "diverged", checksum)
            raise StageError("train", f"{exc} (last finite checkpoint in {out / 'diverged'})") from exc
        model.save(out, checksum)
        summary = state.summary()
        (out / "train.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                        encoding="utf-8")
        states[m.name] = summary
        scorers.append(model)
    return scorers, states


# ---------------------------------------------------------------- stage: analyze

def analyze(scorers: Sequence, instances, n_items: int, *, metrics: Sequence[MetricSpec],
            strategies: Sequence[str], eta: int = 100, runs: int = 20, seed: int = 0,
            counts=None, sweep: Sequence[str] = (), sweep_etas: Sequence = (),
            sweep_metric: MetricSpec = MetricSpec("HR", 10), dataset: str = "dataset",
            provenance: dict | None = None, workers: int | None = None) -> RankingReport:
    """Evaluate fixed scorers under every strategy and assemble the report.

    Full evaluation is a single run; each sampled strategy gets ``runs`` draws.
    Tau and consistency are reported against the full ranking of the same
    metric when ``full`` is among the strategies.
    """
    names = [s.name for s in scorers]
    specs = [TargetSetSpec(s, None if s == "full" else eta, seed) for s in strategies]
    jobs = [(sp, r) for sp in specs for r in range(1 if sp.strategy == "full" else runs)]
    table = compute_ranks(scorers, instances, n_items, jobs, counts, workers=workers)
    report = RankingReport(dataset, names, provenance=dict(provenance or {}))
    for metric in metrics:
        full_ranks = None
        for sp in specs:
            n_runs = 1 if sp.strategy == "full" else runs
            run_vals = {n: [mean_of(metric_values(table.ranks[n][(sp.label(), r)], metric))
                            for r in range(n_runs)] for n in names}
            means = {n: math.fsum(v) / len(v) for n, v in run_vals.items()}
            std = {n: float(statistics.pstdev(v)) for n, v in run_vals.items()}
            ranks = _rank(means, metric, sp)
            block = StrategyBlock(sp.strategy, sp.eta, str(metric), means, std, ranks, run_vals,
                                  skipped=int(table.skipped[(sp.label(), 0)]))
            if sp.strategy == "full":
                full_ranks = ranks
            report.blocks.append(block)
        if full_ranks is not None and len(names) >= 2:
            for b in report.blocks:
                if b.metric == str(metric) and b.strategy != "full":
                    b.tau, b.consistent = agreement(b.ranks, full_ranks)
    for strategy in sweep:
        grid = list(sweep_etas) or default_eta_grid(n_items)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            res = sample_size_sweep(scorers, instances, n_items, strategy, grid, sweep_metric,
                                    runs, counts, seed, workers=workers)
        for w in caught:
            log.warning("sweep %s: %s", strategy, w.message)
        for e, ranking in res.rankings.items():
            t = res.taus[e].tau_exact
            report.sweep.append(SweepPoint(
                strategy, e if e == FULL else int(e), str(sweep_metric), ranking.values(),
                ranking.ranks(), f"{t.numerator}/{t.denominator}" if t.denominator != 1
                else str(t.numerator), ranking.ranks() == res.full.ranks()))
    return report


def _rank(means: dict, metric, spec) -> dict:
    if len(means) == 1:
        return {n: 1 for n in means}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RankTieWarning)
        ranking = rank_models(means, metric, spec)
    for w in caught:
        log.warning("%s %s: %s", spec.label(), metric, w.message)
    return ranking.ranks()


# ---------------------------------------------------------------- orchestration

def run_experiment(cfg: ExperimentConfig, sweep: bool = True, evaluate: bool = True,
                   formats=("json", "csv", "text", "sweep")) -> tuple[RankingReport, Path]:
    """Run every stage, reusing cached ones, and emit the reports."""
    if not cfg.models:
        raise ConfigError("no models configured")
    ds, ds_dir = prepare_dataset(cfg)
    scorers, _ = build_scorers(cfg, ds)
    eval_key = {"config": cfg.config_hash(), "evaluate": evaluate, "sweep": sweep}
    out = cfg.output_path / "evaluation" / _short(stable_hash(eval_key))
    cached = out / "report.json"
    if cached.exists():
        log.info("evaluate: cached at %s", out)
        report = RankingReport.from_json(cached.read_text(encoding="utf-8"))
        emit_reports(report, out, formats)
        return report, out
    try:
        sp = split(ds)
    except DatasetError as exc:
        raise StageError("evaluate", str(exc)) from exc
    counts = popularity_counts(ds, cfg.dataset.popularity_source)
    provenance = {"config_hash": cfg.config_hash(), "base_seed": cfg.seed, "runs": cfg.runs,
                  "seed_policy": SEED_POLICY, "code_version": __version__,
                  "dataset_hash": dataset_hash(cfg), "n_items": ds.n_items,
                  "n_instances": len(sp.test_instances),
                  "models": {m.name: {"arch": m.arch, "params": _model_params(cfg, m)}
                             for m in cfg.models}}
    try:
        report = analyze(
            scorers, sp.test_instances, ds.n_items, metrics=cfg.metric_specs if evaluate else [],
            strategies=cfg.strategies if evaluate else [], eta=cfg.eta, runs=cfg.runs,
            seed=cfg.seed, counts=counts, sweep=cfg.sweep if sweep else (),
            sweep_etas=cfg.sweep_etas, sweep_metric=MetricSpec.parse(cfg.sweep_metric),
            dataset=cfg.name, provenance=provenance)
    except (ValueError, RuntimeError) as exc:
        raise StageError("evaluate", str(exc)) from exc
    try:
        emit_reports(report, out, formats)
    except OSError as exc:
        raise StageError("report", str(exc)) from exc
    return report, out


def config_summary(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.config_hash(), "dataset_hash": dataset_hash(cfg),
            "models": {m.name: model_hash(cfg, m) for m in cfg.models},
            "dataset": asdict(cfg.dataset)}
