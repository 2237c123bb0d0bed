"""Experiment orchestration: configuration, cached pipeline stages and reports."""
from .config import ConfigError, DatasetConfig, ExperimentConfig, ModelSection, stable_hash
from .pipeline import (StageError, analyze, build_scorers, prepare_dataset, run_experiment)
from .report import (RankingReport, StrategyBlock, SweepPoint, check_taus, emit_reports,
                     long_csv, runs_csv, sweep_csv, text_table)

__all__ = [
    "ConfigError", "DatasetConfig", "ExperimentConfig", "ModelSection", "RankingReport",
    "StageError", "StrategyBlock", "SweepPoint", "analyze", "build_scorers", "check_taus",
    "emit_reports", "long_csv", "prepare_dataset", "run_experiment", "runs_csv", "stable_hash",
    "sweep_csv", "text_table",
]
