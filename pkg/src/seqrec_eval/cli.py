"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 stage failure.  The number of
evaluation workers comes from the ``SEQREC_EVAL_WORKERS`` environment variable.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path

from .dataset import ColumnFormat, DatasetError, ingest, preprocess, save_dataset
from .harness import (ConfigError, ExperimentConfig, RankingReport, StageError, build_scorers,
                      check_taus, emit_reports, prepare_dataset, run_experiment, text_table)
from .harness.report import FORMATS, agreement
from .metrics import MetricError

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are configuration errors
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="experiment INI file")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config field, e.g. experiment.runs=5 or model:gru.max_epochs=10")
    p.add_argument("--seed", type=int, help="experiment.seed")
    p.add_argument("--runs", type=int, help="experiment.runs")
    p.add_argument("--eta", type=int, help="experiment.eta")
    p.add_argument("--output-dir", help="experiment.output_dir")
    p.add_argument("--strategies", help="experiment.strategies, comma separated")
    p.add_argument("--metrics", help="experiment.metrics, comma separated")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seqrec-eval",
                     description="Full-catalog versus sampled evaluation of sequential recommenders.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("preprocess", help="ingest a raw log and write a dataset bundle")
    p.add_argument("--config", help="take dataset settings from this INI file")
    p.add_argument("--input", help="raw interaction file (.gz allowed)")
    p.add_argument("--format", default="tsv", help="tsv, csv, ml1m or ml20m")
    p.add_argument("--out", help="bundle directory (default: cached location from --config)")
    p.add_argument("--min-count", type=int, default=5)
    p.add_argument("--skip-filtering", action="store_true")
    p.add_argument("--one-pass", action="store_true")
    p.add_argument("--set", action="append", default=[])

    p = sub.add_parser("train", help="train (or load cached) models")
    _add_config_flags(p)
    p.add_argument("--model", action="append", default=[], help="train only these models")

    p = sub.add_parser("evaluate", help="evaluate all strategies and write reports")
    _add_config_flags(p)

    p = sub.add_parser("sweep", help="rank models across negative-sample sizes")
    _add_config_flags(p)
    p.add_argument("--strategy", action="append", default=[], help="uniform or popularity")
    p.add_argument("--etas", help="comma separated sizes; FULL for the full catalog")

    p = sub.add_parser("compare", help="Kendall Tau-a and consistency between rankings")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--report", help="report.json; every strategy is compared with full")
    g.add_argument("--ranks", nargs=2, metavar="NAME=RANK,...",
                   help="two rank vectors, e.g. A=1,B=2,C=3 A=3,B=2,C=1")

    p = sub.add_parser("report", help="re-emit a stored report in other formats")
    p.add_argument("report", help="report.json")
    p.add_argument("--out", help="output directory (default: alongside the report)")
    p.add_argument("--formats", default=",".join(FORMATS))
    return parser


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set {item!r}: expected SECTION.KEY=VALUE")
        cfg.override(key.strip(), value.strip())
    for flag, key in (("seed", "seed"), ("runs", "runs"), ("eta", "eta"),
                      ("output_dir", "output_dir"), ("strategies", "strategies"),
                      ("metrics", "metrics")):
        value = getattr(args, flag, None)
        if value is not None:
            cfg.override(f"experiment.{key}", str(value))
    return cfg


def _parse_ranks(text: str) -> dict[str, int]:
    out = {}
    for part in text.split(","):
        name, sep, rank = part.partition("=")
        if not sep:
            raise ConfigError(f"rank vector entry {part!r}: expected NAME=RANK")
        try:
            out[name.strip()] = int(rank)
        except ValueError:
            raise ConfigError(f"rank vector entry {part!r}: rank is not an integer") from None
    return out


def cmd_preprocess(args) -> int:
    if args.config:
        cfg = ExperimentConfig.from_file(args.config)
        for item in args.set:
            key, _, value = item.partition("=")
            cfg.override(key.strip(), value.strip())
        ds, out = prepare_dataset(cfg)
        if args.out:
            out = save_dataset(ds, args.out)
    else:
        if not args.input or not args.out:
            raise ConfigError("preprocess needs --config, or both --input and --out")
        if not Path(args.input).exists():
            raise ConfigError(f"input file {args.input} not found")
        try:
            fmt = ColumnFormat.preset(args.format)
        except DatasetError as exc:
            raise ConfigError(str(exc)) from None
        try:
            ds = preprocess(ingest(args.input, fmt), min_count=args.min_count,
                            skip_filtering=args.skip_filtering, one_pass=args.one_pass)
        except DatasetError as exc:
            raise StageError("preprocess", str(exc)) from exc
        out = save_dataset(ds, args.out)
    print(json.dumps({"bundle": str(out), **ds.stats()}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    unknown = set(args.model) - {m.name for m in cfg.models}
    if unknown:
        raise ConfigError(f"unknown models {sorted(unknown)}")
    ds, _ = prepare_dataset(cfg)
    _, states = build_scorers(cfg, ds, only=args.model or None)
    for name, s in states.items():
        print(f"{name}: best validation HR@10 {s['best_validation']:.4f} at epoch "
              f"{s['best_epoch']} ({s['stop_reason'] or 'cached'})")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    report, out = run_experiment(cfg, sweep=False)
    sys.stdout.write(text_table(report))
    print(f"reports written to {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    if args.strategy:
        cfg.override("experiment.sweep", ",".join(args.strategy))
    if args.etas:
        cfg.override("experiment.sweep_etas", args.etas)
    if not cfg.sweep:
        raise ConfigError("no sweep strategy: set experiment.sweep or pass --strategy")
    report, out = run_experiment(cfg, evaluate=False, sweep=True)
    for p in report.sweep:
        order = " > ".join(sorted(p.ranks, key=p.ranks.get))
        print(f"{p.strategy:<10} eta={str(p.eta):<6} tau={p.tau:<6} {order}")
    print(f"reports written to {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    if args.ranks:
        a, b = (_parse_ranks(t) for t in args.ranks)
        try:
            tau, cons = agreement(a, b)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        print(f"tau = {tau} ({float(Fraction(tau)):+.4f}); consistent = {str(cons).lower()}")
        return EXIT_OK
    report = _read_report(args.report)
    check_taus(report)
    full = {b.metric: b.ranks for b in report.blocks if b.strategy == "full"}
    if not full:
        print("no full ranking in this report; nothing to compare against")
        return EXIT_OK
    for b in report.blocks:
        if b.strategy != "full" and b.metric in full:
            print(f"{b.label:<16} {b.metric:<8} tau = {b.tau:<6} consistent = "
                  f"{str(b.consistent).lower()}")
    return EXIT_OK


def _read_report(path: str) -> RankingReport:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"report {p} not found")
    try:
        return RankingReport.from_json(p.read_text(encoding="utf-8"))
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{p}: not a report ({exc})") from None


def cmd_report(args) -> int:
    report = _read_report(args.report)
    formats = [f.strip() for f in args.formats.split(",") if f.strip()]
    bad = set(formats) - set(FORMATS)
    if bad:
        raise ConfigError(f"unknown formats {sorted(bad)}; choose from {FORMATS}")
    out = Path(args.out) if args.out else Path(args.report).parent
    try:
        written = emit_reports(report, out, formats)
    except OSError as exc:
        raise StageError("report", str(exc)) from exc
    for name in sorted(written):
        print(written[name])
    return EXIT_OK


COMMANDS = {"preprocess": cmd_preprocess, "train": cmd_train, "evaluate": cmd_evaluate,
            "sweep": cmd_sweep, "compare": cmd_compare, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, MetricError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except Exception as exc:  # anything else is a failure of the running stage
        print(f"stage failure: [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
