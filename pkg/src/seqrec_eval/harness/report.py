"""RankingReport and its emitters (JSON, long CSV, run-level CSV, text table, sweep CSV)."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

from ..ranking import ModelRanking, consistency, kendall_tau_a

GLYPH = "■"
FORMATS = ("json", "csv", "text", "sweep")


@dataclass
class StrategyBlock:
    """One (strategy, metric) comparison: means, ranks and agreement with full."""

    strategy: str  # "full" or "uniform" / "popularity"
    eta: int | None
    metric: str
    means: dict
    std: dict
    ranks: dict
    runs: dict  # model -> per-run means
    tau: str | None = None  # exact fraction as text, e.g. "-2/3"
    consistent: bool | None = None
    skipped: int = 0

    @property
    def label(self) -> str:
        return self.strategy if self.eta is None else f"{self.strategy}@{self.eta}"

    @property
    def tau_value(self) -> float | None:
        return None if self.tau is None else float(Fraction(self.tau))


@dataclass
class SweepPoint:
    strategy: str
    eta: object  # int or "FULL"
    metric: str
    means: dict
    ranks: dict
    tau: str
    consistent: bool


@dataclass
class RankingReport:
    dataset: str
    models: list
    blocks: list = field(default_factory=list)
    sweep: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def block(self, strategy: str, metric: str) -> StrategyBlock:
        for b in self.blocks:
            if b.strategy == strategy and b.metric == metric:
                return b
        raise KeyError((strategy, metric))

    def to_dict(self) -> dict:
        return {"dataset": self.dataset, "models": list(self.models),
                "blocks": [asdict(b) for b in self.blocks],
                "sweep": [asdict(s) for s in self.sweep],
                "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d: dict) -> "RankingReport":
        return cls(d["dataset"], list(d["models"]),
                   [StrategyBlock(**b) for b in d["blocks"]],
                   [SweepPoint(**s) for s in d["sweep"]], d["provenance"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RankingReport":
        return cls.from_dict(json.loads(text))


def agreement(ranks: dict, full_ranks: dict) -> tuple[str, bool]:
    """Exact Tau-a (as a fraction string) and the consistency verdict."""
    a, b = ModelRanking.from_ranks(ranks), ModelRanking.from_ranks(full_ranks)
    tau = kendall_tau_a(a, b).tau_exact
    return f"{tau.numerator}/{tau.denominator}" if tau.denominator != 1 else str(tau.numerator), \
        consistency(a, b).consistent


# ---------------------------------------------------------------- emitters

def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(x) -> str:
    return "" if x is None else repr(float(x))


def long_csv(report: RankingReport) -> str:
    rows = []
    for b in report.blocks:
        for m in report.models:
            rows.append([report.dataset, b.strategy, "" if b.eta is None else b.eta, b.metric, m,
                         _num(b.means[m]), _num(b.std[m]), b.ranks[m], b.tau or "",
                         _num(b.tau_value), "" if b.consistent is None else str(b.consistent).lower()])
    return _csv_text(["dataset", "strategy", "eta", "metric", "model", "mean", "std", "rank",
                      "tau_vs_full", "tau_float", "consistent"], rows)


def runs_csv(report: RankingReport) -> str:
    rows = []
    for b in report.blocks:
        for m in report.models:
            for r, v in enumerate(b.runs[m]):
                rows.append([b.strategy, "" if b.eta is None else b.eta, b.metric, m, r, _num(v)])
    return _csv_text(["strategy", "eta", "metric", "model", "run", "value"], rows)


def sweep_csv(report: RankingReport) -> str:
    rows = []
    for p in report.sweep:
        for m in report.models:
            rows.append([p.strategy, p.eta, p.metric, m, p.ranks[m], _num(p.means[m]), p.tau,
                         str(p.consistent).lower()])
    return _csv_text(["strategy", "eta", "metric", "model", "rank", "mean", "tau_vs_full",
                      "consistent"], rows)


def _mark(value: float, rank: int) -> str:
    """Best value in bold (``**x**``), second best underlined (``_x_``)."""
    text = f"{value:.3f}"
    return f"**{text}**" if rank == 1 else f"_{text}_" if rank == 2 else text


def text_table(report: RankingReport) -> str:
    """One table per metric: full, popularity and uniform columns with rank glyphs
    (one glyph per rank position, fewer is better) and tau against full."""
    order = {"full": 0, "popularity": 1, "uniform": 2}
    lines = []
    metrics = sorted({b.metric for b in report.blocks})
    for metric in metrics:
        blocks = sorted((b for b in report.blocks if b.metric == metric),
                        key=lambda b: (order[b.strategy], b.eta or 0))
        header = ["Dataset", "Model"]
        for b in blocks:
            header += [b.label, "rank"] + ([] if b.strategy == "full" else ["tau"])
        rows = []
        for i, m in enumerate(report.models):
            row = [report.dataset if i == 0 else "", m]
            for b in blocks:
                row += [_mark(b.means[m], b.ranks[m]), GLYPH * b.ranks[m]]
                if b.strategy != "full":
                    row.append(("" if b.tau_value is None else f"{b.tau_value:.2f}") if i == 0 else "")
            rows.append(row)
        widths = [max(len(str(r[c])) for r in [header] + rows) for c in range(len(header))]
        fmt = lambda r: "  ".join(str(v).ljust(w) for v, w in zip(r, widths)).rstrip()
        lines.append(f"{metric}")
        lines.append(fmt(header))
        lines.append("  ".join("-" * w for w in widths))
        lines.extend(fmt(r) for r in rows)
        lines.append("")
    lines.append("bold (**x**) = best value, underline (_x_) = second best; "
                 f"{GLYPH} count = rank; tau = Kendall Tau-a against the full ranking")
    return "\n".join(lines) + "\n"


def emit_reports(report: RankingReport, directory: str | Path,
                 formats=FORMATS) -> dict[str, Path]:
    """Write the requested formats plus ``manifest.json``; returns name -> path."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    unknown = set(formats) - set(FORMATS)
    if unknown:
        raise ValueError(f"unknown report formats {sorted(unknown)}")
    written: dict[str, Path] = {}

    def put(name: str, text: str):
        p = d / name
        p.write_text(text, encoding="utf-8", newline="\n")
        written[name] = p

    if "json" in formats:
        put("report.json", report.to_json())
    if "csv" in formats:
        put("results.csv", long_csv(report))
        put("runs.csv", runs_csv(report))
    if "text" in formats:
        put("table.txt", text_table(report))
    notes = []
    if "sweep" in formats:
        if report.sweep:
            put("sweep.csv", sweep_csv(report))
        else:
            notes.append("sweep section empty: no sweep.csv written")
    manifest = {"files": sorted(written), "notes": notes, "provenance": report.provenance}
    put("manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return written


def check_taus(report: RankingReport) -> None:
    """Recompute every stored tau from the stored rank vectors."""
    full = {b.metric: b for b in report.blocks if b.strategy == "full"}
    for b in report.blocks:
        if b.strategy == "full":
            continue
        if b.metric not in full:
            if b.tau is not None:
                raise ValueError(f"{b.label} {b.metric}: tau without a full ranking")
            continue
        tau, cons = agreement(b.ranks, full[b.metric].ranks)
        if (tau, cons) != (b.tau, b.consistent):
            raise ValueError(f"{b.label} {b.metric}: stored tau {b.tau} != recomputed {tau}")
    for p in report.sweep:
        ref = full.get(p.metric)
        if ref is not None and agreement(p.ranks, ref.ranks)[0] != p.tau:
            raise ValueError(f"sweep {p.strategy}@{p.eta}: tau mismatch")


def mean_from_runs(values) -> float:
    return math.fsum(values) / len(values)
