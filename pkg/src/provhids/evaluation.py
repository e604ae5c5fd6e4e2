"""Event-level scoring: IoC matching, confusion counts, precision / FPR / MCC, regimes, costs."""

from __future__ import annotations

import math
import posixpath
from collections import defaultdict
from dataclasses import dataclass
from decimal import Decimal
from statistics import fmean
from typing import Iterable, Mapping, Sequence

from .errors import ConfigError
from .ingest import Entity, GroundTruth
from .llmclient import InvestigationReport, LedgerEntry, token_cost
from .segment import AttackWindow

CONSERVATIVE = "conservative"
BALANCED = "balanced"
OVER_SENSITIVE = "over_sensitive"

# FPR thresholds in percentage points
CONSERVATIVE_AVG_BELOW = 0.25
CONSERVATIVE_MAX_BELOW = 1.0
OVER_SENSITIVE_AVG_AT = 0.50
OVER_SENSITIVE_MAX_AT = 2.0


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricSet:
    precision: float
    fpr: float
    mcc: float
    no_alerts: bool = False

    @property
    def fpr_percent(self) -> float:
        return 100.0 * self.fpr


@dataclass(frozen=True)
class RegimeAssignment:
    f_avg: float
    f_max: float
    regime: str


def _path_parts(path: str) -> list[str]:
    return [p for p in path.replace("\\", "/").split("/") if p not in ("", ".")]


def path_matches(path: str, ioc: str) -> bool:
    """Exact match, or the IoC's components form the tail of the path's components."""
    if path == ioc:
        return True
    tail = _path_parts(ioc)
    parts = _path_parts(path)
    return bool(tail) and len(tail) <= len(parts) and parts[-len(tail):] == tail


def _basename(value: str) -> str:
    return posixpath.basename(value.replace("\\", "/"))


def _process_hit(ent: Entity, cmd_tokens: list[str], processes: frozenset[str]) -> bool:
    names = set()
    if ent.path:
        names.add(ent.path)
        names.add(_basename(ent.path))
    for tok in cmd_tokens:
        names.add(tok)
        names.add(_basename(tok))
    return not processes.isdisjoint(names)


def event_matches(ev, entities: Mapping[str, Entity], report: InvestigationReport) -> bool:
    files, procs, ips = report.ioc_files, report.ioc_processes, report.ioc_ips
    cmd_tokens = ev.cmdline.split() if ev.cmdline else []
    for ref in (ev.subject_id, ev.object_id):
        if ref is None:
            continue
        ent = entities[ref]
        if ent.kind == "file" and ent.path and any(path_matches(ent.path, f) for f in files):
            return True
        if ent.kind == "process" and procs and _process_hit(ent, cmd_tokens, procs):
            return True
        if ent.kind == "netflow" and ent.remote_ip is not None and ent.remote_ip in ips:
            return True
    return False


def match_iocs(report: InvestigationReport, window: AttackWindow, entities: Mapping[str, Entity]) -> set[str]:
    """Event ids the report implicates.

    An event is positive if a file endpoint's path equals or ends (on component
    boundaries) with a file IoC, a process endpoint's image (full or basename)
    or any token of the event command line (or its basename) equals a process
    IoC, or a netflow endpoint's remote IP is an IP IoC.
    """
    return {ev.event_id for ev in window.events if event_matches(ev, entities, report)}


def compute_confusion(predicted: Iterable[str], truth: GroundTruth, window: AttackWindow) -> ConfusionCounts:
    """Counts over the window's events; labels outside the window are ignored."""
    universe = {ev.event_id for ev in window.events}
    predicted = set(predicted)
    stray = predicted - universe
    if stray:
        raise ValueError(f"predicted ids not in window: {', '.join(sorted(stray)[:5])}")
    malicious = truth.malicious_event_ids & universe
    tp = len(predicted & malicious)
    fp = len(predicted - malicious)
    fn = len(malicious - predicted)
    return ConfusionCounts(tp, fp, fn, len(universe) - tp - fp - fn)


def compute_metrics(c: ConfusionCounts) -> MetricSet:
    """Precision, FPR and MCC.

    Zero denominators: precision 0 with ``no_alerts`` set, FPR 0, MCC 0.
    """
    alerts = c.tp + c.fp
    precision = c.tp / alerts if alerts else 0.0
    negatives = c.fp + c.tn
    fpr = c.fp / negatives if negatives else 0.0
    denom = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if denom == 0:
        mcc = 0.0
    else:
        mcc = (c.tp * c.tn - c.fp * c.fn) / math.sqrt(denom)
        mcc = max(-1.0, min(1.0, mcc))
    return MetricSet(precision, fpr, mcc, no_alerts=alerts == 0)


def aggregate_metrics(metric_sets: Sequence[MetricSet]) -> MetricSet:
    if not metric_sets:
        raise ValueError("cannot aggregate an empty group")
    return MetricSet(
        fmean(m.precision for m in metric_sets),
        fmean(m.fpr for m in metric_sets),
        fmean(m.mcc for m in metric_sets),
        no_alerts=all(m.no_alerts for m in metric_sets),
    )


def classify_regime(fpr_percent: Sequence[float]) -> RegimeAssignment:
    """Label a model from its per-dataset FPRs (percentage points)."""
    if not fpr_percent:
        raise ValueError("need at least one FPR value")
    if any(f < 0 for f in fpr_percent):
        raise ValueError("FPR values must be non-negative")
    f_avg = fmean(fpr_percent)
    f_max = max(fpr_percent)
    if f_avg >= OVER_SENSITIVE_AVG_AT or f_max >= OVER_SENSITIVE_MAX_AT:
        regime = OVER_SENSITIVE
    elif f_avg < CONSERVATIVE_AVG_BELOW and f_max < CONSERVATIVE_MAX_BELOW:
        regime = CONSERVATIVE
    else:
        regime = BALANCED
    return RegimeAssignment(f_avg, f_max, regime)


@dataclass(frozen=True)
class PriceTable:
    """Per-1k-token prices by model name."""

    prices: Mapping[str, tuple[Decimal, Decimal]]

    def cost(self, model: str, prompt_tokens: int, completion_tokens: int) -> Decimal:
        if model not in self.prices:
            raise ConfigError(f"no price configured for model {model!r}")
        p, c = self.prices[model]
        return token_cost(prompt_tokens, completion_tokens, p, c)

    @classmethod
    def from_endpoints(cls, endpoints) -> "PriceTable":
        return cls({e.name: (e.price_per_1k_prompt, e.price_per_1k_completion) for e in endpoints})


@dataclass(frozen=True)
class CostRow:
    model: str
    dataset: str
    runs: int
    calls: int
    prompt_tokens: int
    completion_tokens: int
    total_cost: Decimal
    total_time_s: float

    @property
    def cost_per_run(self) -> Decimal:
        return self.total_cost / self.runs if self.runs else Decimal(0)

    @property
    def time_per_run_s(self) -> float:
        return self.total_time_s / self.runs if self.runs else 0.0


def account_costs(ledger: Iterable[LedgerEntry], prices: PriceTable) -> list[CostRow]:
    """Sum tokens, cost and wall time per (model, dataset); costs are recomputed from the price table."""
    groups: dict[tuple[str, str], list[LedgerEntry]] = defaultdict(list)
    for entry in ledger:
        groups[(entry.model, entry.dataset)].append(entry)
    rows = []
    for (model, dataset), entries in sorted(groups.items()):
        pt = sum(e.usage.prompt_tokens for e in entries)
        ct = sum(e.usage.completion_tokens for e in entries)
        cost = sum((prices.cost(model, e.usage.prompt_tokens, e.usage.completion_tokens) for e in entries),
                   Decimal(0))
        rows.append(CostRow(model, dataset, len({e.run_id for e in entries}), len(entries), pt, ct, cost,
                            math.fsum(e.usage.wall_time_s for e in entries)))
    return rows


def format_cost_table(rows: Sequence[CostRow]) -> str:
    """Model x dataset grid of per-run cost ($, 2 decimals) and time (s, rounded)."""
    datasets = sorted({r.dataset for r in rows})
    models = sorted({r.model for r in rows})
    by_key = {(r.model, r.dataset): r for r in rows}
    header = ["Model"] + [f"{d} Cost/File ($) | {d} Time (s)" for d in datasets]
    lines = [" | ".join(header)]
    for m in models:
        cells = [m]
        for d in datasets:
            r = by_key.get((m, d))
            cells.append("- | -" if r is None else f"{r.cost_per_run:.2f} | {r.time_per_run_s:.0f}")
        lines.append(" | ".join(cells))
    return "\n".join(lines) + "\n"
