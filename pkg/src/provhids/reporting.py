"""Metrics CSV files, merging, and the plain-text results table."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ParseError
from .evaluation import classify_regime
from .reference import DATASETS

METRIC_COLUMNS = ("model", "dataset", "precision", "mcc", "fpr_percent")


@dataclass(frozen=True, order=True)
class MetricsRow:
    model: str
    dataset: str
    precision: float
    mcc: float
    fpr_percent: float

    def formatted(self) -> list[str]:
        return [self.model, self.dataset, f"{self.precision:.3f}", f"{self.mcc:.3f}", f"{self.fpr_percent:.3f}"]


def metrics_csv(rows: Iterable[MetricsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in sorted(rows):
        w.writerow(r.formatted())
    return buf.getvalue()


def write_metrics_csv(rows: Iterable[MetricsRow], path) -> None:
    Path(path).write_text(metrics_csv(rows), encoding="utf-8")


def read_metrics_csv(path) -> list[MetricsRow]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}: empty metrics file")
        missing = [c for c in METRIC_COLUMNS if c not in header]
        if missing:
            raise ParseError(f"{path}: missing column {missing[0]!r}")
        extra = [c for c in header if c not in METRIC_COLUMNS]
        if extra:
            raise ParseError(f"{path}: unexpected column {extra[0]!r}")
        idx = {c: header.index(c) for c in METRIC_COLUMNS}
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise ParseError(f"{path}: expected {len(header)} fields", lineno)
            vals = {}
            for col in ("precision", "mcc", "fpr_percent"):
                try:
                    vals[col] = float(rec[idx[col]])
                except ValueError:
                    raise ParseError(f"{path}: column {col!r} is not a number: {rec[idx[col]]!r}",
                                     lineno) from None
            rows.append(MetricsRow(rec[idx["model"]], rec[idx["dataset"]], **vals))
    return rows


def merge_metrics(paths: Sequence) -> list[MetricsRow]:
    """Union of all rows sorted by (model, dataset); a later file wins on a duplicate key."""
    if not paths:
        raise ValueError("need at least one metrics file")
    merged: dict[tuple[str, str], MetricsRow] = {}
    for p in paths:
        for r in read_metrics_csv(p):
            merged[(r.model, r.dataset)] = r
    return [merged[k] for k in sorted(merged)]


def regime_summary(rows: Sequence[MetricsRow], required=DATASETS) -> dict[str, tuple[float, float, str]]:
    """(f_avg, f_max, regime) for every model whose rows cover all ``required`` datasets."""
    by_model: dict[str, dict[str, float]] = {}
    for r in rows:
        by_model.setdefault(r.model, {})[r.dataset] = r.fpr_percent
    out = {}
    for model, fprs in sorted(by_model.items()):
        if all(d in fprs for d in required):
            ra = classify_regime([fprs[d] for d in required])
            out[model] = (ra.f_avg, ra.f_max, ra.regime)
    return out


def _ordered_datasets(present: set[str]) -> list[str]:
    known = [d for d in DATASETS if d in present]
    return known + sorted(present - set(DATASETS))


def render_table(rows: Sequence[MetricsRow]) -> str:
    """Models down, datasets across, Pre / MCC / FPR per dataset; FPR as a percentage."""
    datasets = _ordered_datasets({r.dataset for r in rows})
    models = sorted({r.model for r in rows})
    cells = {(r.model, r.dataset): r for r in rows}
    regimes = regime_summary(rows)

    header = ["Model"]
    for d in datasets:
        header += [f"{d} Pre", f"{d} MCC", f"{d} FPR"]
    if regimes:
        header.append("Regime")
    table = [header]
    for m in models:
        line = [m]
        for d in datasets:
            r = cells.get((m, d))
            line += ["-", "-", "-"] if r is None else [f"{r.precision:.3f}", f"{r.mcc:.3f}",
                                                       f"{r.fpr_percent:.3f}%"]
        if regimes:
            line.append(regimes[m][2] if m in regimes else "-")
        table.append(line)
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))).rstrip()
             for row in table]
    return "\n".join(lines) + "\n"


def regime_csv(rows: Sequence[MetricsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("model", "f_avg", "f_max", "regime"))
    for model, (f_avg, f_max, regime) in regime_summary(rows).items():
        w.writerow((model, f"{f_avg:.3f}", f"{f_max:.3f}", regime))
    return buf.getvalue()
