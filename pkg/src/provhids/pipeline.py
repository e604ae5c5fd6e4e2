"""Staged pipeline. Each stage reads only the persisted artifacts of its predecessor.

Per-dataset layout under the output directory::

    <dataset>/events.jsonl, entities.jsonl, labels.json, ingest.json     (ingest)
    <dataset>/window.jsonl, window.json                                   (segment)
    <dataset>/graph.txt, subgraph.txt, detection.json, ledger.jsonl       (detect)
    <dataset>/predictions.json, eval.json, metrics.csv                    (eval)
    metrics.csv, report.txt, regimes.csv, costs.csv, costs.txt            (report)

While a stage runs for a dataset, ``<dataset>/<stage>.partial`` exists; it is
removed on success and left behind (holding the error) on failure.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .config import DatasetSpec, RunConfig
from .detect import run_detection
from .errors import ParseError, ProvHidsError, StageError
from .evaluation import PriceTable, account_costs, compute_confusion, compute_metrics, format_cost_table, match_iocs
from .ingest import (
    dedup_events,
    ground_truth_from_record,
    load_ground_truth,
    malicious_benign_ratio,
    parse_entities,
    parse_events,
    write_event_log,
    write_ground_truth,
)
from .llmclient import HttpBackend, InvestigationReport, LLMClient, MockBackend, UsageLedger
from .provgraph import build_graph, serialize_shuffled
from .reporting import MetricsRow, merge_metrics, metrics_csv, regime_csv, render_table
from .segment import AttackInterval, build_attack_window, check_budget, dump_window, load_window, trim_to_budget

log = logging.getLogger(__name__)

DATASET_STAGES = ("ingest", "segment", "detect", "eval")
STAGES = DATASET_STAGES + ("report", "all")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


def _ds_dir(cfg: RunConfig, ds: DatasetSpec) -> Path:
    return cfg.output_dir / ds.name


def stage_ingest(cfg: RunConfig, ds: DatasetSpec) -> None:
    out = _ds_dir(cfg, ds)
    raw = parse_events(ds.events, ds.entities, ds.name)
    truth = load_ground_truth(ds.labels, raw)
    log_ = dedup_events(raw) if cfg.dedup else raw
    # labels of events folded into an earlier duplicate are dropped with them
    kept = truth.malicious_event_ids & log_.event_ids()
    truth_kept = ground_truth_from_record(
        {"malicious_event_ids": sorted(kept), "t_s": truth.t_s, "t_e": truth.t_e, "note": truth.source_note}, log_)
    write_event_log(log_, out / "events.jsonl", out / "entities.jsonl")
    write_ground_truth(truth_kept, out / "labels.json")
    ratio = malicious_benign_ratio(truth_kept, log_)
    _write_json(out / "ingest.json", {
        "dataset": ds.name,
        "events_raw": len(raw),
        "events": len(log_),
        "entities": len(log_.entities),
        "malicious_raw": len(truth.malicious_event_ids),
        "malicious": len(kept),
        "benign_per_malicious": None if ratio == float("inf") else round(ratio, 3),
    })


def _load_ingested(cfg: RunConfig, ds: DatasetSpec):
    out = _ds_dir(cfg, ds)
    log_ = parse_events(out / "events.jsonl", out / "entities.jsonl", ds.name)
    return log_, load_ground_truth(out / "labels.json", log_)


def stage_segment(cfg: RunConfig, ds: DatasetSpec) -> None:
    out = _ds_dir(cfg, ds)
    log_, truth = _load_ingested(cfg, ds)
    interval = AttackInterval(truth.t_s, truth.t_e)
    window = build_attack_window(log_, interval)
    original_estimate = window.token_estimate
    violation = check_budget(window, cfg.budget)
    trimmed = False
    if violation is not None and cfg.trim:
        window, violation = trim_to_budget(window, cfg.budget)
        trimmed = True
    if violation is not None:
        log.warning("%s: window needs ~%d tokens, budget %d", ds.name, violation.token_estimate, violation.limit)
    (out / "window.jsonl").write_text(dump_window(window), encoding="utf-8")
    _write_json(out / "window.json", {
        "t_s": interval.t_s,
        "t_e": interval.t_e,
        "delta_t": interval.delta_t,
        "counts": {"pre": len(window.pre), "attack": len(window.attack), "post": len(window.post)},
        "token_estimate": window.token_estimate,
        "token_estimate_untrimmed": original_estimate,
        "token_budget": cfg.budget,
        "over_budget": violation is not None,
        "excess": violation.excess if violation else 0,
        "trimmed": trimmed,
    })


def _load_window(out: Path):
    meta = _read_json(out / "window.json")
    interval = AttackInterval(meta["t_s"], meta["t_e"])
    return load_window((out / "window.jsonl").read_text(encoding="utf-8"), interval)


def make_client(cfg: RunConfig, ledger: UsageLedger) -> LLMClient:
    backend = MockBackend(cfg.mock_fixtures) if cfg.mock_fixtures is not None else HttpBackend()
    return LLMClient(cfg.endpoint, backend, ledger=ledger, parallelism=cfg.parallelism)


def stage_detect(cfg: RunConfig, ds: DatasetSpec) -> None:
    out = _ds_dir(cfg, ds)
    window = _load_window(out)
    entities = parse_entities(out / "entities.jsonl")
    log_graph = None
    if cfg.detection.expand_scope == "log":
        log_graph = build_graph(parse_events(out / "events.jsonl", out / "entities.jsonl", ds.name), entities)
    ledger = UsageLedger()
    client = make_client(cfg, ledger)
    run_id = f"{ds.name}/seed={cfg.seed}"
    result = run_detection(window, entities, cfg.detection, client, ds.environment,
                           forbidden=cfg.guard_tokens(), log_graph=log_graph, dataset=ds.name, run_id=run_id)
    graph = build_graph(window, entities)
    (out / "graph.txt").write_text(serialize_shuffled(graph, cfg.seed).text, encoding="utf-8")
    (out / "subgraph.txt").write_text(serialize_shuffled(result.subgraph, cfg.seed).text, encoding="utf-8")
    _write_json(out / "detection.json", result.to_artifact())
    ledger.dump(out / "ledger.jsonl")


def read_predictions(path: Path) -> set[str]:
    """``{"event_ids": [...]}``, a bare JSON list, or an empty file (no predictions)."""
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        return set()
    data = json.loads(text)
    if isinstance(data, dict):
        data = data.get("event_ids", [])
    if not isinstance(data, list) or not all(isinstance(x, str) for x in data):
        raise ParseError(f"{path}: predictions must be a list of event ids")
    return set(data)


def stage_eval(cfg: RunConfig, ds: DatasetSpec, predictions: Path | None = None) -> None:
    out = _ds_dir(cfg, ds)
    window = _load_window(out)
    log_, truth = _load_ingested(cfg, ds)
    if predictions is not None:
        predicted = read_predictions(predictions)
        model = cfg.endpoint.name
    else:
        det = _read_json(out / "detection.json")
        report = InvestigationReport.from_dict(det["voted"])
        predicted = match_iocs(report, window, log_.entities)
        model = det["model"]
    counts = compute_confusion(predicted, truth, window)
    metrics = compute_metrics(counts)
    _write_json(out / "predictions.json", {"event_ids": sorted(predicted)})
    _write_json(out / "eval.json", {
        "model": model,
        "dataset": ds.name,
        "confusion": {"tp": counts.tp, "fp": counts.fp, "fn": counts.fn, "tn": counts.tn},
        "precision": metrics.precision,
        "fpr": metrics.fpr,
        "mcc": metrics.mcc,
        "no_alerts": metrics.no_alerts,
    })
    row = MetricsRow(model, ds.name, metrics.precision, metrics.mcc, metrics.fpr_percent)
    (out / "metrics.csv").write_text(metrics_csv([row]), encoding="utf-8")


def _cost_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("model", "dataset", "runs", "calls", "prompt_tokens", "completion_tokens",
                "total_cost", "cost_per_run", "total_time_s", "time_per_run_s"))
    for r in rows:
        w.writerow((r.model, r.dataset, r.runs, r.calls, r.prompt_tokens, r.completion_tokens,
                    str(r.total_cost), str(r.cost_per_run), f"{r.total_time_s:.3f}", f"{r.time_per_run_s:.3f}"))
    return buf.getvalue()


def write_report(out_dir: Path, metrics_files: Sequence[Path], ledgers: Iterable[Path] = (),
                 prices: PriceTable | None = None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = merge_metrics(list(metrics_files))
    (out_dir / "metrics.csv").write_text(metrics_csv(rows), encoding="utf-8")
    (out_dir / "report.txt").write_text(render_table(rows), encoding="utf-8")
    regimes = regime_csv(rows)
    if regimes.count("\n") > 1:
        (out_dir / "regimes.csv").write_text(regimes, encoding="utf-8")
    ledgers = list(ledgers)
    if ledgers and prices is not None:
        entries = [e for p in ledgers for e in UsageLedger.load(p).entries]
        cost_rows = account_costs(entries, prices)
        (out_dir / "costs.csv").write_text(_cost_csv(cost_rows), encoding="utf-8")
        (out_dir / "costs.txt").write_text(format_cost_table(cost_rows), encoding="utf-8")


def stage_report(cfg: RunConfig, datasets: Sequence[DatasetSpec], extra_metrics: Sequence[Path] = ()) -> None:
    files = [p for p in (_ds_dir(cfg, d) / "metrics.csv" for d in datasets) if p.exists()]
    files += [Path(p) for p in extra_metrics]
    ledgers = [p for p in (_ds_dir(cfg, d) / "ledger.jsonl" for d in datasets) if p.exists()]
    write_report(cfg.output_dir, files, ledgers, PriceTable.from_endpoints(cfg.endpoints))


_RUNNERS: dict[str, Callable] = {
    "ingest": stage_ingest,
    "segment": stage_segment,
    "detect": stage_detect,
    "eval": stage_eval,
}


def run_dataset_stage(cfg: RunConfig, stage: str, ds: DatasetSpec, **kwargs) -> None:
    out = _ds_dir(cfg, ds)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / f"{stage}.partial"
    marker.write_text("running\n", encoding="utf-8")
    try:
        _RUNNERS[stage](cfg, ds, **kwargs)
    except (ProvHidsError, OSError, ValueError, KeyError) as exc:
        marker.write_text(f"{type(exc).__name__}: {exc}\n", encoding="utf-8")
        raise StageError(stage, ds.name, exc) from exc
    marker.unlink()


def run(cfg: RunConfig, stage: str, datasets: Sequence[str] | None = None, *,
        predictions: Path | None = None, extra_metrics: Sequence[Path] = ()) -> None:
    """Run one stage (or ``all``) for the selected datasets; raises StageError on failure."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    selected = [cfg.dataset(n) for n in datasets] if datasets else list(cfg.datasets)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    if stage == "report":
        try:
            stage_report(cfg, selected, extra_metrics)
        except (ProvHidsError, OSError, ValueError) as exc:
            raise StageError("report", None, exc) from exc
        return

    stages = DATASET_STAGES if stage == "all" else (stage,)
    kwargs = {"predictions": predictions} if stage == "eval" and predictions is not None else {}

    def one(ds: DatasetSpec) -> None:
        for st in stages:
            run_dataset_stage(cfg, st, ds, **kwargs)

    if cfg.parallelism > 1 and len(selected) > 1:
        with ThreadPoolExecutor(max_workers=min(cfg.parallelism, len(selected))) as pool:
            for fut in [pool.submit(one, ds) for ds in selected]:
                fut.result()
    else:
        for ds in selected:
            one(ds)
    if stage == "all":
        try:
            stage_report(cfg, selected, extra_metrics)
        except (ProvHidsError, OSError, ValueError) as exc:
            raise StageError("report", None, exc) from exc
