import csv
import filecmp
import json
from pathlib import Path

import pytest

from oracles import fpr_oracle, ioc_match_oracle, label_confusion_oracle, mcc_oracle, precision_oracle
from provhids.cli import main
from provhids.config import config_from_dict, load_config
from provhids.errors import ConfigError, ParseError
from provhids.ingest import Entity, Event
from provhids.llmclient import InvestigationReport
from provhids.reference import DATASETS, MODELS, REFERENCE_RESULTS
from provhids.reporting import MetricsRow, merge_metrics, read_metrics_csv, render_table, write_metrics_csv
from provhids.synthetic import write_synthetic

EXPECTED_FILES = {
    "metrics.csv", "report.txt", "costs.csv", "costs.txt",
    *(f"synthetic/{n}" for n in ("events.jsonl", "entities.jsonl", "labels.json", "ingest.json", "window.jsonl",
                                 "window.json", "graph.txt", "subgraph.txt", "detection.json", "ledger.jsonl",
                                 "predictions.json", "eval.json", "metrics.csv")),
}


def tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture
def synth(tmp_path):
    return write_synthetic(tmp_path / "in")


def run_all(cfg, out, *extra):
    assert main(["all", "--config", str(cfg), "--out", str(out), *extra]) == 0
    return out


class TestAll:
    def test_artifacts(self, synth, tmp_path, golden):
        out = run_all(synth, tmp_path / "out")
        assert set(tree(out)) == EXPECTED_FILES
        assert (out / "metrics.csv").read_text() == (golden / "synthetic_metrics.csv").read_text()
        assert not list(out.rglob("*.partial"))

    def test_metrics_match_oracle(self, synth, tmp_path):
        out = run_all(synth, tmp_path / "out")
        ds = out / "synthetic"
        voted = InvestigationReport.from_dict(json.loads((ds / "detection.json").read_text())["voted"])
        ents = {}
        for line in (ds / "entities.jsonl").read_text().splitlines():
            r = json.loads(line)
            ents[r["entity_id"]] = Entity(r["entity_id"], r["kind"], r.get("path"), r.get("rip"),
                                          r.get("rport"))
        events = []
        for line in (ds / "window.jsonl").read_text().splitlines():
            r = json.loads(line)
            events.append(Event(r["event_id"], r["ts_ns"], r["type"], r["subject"], r.get("object"), r.get("cmdline")))
        hits = ioc_match_oracle(events, ents, voted.ioc_files, voted.ioc_processes, voted.ioc_ips)
        assert set(json.loads((ds / "predictions.json").read_text())["event_ids"]) == hits
        malicious = set(json.loads((ds / "labels.json").read_text())["malicious_event_ids"])
        c = label_confusion_oracle([e.event_id for e in events], hits, malicious)
        ev = json.loads((ds / "eval.json").read_text())
        assert tuple(ev["confusion"][k] for k in ("tp", "fp", "fn", "tn")) == c
        assert ev["precision"] == pytest.approx(precision_oracle(*c), abs=1e-12)
        assert ev["fpr"] == pytest.approx(fpr_oracle(*c), abs=1e-12)
        assert ev["mcc"] == pytest.approx(mcc_oracle(*c), abs=1e-12)

    def test_byte_identical_reruns(self, synth, tmp_path):
        a = tree(run_all(synth, tmp_path / "a"))
        b = tree(run_all(synth, tmp_path / "b"))
        assert a == b

    def test_seed_changes_payload_order(self, synth, tmp_path):
        a = run_all(synth, tmp_path / "a")
        b = run_all(synth, tmp_path / "b", "--seed", "5")
        assert (a / "synthetic/detection.json").read_bytes() != (b / "synthetic/detection.json").read_bytes()
        assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()

    def test_single_shot_equals_vote_one(self, tmp_path):
        one = run_all(write_synthetic(tmp_path / "v1", vote_k=1), tmp_path / "o1")
        ss = run_all(write_synthetic(tmp_path / "ss", single_shot=True), tmp_path / "o2")
        assert tree(one) == tree(ss)

    def test_stages_one_by_one(self, synth, tmp_path):
        out = tmp_path / "staged"
        for stage in ("ingest", "segment", "detect", "eval", "report"):
            assert main(["--stage", stage, "--config", str(synth), "--out", str(out)]) == 0
        assert tree(out) == tree(run_all(synth, tmp_path / "whole"))

    def test_stage_needs_predecessor(self, synth, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["segment", "--config", str(synth), "--out", str(out)]) == 1
        err = capsys.readouterr().err
        assert "segment" in err and "synthetic" in err
        assert (out / "synthetic" / "segment.partial").exists()

    def test_failure_leaves_partial_marker(self, synth, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["ingest", "--config", str(synth), "--out", str(out)]) == 0
        assert main(["segment", "--config", str(synth), "--out", str(out)]) == 0
        assert main(["detect", "--config", str(synth), "--out", str(out),
                     "--mock-fixtures", str(tmp_path / "missing")]) == 1
        assert (out / "synthetic" / "detect.partial").exists()
        assert "detect" in capsys.readouterr().err
        # a successful rerun clears the marker
        assert main(["detect", "--config", str(synth), "--out", str(out)]) == 0
        assert not (out / "synthetic" / "detect.partial").exists()

    def test_contamination_guard(self, tmp_path):
        cfg_path = write_synthetic(tmp_path / "in")
        cfg = json.loads(cfg_path.read_text())
        cfg["forbidden_tokens"].append("gtcache")
        cfg_path.write_text(json.dumps(cfg))
        assert main(["all", "--config", str(cfg_path), "--out", str(tmp_path / "out")]) == 1


class TestEvalStage:
    def test_empty_predictions(self, synth, tmp_path):
        out = tmp_path / "out"
        for stage in ("ingest", "segment"):
            assert main([stage, "--config", str(synth), "--out", str(out)]) == 0
        empty = tmp_path / "pred.json"
        empty.write_text("")
        assert main(["eval", "--config", str(synth), "--out", str(out), "--predictions", str(empty)]) == 0
        [row] = read_metrics_csv(out / "synthetic" / "metrics.csv")
        assert (row.precision, row.mcc, row.fpr_percent) == (0.0, 0.0, 0.0)
        assert json.loads((out / "synthetic" / "eval.json").read_text())["no_alerts"] is True

    def test_predictions_flag_only_for_eval(self, synth, tmp_path):
        with pytest.raises(SystemExit):
            main(["detect", "--config", str(synth), "--predictions", str(tmp_path / "p")])


def table_rows(datasets):
    return [MetricsRow(m, d, *REFERENCE_RESULTS[m][d]) for m in MODELS for d in datasets]


class TestReport:
    def write_per_dataset(self, tmp_path, datasets):
        paths = []
        for d in datasets:
            p = tmp_path / f"{d}.csv"
            write_metrics_csv([MetricsRow(m, d, *REFERENCE_RESULTS[m][d]) for m in MODELS], p)
            paths.append(p)
        return paths

    def test_e3_table_shape(self, tmp_path):
        e3 = [d for d in DATASETS if d.startswith("E3-")]
        paths = self.write_per_dataset(tmp_path, e3)
        assert main(["report", "--metrics", *map(str, paths), "--out", str(tmp_path / "rep")]) == 0
        lines = (tmp_path / "rep" / "report.txt").read_text().splitlines()
        header = " ".join(f"{d} {m}" for d in e3 for m in ("Pre", "MCC", "FPR"))
        assert lines[0].split() == f"Model {header}".split()
        assert len(lines) == 1 + len(MODELS)
        opus = next(line for line in lines if line.startswith("Claude-Opus-4.6")).split()
        c = REFERENCE_RESULTS["Claude-Opus-4.6"]["E3-CADETS"]
        assert opus[1:4] == [f"{c.precision:.3f}", f"{c.mcc:.3f}", f"{c.fpr_percent:.3f}%"]
        assert "Regime" not in lines[0]
        assert not (tmp_path / "rep" / "regimes.csv").exists()

    def test_regime_column_when_complete(self, tmp_path):
        paths = self.write_per_dataset(tmp_path, DATASETS)
        assert main(["report", "--metrics", *map(str, paths), "--out", str(tmp_path / "rep")]) == 0
        lines = (tmp_path / "rep" / "report.txt").read_text().splitlines()
        assert lines[0].split()[-1] == "Regime"
        assert next(line for line in lines if line.startswith("GPT-4.1")).split()[-1] == "over_sensitive"
        with open(tmp_path / "rep" / "regimes.csv") as fh:
            regimes = {r["model"]: r["regime"] for r in csv.DictReader(fh)}
        assert regimes["Claude-Sonnet-4"] == "conservative" and len(regimes) == len(MODELS)

    def test_one_row_unchanged(self, tmp_path):
        row = MetricsRow("m", "E3-THEIA", 0.25, 0.5, 0.125)
        write_metrics_csv([row], tmp_path / "in.csv")
        assert main(["report", "--metrics", str(tmp_path / "in.csv"), "--out", str(tmp_path / "rep")]) == 0
        assert filecmp.cmp(tmp_path / "in.csv", tmp_path / "rep" / "metrics.csv", shallow=False)
        assert read_metrics_csv(tmp_path / "rep" / "metrics.csv") == [row]

    def test_merge_sorted(self, tmp_path):
        a = [MetricsRow("z", "E3-TRACE", 0.1, 0.1, 0.1), MetricsRow("a", "NL-HW17", 0.2, 0.2, 0.2)]
        b = [MetricsRow("m", "E3-CADETS", 0.3, 0.3, 0.3), MetricsRow("a", "E3-CADETS", 0.4, 0.4, 0.4)]
        write_metrics_csv(a, tmp_path / "a.csv")
        write_metrics_csv(b, tmp_path / "b.csv")
        merged = merge_metrics([tmp_path / "a.csv", tmp_path / "b.csv"])
        assert merged == sorted(a + b, key=lambda r: (r.model, r.dataset))

    def test_later_file_wins(self, tmp_path):
        write_metrics_csv([MetricsRow("m", "d", 0.1, 0.1, 0.1)], tmp_path / "a.csv")
        write_metrics_csv([MetricsRow("m", "d", 0.9, 0.9, 0.9)], tmp_path / "b.csv")
        assert merge_metrics([tmp_path / "a.csv", tmp_path / "b.csv"])[0].precision == 0.9

    @pytest.mark.parametrize("header, name", [
        ("model,dataset,precision,mcc\n", "fpr_percent"),
        ("model,dataset,precision,mcc,fpr_percent,recall\n", "recall"),
    ])
    def test_schema_mismatch_names_column(self, tmp_path, header, name, capsys):
        p = tmp_path / "bad.csv"
        p.write_text(header)
        with pytest.raises(ParseError, match=name):
            read_metrics_csv(p)
        assert main(["report", "--metrics", str(p), "--out", str(tmp_path / "rep")]) == 1
        assert name in capsys.readouterr().err

    def test_bad_value_line(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("model,dataset,precision,mcc,fpr_percent\nm,d,0.1,0.2,0.3\nm,e,high,0.2,0.3\n")
        with pytest.raises(ParseError, match="line 3"):
            read_metrics_csv(p)

    def test_render_deterministic(self):
        rows = table_rows(DATASETS)
        assert render_table(rows) == render_table(list(reversed(rows)))


class TestConfig:
    def base(self, tmp_path):
        return json.loads(write_synthetic(tmp_path).read_text())

    def test_load(self, tmp_path):
        cfg = load_config(write_synthetic(tmp_path))
        assert cfg.endpoint.name == "mock-model" and cfg.detection.vote_k == 3
        assert {"synthetic", "attack label"} <= set(cfg.guard_tokens())
        assert cfg.budget == 131_072

    def test_unknown_key(self, tmp_path):
        cfg = self.base(tmp_path)
        cfg["colour"] = "red"
        with pytest.raises(ConfigError, match="colour"):
            config_from_dict(cfg, tmp_path)

    def test_needs_one_active_endpoint(self, tmp_path):
        cfg = self.base(tmp_path)
        cfg["endpoints"].append(dict(cfg["endpoints"][0], name="other"))
        with pytest.raises(ConfigError):
            config_from_dict(cfg, tmp_path)
        cfg["endpoints"] = [dict(e, active=False) for e in cfg["endpoints"]]
        with pytest.raises(ConfigError):
            config_from_dict(cfg, tmp_path)

    def test_missing_file(self, tmp_path):
        cfg = self.base(tmp_path)
        cfg["datasets"][0]["events"] = "nope.jsonl"
        with pytest.raises(ConfigError, match="nope.jsonl"):
            config_from_dict(cfg, tmp_path)

    def test_overrides(self, tmp_path):
        cfg = load_config(write_synthetic(tmp_path)).with_overrides(seed=9, output_dir=tmp_path / "x")
        assert cfg.seed == 9 and cfg.detection.rng_seed == 9 and cfg.output_dir == tmp_path / "x"

    def test_cli_requires_config(self):
        with pytest.raises(SystemExit):
            main(["all"])
