"""
Ingesting telemetry and cutting an attack-centric window
========================================================

Write the synthetic dataset to disk in the canonical JSON-lines format, read
it back, fold duplicate events, and split the log around the labeled attack
interval into pre / attack / post segments of equal duration.
"""

import tempfile
from pathlib import Path

from provhids.ingest import dedup_events, load_ground_truth, malicious_benign_ratio, parse_events
from provhids.segment import AttackInterval, build_attack_window, check_budget, trim_to_budget
from provhids.synthetic import write_synthetic

root = Path(tempfile.mkdtemp())
write_synthetic(root)
data = root / "data"

# parse: events are sorted by timestamp, ties by event id
log = parse_events(data / "events.jsonl", data / "entities.jsonl", "synthetic")
print("events:", len(log.events), "entities:", len(log.entities))

# dedup keeps the earliest event for each (subject, object, type, cmdline, path) key
deduped = dedup_events(log)
print("after dedup:", len(deduped.events))

truth = load_ground_truth(data / "labels.json", deduped)
print("malicious:", len(truth.malicious_event_ids), "ratio 1:%.1f" % malicious_benign_ratio(truth, deduped))

# the window spans [t_s - dt, t_e + dt] with dt = t_e - t_s
interval = AttackInterval(truth.t_s, truth.t_e)
window = build_attack_window(deduped, interval)
print("pre / attack / post:", len(window.pre), len(window.attack), len(window.post))
print("token estimate:", window.token_estimate)

# a small budget is reported, not enforced, unless trimming is asked for
print("violation at 500 tokens:", check_budget(window, 500))
trimmed, still_over = trim_to_budget(window, 500)
print("trimmed to", trimmed.token_estimate, "tokens; still over:", still_over is not None)
