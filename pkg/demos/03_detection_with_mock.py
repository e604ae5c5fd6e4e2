"""
Detection with a replayed model
===============================

Evidence identification picks suspicious command lines, k-hop expansion
builds the context, several investigation samples are drawn and their IoCs
are majority-voted. Responses come from canned fixtures, so no API is called.
"""

import tempfile
from pathlib import Path

from provhids.config import load_config
from provhids.detect import DetectionConfig, run_detection
from provhids.ingest import dedup_events
from provhids.llmclient import LLMClient, MockBackend
from provhids.segment import AttackInterval, build_attack_window
from provhids.synthetic import build_synthetic, write_synthetic

root = Path(tempfile.mkdtemp())
cfg = load_config(write_synthetic(root))
log, truth = build_synthetic()
window = build_attack_window(dedup_events(log), AttackInterval(truth.t_s, truth.t_e))
env = cfg.dataset("synthetic").environment


def detect(detection):
    client = LLMClient(cfg.endpoint, MockBackend(cfg.mock_fixtures))
    result = run_detection(window, log.entities, detection, client, env, forbidden=cfg.guard_tokens())
    return result, client


# three samples, strict majority
result, client = detect(DetectionConfig(vote_k=3, rng_seed=0))
print("flagged commands:", [c for c, _ in result.evidence.commands])
print("seed entities:", sorted(result.evidence.seed_entities))
for s in result.samples:
    print(f"sample {s.index}: processes={sorted(s.report.ioc_processes)}")
print("voted processes:", sorted(result.voted.ioc_processes))
print("voted files:", sorted(result.voted.ioc_files))
print("model calls:", len(client.ledger))

# one sample only: whatever that sample said is the answer
single, _ = detect(DetectionConfig(single_shot=True))
print("single-shot processes:", sorted(single.voted.ioc_processes))

# refine each sample against the graph, then vote
reflected, client = detect(DetectionConfig(vote_k=3, reflection="ref_then_agg"))
print("ref_then_agg processes:", sorted(reflected.voted.ioc_processes), "calls:", len(client.ledger))
