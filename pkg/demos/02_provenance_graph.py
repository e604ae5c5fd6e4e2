"""
Provenance graphs, k-hop context and shuffled serialization
===========================================================

Events become typed directed edges between entities. The detector only shows
the model the neighborhood of the suspicious entities, written out with node
and edge order permuted by a seed.
"""

from provhids.ingest import dedup_events
from provhids.provgraph import build_graph, khop_expand, parse_serialized, serialize_shuffled
from provhids.segment import AttackInterval, build_attack_window
from provhids.synthetic import build_synthetic

log, truth = build_synthetic()
window = build_attack_window(dedup_events(log), AttackInterval(truth.t_s, truth.t_e))
graph = build_graph(window, log.entities)
print("window graph:", len(graph.nodes), "nodes,", len(graph.edges), "edges")

# hop distance ignores edge direction, so both causes and effects are reached
for k in range(4):
    sub = khop_expand(graph, {"p-gtcache"}, k)
    print(f"k={k}: {len(sub.nodes)} nodes, {len(sub.edges)} edges")

# the same graph under two seeds: same lines, different order
sub = khop_expand(graph, {"p-gtcache"}, 1)
a = serialize_shuffled(sub, 1)
b = serialize_shuffled(sub, 2)
print(a.text)
print("same content:", sorted(a.text.splitlines()) == sorted(b.text.splitlines()))
print("same order:", a.text == b.text)

# the text format parses back to the identical graph
print("round trip:", parse_serialized(a.text) == sub)
