"""Provenance graphs: build, k-hop expansion, and shuffled text serialization.

Text format (also the payload handed to the model)::

    NODES
    <id> <kind> [path=..] [rip=..] [rport=..] [lip=..] [lport=..]
    EDGES
    <edge_id> <src> -> <dst> <label> <timestamp_ns> [<cmdline>]

Tokens made only of printable ASCII other than ``"`` and ``\\`` are written
bare; everything else is a JSON string literal.
"""

from __future__ import annotations

import json
import re
from collections import deque
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping

from .errors import ParseError, ReferentialError
from .ingest import Entity
from .rng import shuffle


@dataclass(frozen=True, order=True)
class Edge:
    edge_id: str
    src: str
    dst: str
    label: str
    timestamp_ns: int
    cmdline: str | None = None


@dataclass(frozen=True)
class ProvenanceGraph:
    nodes: Mapping[str, Entity] = field(default_factory=dict)
    edges: tuple[Edge, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", MappingProxyType(dict(self.nodes)))
        object.__setattr__(self, "edges", tuple(self.edges))
        ids = set()
        for e in self.edges:
            if e.edge_id in ids:
                raise ValueError(f"duplicate edge id {e.edge_id}")
            ids.add(e.edge_id)
            if e.src not in self.nodes or e.dst not in self.nodes:
                raise ReferentialError(f"edge {e.edge_id} has an endpoint outside the node set",
                                       {x for x in (e.src, e.dst) if x not in self.nodes})

    def __eq__(self, other):
        # node-set and edge-multiset equality; construction order is irrelevant
        if not isinstance(other, ProvenanceGraph):
            return NotImplemented
        return dict(self.nodes) == dict(other.nodes) and sorted(self.edges) == sorted(other.edges)

    def __hash__(self):
        return hash((frozenset(self.nodes), tuple(sorted(self.edges))))

    def neighbors(self) -> dict[str, set[str]]:
        adj: dict[str, set[str]] = {n: set() for n in self.nodes}
        for e in self.edges:
            adj[e.src].add(e.dst)
            adj[e.dst].add(e.src)
        return adj

    def induced(self, keep: Iterable[str]) -> "ProvenanceGraph":
        keep = set(keep)
        return ProvenanceGraph(
            {n: ent for n, ent in self.nodes.items() if n in keep},
            [e for e in self.edges if e.src in keep and e.dst in keep],
        )


@dataclass(frozen=True)
class SerializedGraph:
    text: str
    node_order: tuple[str, ...]
    edge_order: tuple[str, ...]
    rng_seed: int


def build_graph(window, entities: Mapping[str, Entity]) -> ProvenanceGraph:
    """One node per entity touched by ``window.events``; one edge per event with an object."""
    nodes: dict[str, Entity] = {}
    edges = []
    missing = set()
    for ev in window.events:
        for ref in (ev.subject_id, ev.object_id):
            if ref is None:
                continue
            if ref not in entities:
                missing.add(ref)
            else:
                nodes[ref] = entities[ref]
        if ev.object_id is not None:
            edges.append(Edge(ev.event_id, ev.subject_id, ev.object_id, ev.event_type,
                              ev.timestamp_ns, ev.cmdline))
    if missing:
        raise ReferentialError("window events reference unknown entities", missing)
    return ProvenanceGraph(nodes, edges)


def khop_expand(graph: ProvenanceGraph, seeds: Iterable[str], k: int) -> ProvenanceGraph:
    """Induced subgraph on nodes within undirected distance ``k`` of any seed."""
    if k < 0:
        raise ValueError("k must be non-negative")
    seeds = set(seeds)
    unknown = seeds - set(graph.nodes)
    if unknown:
        raise ReferentialError("unknown seed entities", unknown)
    adj = graph.neighbors()
    dist = {s: 0 for s in seeds}
    queue = deque(seeds)
    while queue:
        node = queue.popleft()
        if dist[node] == k:
            continue
        for nb in adj[node]:
            if nb not in dist:
                dist[nb] = dist[node] + 1
                queue.append(nb)
    return graph.induced(dist)


_BARE = re.compile(r'[!#-\[\]-~]+')
_ATTR = re.compile(r'([a-z]+)=')
_NODE_ATTRS = (("path", "path"), ("rip", "remote_ip"), ("rport", "remote_port"),
               ("lip", "local_ip"), ("lport", "local_port"))
_INT_ATTRS = {"rport", "lport"}
_ATTR_NAMES = dict(_NODE_ATTRS)
# a line made only of single-space separated bare tokens without "=" needs no scanning
_SIMPLE_LINE = re.compile(r'[!#-<>-\[\]-~]+(?: [!#-<>-\[\]-~]+)*')
_DECODER = json.JSONDecoder()


def _tok(value: str) -> str:
    if value != "->" and "=" not in value and _BARE.fullmatch(value):
        return value
    return json.dumps(value)


def _node_line(ent: Entity) -> str:
    parts = [_tok(ent.entity_id), _tok(ent.kind)]
    for key, attr in _NODE_ATTRS:
        value = getattr(ent, attr)
        if value is not None:
            parts.append(f"{key}={value}" if key in _INT_ATTRS else f"{key}={_tok(value)}")
    return " ".join(parts)


def _edge_line(e: Edge) -> str:
    parts = [_tok(e.edge_id), _tok(e.src), "->", _tok(e.dst), _tok(e.label), str(e.timestamp_ns)]
    if e.cmdline is not None:
        parts.append(_tok(e.cmdline))
    return " ".join(parts)


def serialize_shuffled(graph: ProvenanceGraph, rng_seed: int) -> SerializedGraph:
    """Serialize with node order, then edge order, permuted by seeded Fisher-Yates.

    Both permutations start from a canonical order (node id, edge id) so the
    output depends only on the graph contents and the seed.
    """
    node_ids = shuffle(sorted(graph.nodes), rng_seed)
    edges = shuffle(sorted(graph.edges, key=lambda e: e.edge_id), rng_seed + 1)
    lines = ["NODES"]
    lines.extend(_node_line(graph.nodes[n]) for n in node_ids)
    lines.append("EDGES")
    lines.extend(_edge_line(e) for e in edges)
    return SerializedGraph("\n".join(lines) + "\n", tuple(node_ids),
                           tuple(e.edge_id for e in edges), rng_seed)


_ARROW = object()


def _tokenize(line: str, lineno: int) -> list:
    if _SIMPLE_LINE.fullmatch(line):
        return [_ARROW if t == "->" else t for t in line.split(" ")]
    decoder = _DECODER
    out: list = []
    i, n = 0, len(line)
    while i < n:
        if line[i] == " ":
            i += 1
            continue
        if line[i] == '"':
            try:
                value, i = decoder.raw_decode(line, i)
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad quoted token ({exc.msg})", lineno) from None
            out.append(value)
            _expect_gap(line, i, lineno)
            continue
        m = _ATTR.match(line, i)
        if m and m.group(1) in _ATTR_NAMES:
            key = m.group(1)
            i = m.end()
            if i < n and line[i] == '"':
                try:
                    value, i = decoder.raw_decode(line, i)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"bad quoted value ({exc.msg})", lineno) from None
            else:
                bm = _BARE.match(line, i)
                if not bm:
                    raise ParseError(f"empty value for {key}", lineno)
                value, i = bm.group(0), bm.end()
            out.append((key, value))
            _expect_gap(line, i, lineno)
            continue
        bm = _BARE.match(line, i)
        if not bm:
            raise ParseError(f"unexpected character {line[i]!r}", lineno)
        value, i = bm.group(0), bm.end()
        out.append(_ARROW if value == "->" else value)
        _expect_gap(line, i, lineno)
    return out


def _expect_gap(line: str, i: int, lineno: int) -> None:
    if i < len(line) and line[i] != " ":
        raise ParseError("tokens must be separated by spaces", lineno)


def _parse_node(tokens: list, lineno: int) -> Entity:
    if len(tokens) < 2 or not all(isinstance(t, str) for t in tokens[:2]):
        raise ParseError("node line needs '<id> <kind>'", lineno)
    kwargs: dict = {}
    names = _ATTR_NAMES
    for tok in tokens[2:]:
        if not isinstance(tok, tuple):
            raise ParseError("node attributes must be key=value", lineno)
        key, value = tok
        if names[key] in kwargs:
            raise ParseError(f"repeated attribute {key}", lineno)
        if key in _INT_ATTRS:
            if not re.fullmatch(r"\d+", value):
                raise ParseError(f"{key} must be an integer", lineno)
            value = int(value)
        kwargs[names[key]] = value
    try:
        return Entity(tokens[0], tokens[1], **kwargs)
    except ValueError as exc:
        raise ParseError(str(exc), lineno) from None


def _parse_edge(tokens: list, lineno: int) -> Edge:
    if len(tokens) not in (6, 7) or tokens[2] is not _ARROW:
        raise ParseError("edge line needs '<id> <src> -> <dst> <label> <ts> [cmdline]'", lineno)
    fields = [tokens[i] for i in (0, 1, 3, 4, 5)] + tokens[6:]
    if not all(isinstance(t, str) for t in fields):
        raise ParseError("malformed edge fields", lineno)
    if not re.fullmatch(r"\d+", tokens[5]):
        raise ParseError("edge timestamp must be a non-negative integer", lineno)
    return Edge(tokens[0], tokens[1], tokens[3], tokens[4], int(tokens[5]),
                tokens[6] if len(tokens) == 7 else None)


def parse_serialized(text: str) -> ProvenanceGraph:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != "NODES":
        raise ParseError("expected 'NODES' header", 1)
    nodes: dict[str, Entity] = {}
    edges: list[Edge] = []
    edge_ids: set[str] = set()
    section = "nodes"
    for lineno, line in enumerate(lines[1:], start=2):
        if line == "EDGES":
            if section == "edges":
                raise ParseError("repeated 'EDGES' header", lineno)
            section = "edges"
            continue
        if not line.strip():
            raise ParseError("blank line inside graph body", lineno)
        tokens = _tokenize(line, lineno)
        if section == "nodes":
            ent = _parse_node(tokens, lineno)
            if ent.entity_id in nodes:
                raise ParseError(f"duplicate node {ent.entity_id!r}", lineno)
            nodes[ent.entity_id] = ent
        else:
            edge = _parse_edge(tokens, lineno)
            if edge.edge_id in edge_ids:
                raise ParseError(f"duplicate edge {edge.edge_id!r}", lineno)
            for end in (edge.src, edge.dst):
                if end not in nodes:
                    raise ParseError(f"edge {edge.edge_id!r} references undeclared node {end!r}", lineno)
            edge_ids.add(edge.edge_id)
            edges.append(edge)
    if section != "edges":
        raise ParseError("missing 'EDGES' header", len(lines) + 1)
    return ProvenanceGraph(nodes, edges)
