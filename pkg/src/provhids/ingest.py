"""Canonical telemetry ingestion.

Events arrive as line-delimited JSON::

    {"event_id": "e1", "ts_ns": 10, "type": "EVENT_EXECUTE", "subject": "p1",
     "object": "f1", "cmdline": "./gtcache", "extra": {...}}

with an entity sidecar in the same style::

    {"entity_id": "p1", "kind": "process", "path": "/tmp/gtcache"}
    {"entity_id": "n1", "kind": "netflow", "rip": "61.167.39.128", "rport": 80}

Labels are a single JSON object::

    {"malicious_event_ids": ["e1"], "t_s": 0, "t_e": 100, "note": "..."}
"""

from __future__ import annotations

import ipaddress
import json
import os
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping

from .errors import IntervalError, ParseError, ReferentialError

ENTITY_KINDS = ("process", "file", "netflow")

_EVENT_KEYS = {"event_id", "ts_ns", "type", "subject", "object", "cmdline", "extra"}
_ENTITY_KEYS = {"entity_id", "kind", "path", "rip", "rport", "lip", "lport"}


@dataclass(frozen=True)
class Event:
    event_id: str
    timestamp_ns: int
    event_type: str
    subject_id: str
    object_id: str | None = None
    cmdline: str | None = None
    extra: Mapping[str, object] = field(default_factory=dict, compare=True)

    def __post_init__(self):
        if not self.event_id:
            raise ValueError("event_id must be non-empty")
        if not isinstance(self.timestamp_ns, int) or isinstance(self.timestamp_ns, bool):
            raise ValueError(f"event {self.event_id}: timestamp_ns must be an integer")
        if self.timestamp_ns < 0:
            raise ValueError(f"event {self.event_id}: timestamp_ns must be >= 0")
        if not self.subject_id:
            raise ValueError(f"event {self.event_id}: subject_id must be non-empty")
        if not self.event_type:
            raise ValueError(f"event {self.event_id}: event_type must be non-empty")

    @property
    def sort_key(self) -> tuple[int, str]:
        return (self.timestamp_ns, self.event_id)

    def to_record(self) -> dict:
        rec: dict = {
            "event_id": self.event_id,
            "ts_ns": self.timestamp_ns,
            "type": self.event_type,
            "subject": self.subject_id,
        }
        if self.object_id is not None:
            rec["object"] = self.object_id
        if self.cmdline is not None:
            rec["cmdline"] = self.cmdline
        if self.extra:
            rec["extra"] = dict(self.extra)
        return rec

    def __hash__(self):
        return hash((self.event_id, self.timestamp_ns, self.event_type,
                     self.subject_id, self.object_id, self.cmdline))


@dataclass(frozen=True)
class Entity:
    entity_id: str
    kind: str
    path: str | None = None
    remote_ip: str | None = None
    remote_port: int | None = None
    local_ip: str | None = None
    local_port: int | None = None

    def __post_init__(self):
        if not self.entity_id:
            raise ValueError("entity_id must be non-empty")
        if self.kind not in ENTITY_KINDS:
            raise ValueError(f"entity {self.entity_id}: unknown kind {self.kind!r}")
        for name in ("remote_ip", "local_ip"):
            ip = getattr(self, name)
            if ip is not None:
                ipaddress.ip_address(ip)
        for name in ("remote_port", "local_port"):
            port = getattr(self, name)
            if port is not None and (
                not isinstance(port, int) or isinstance(port, bool) or not 0 <= port <= 65535
            ):
                raise ValueError(f"entity {self.entity_id}: {name} out of range: {port!r}")
        if self.kind == "netflow" and not any(
            v is not None for v in (self.remote_ip, self.remote_port, self.local_ip, self.local_port)
        ):
            raise ValueError(f"netflow entity {self.entity_id} needs at least one ip or port")

    def to_record(self) -> dict:
        rec: dict = {"entity_id": self.entity_id, "kind": self.kind}
        for key, value in (("path", self.path), ("rip", self.remote_ip), ("rport", self.remote_port),
                           ("lip", self.local_ip), ("lport", self.local_port)):
            if value is not None:
                rec[key] = value
        return rec


@dataclass(frozen=True)
class EventLog:
    events: tuple[Event, ...]
    entities: Mapping[str, Entity]
    dataset_name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "entities", MappingProxyType(dict(self.entities)))
        seen: set[str] = set()
        for ev in self.events:
            if ev.event_id in seen:
                raise ValueError(f"duplicate event_id {ev.event_id}")
            seen.add(ev.event_id)
        if any(a.sort_key > b.sort_key for a, b in zip(self.events, self.events[1:])):
            raise ValueError("events must be sorted by (timestamp_ns, event_id)")
        missing = _missing_refs(self.events, self.entities)
        if missing:
            raise ReferentialError("events reference unknown entities", missing)

    def __eq__(self, other):
        if not isinstance(other, EventLog):
            return NotImplemented
        return (self.events == other.events and dict(self.entities) == dict(other.entities)
                and self.dataset_name == other.dataset_name)

    def __len__(self):
        return len(self.events)

    def event_ids(self) -> set[str]:
        return {ev.event_id for ev in self.events}


@dataclass(frozen=True)
class GroundTruth:
    malicious_event_ids: frozenset[str]
    attack_interval: tuple[int, int]
    source_note: str = ""

    @property
    def t_s(self) -> int:
        return self.attack_interval[0]

    @property
    def t_e(self) -> int:
        return self.attack_interval[1]

    def to_record(self) -> dict:
        return {
            "malicious_event_ids": sorted(self.malicious_event_ids),
            "t_s": self.t_s,
            "t_e": self.t_e,
            "note": self.source_note,
        }


def _missing_refs(events: Iterable[Event], entities: Mapping[str, Entity]) -> set[str]:
    missing = set()
    for ev in events:
        if ev.subject_id not in entities:
            missing.add(ev.subject_id)
        if ev.object_id is not None and ev.object_id not in entities:
            missing.add(ev.object_id)
    return missing


def _iter_json_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(rec, dict):
                raise ParseError("record must be a JSON object", lineno)
            yield lineno, rec


def _event_from_record(rec: dict, lineno: int) -> Event:
    for key in ("event_id", "ts_ns", "type", "subject"):
        if key not in rec:
            raise ParseError(f"missing required field {key!r}", lineno)
    extra = rec.get("extra") or {}
    if not isinstance(extra, dict):
        raise ParseError("'extra' must be an object", lineno)
    unknown = {k: v for k, v in rec.items() if k not in _EVENT_KEYS}
    if unknown:
        extra = {**extra, **unknown}
    for key in ("event_id", "type", "subject"):
        if not isinstance(rec[key], str):
            raise ParseError(f"field {key!r} must be a string", lineno)
    for key in ("object", "cmdline"):
        if rec.get(key) is not None and not isinstance(rec[key], str):
            raise ParseError(f"field {key!r} must be a string", lineno)
    try:
        return Event(
            event_id=rec["event_id"],
            timestamp_ns=rec["ts_ns"],
            event_type=rec["type"],
            subject_id=rec["subject"],
            object_id=rec.get("object"),
            cmdline=rec.get("cmdline"),
            extra=extra,
        )
    except ValueError as exc:
        raise ParseError(str(exc), lineno) from None


def _entity_from_record(rec: dict, lineno: int) -> Entity:
    for key in ("entity_id", "kind"):
        if key not in rec:
            raise ParseError(f"missing required field {key!r}", lineno)
    unknown = set(rec) - _ENTITY_KEYS
    if unknown:
        raise ParseError(f"unknown entity fields: {', '.join(sorted(unknown))}", lineno)
    try:
        return Entity(
            entity_id=rec["entity_id"],
            kind=rec["kind"],
            path=rec.get("path"),
            remote_ip=rec.get("rip"),
            remote_port=rec.get("rport"),
            local_ip=rec.get("lip"),
            local_port=rec.get("lport"),
        )
    except ValueError as exc:
        raise ParseError(str(exc), lineno) from None


def parse_entities(path) -> dict[str, Entity]:
    entities: dict[str, Entity] = {}
    for lineno, rec in _iter_json_lines(path):
        ent = _entity_from_record(rec, lineno)
        if ent.entity_id in entities:
            raise ParseError(f"duplicate entity_id {ent.entity_id!r}", lineno)
        entities[ent.entity_id] = ent
    return entities


def parse_events(events_path, entities_path=None, dataset_name: str = "") -> EventLog:
    """Read a canonical event file (plus optional entity sidecar) into a sorted EventLog.

    Raises ParseError naming the offending line, or ReferentialError listing
    entity ids that events mention but the sidecar does not define.
    """
    entities = parse_entities(entities_path) if entities_path is not None else {}
    events: list[Event] = []
    seen: set[str] = set()
    for lineno, rec in _iter_json_lines(events_path):
        ev = _event_from_record(rec, lineno)
        if ev.event_id in seen:
            raise ParseError(f"duplicate event_id {ev.event_id!r}", lineno)
        seen.add(ev.event_id)
        events.append(ev)
    missing = _missing_refs(events, entities)
    if missing:
        raise ReferentialError("events reference unknown entities", missing)
    events.sort(key=lambda e: e.sort_key)
    if not dataset_name:
        dataset_name = os.path.splitext(os.path.basename(str(events_path)))[0]
    return EventLog(events, entities, dataset_name)


def dedup_key(event: Event, entities: Mapping[str, Entity]) -> tuple:
    obj_path = None
    if event.object_id is not None:
        obj_path = entities[event.object_id].path
    return (event.subject_id, event.object_id, event.event_type, event.cmdline, obj_path)


def dedup_events(log: EventLog) -> EventLog:
    """Keep only the earliest event for each (subject, object, type, cmdline, object path)."""
    seen: set[tuple] = set()
    kept = []
    for ev in log.events:
        key = dedup_key(ev, log.entities)
        if key in seen:
            continue
        seen.add(key)
        kept.append(ev)
    if len(kept) == len(log.events):
        return log
    return EventLog(kept, log.entities, log.dataset_name)


def load_ground_truth(path, log: EventLog) -> GroundTruth:
    with open(path, encoding="utf-8") as fh:
        try:
            rec = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid label JSON ({exc.msg})", exc.lineno) from None
    return ground_truth_from_record(rec, log)


def ground_truth_from_record(rec: Mapping, log: EventLog) -> GroundTruth:
    for key in ("t_s", "t_e"):
        if key not in rec:
            raise ParseError(f"label file missing {key!r}")
    t_s, t_e = rec["t_s"], rec["t_e"]
    if not all(isinstance(t, int) and not isinstance(t, bool) for t in (t_s, t_e)):
        raise ParseError("t_s and t_e must be integers")
    if t_s >= t_e:
        raise IntervalError(f"attack interval must satisfy t_s < t_e, got [{t_s}, {t_e}]")
    ids = frozenset(rec.get("malicious_event_ids", ()))
    by_id = {ev.event_id: ev for ev in log.events}
    missing = ids - by_id.keys()
    if missing:
        raise ReferentialError("labels reference events absent from the log", missing)
    outside = sorted(i for i in ids if not t_s <= by_id[i].timestamp_ns <= t_e)
    if outside:
        raise IntervalError(f"malicious events outside [{t_s}, {t_e}]: {', '.join(outside)}")
    return GroundTruth(ids, (t_s, t_e), str(rec.get("note", "")))


def malicious_benign_ratio(truth: GroundTruth, log: EventLog) -> float:
    """Benign events per malicious event (the N in a ``1:N`` imbalance figure)."""
    n_mal = len(truth.malicious_event_ids)
    if n_mal == 0:
        return float("inf")
    return (len(log.events) - n_mal) / n_mal


def write_event_log(log: EventLog, events_path, entities_path) -> None:
    with open(events_path, "w", encoding="utf-8") as fh:
        for ev in log.events:
            fh.write(json.dumps(ev.to_record(), sort_keys=True) + "\n")
    with open(entities_path, "w", encoding="utf-8") as fh:
        for ent_id in sorted(log.entities):
            fh.write(json.dumps(log.entities[ent_id].to_record(), sort_keys=True) + "\n")


def write_ground_truth(truth: GroundTruth, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(truth.to_record(), fh, sort_keys=True, indent=2)
        fh.write("\n")
