import json
import sys
from pathlib import Path

import pytest

from provhids.ingest import Entity, Event, EventLog

GOLDEN = Path(__file__).parent / "golden"


def write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


@pytest.fixture
def golden():
    return GOLDEN


@pytest.fixture
def tiny_entities():
    return {
        "p1": Entity("p1", "process", "/usr/sbin/nginx"),
        "p2": Entity("p2", "process", "/tmp/gtcache"),
        "f1": Entity("f1", "file", "/tmp/vUgefal"),
        "f2": Entity("f2", "file", "/etc/passwd"),
        "n1": Entity("n1", "netflow", remote_ip="203.0.113.9", remote_port=443),
    }


@pytest.fixture
def tiny_log(tiny_entities):
    events = [
        Event("e1", 500, "EVENT_READ", "p1", "f2", "nginx"),
        Event("e2", 1500, "EVENT_EXECUTE", "p1", "p2", "./gtcache"),
        Event("e3", 1600, "EVENT_WRITE", "p2", "f1", "./gtcache"),
        Event("e4", 1700, "EVENT_CONNECT", "p2", "n1", "./gtcache"),
        Event("e5", 2500, "EVENT_READ", "p1", "f2", "nginx -s reload"),
        Event("e6", 3500, "EVENT_EXIT", "p1"),
    ]
    return EventLog(events, tiny_entities, "tiny")


def pytest_terminal_summary(terminalreporter):
    # one line per acceptance criterion, in criterion order
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
