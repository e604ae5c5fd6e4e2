"""A small deterministic dataset with canned model responses, for demos and end-to-end tests.

The scenario: a web server host where a request to nginx leads php-fpm to
drop and run ``./gtcache``, which writes and launches ``/tmp/vUgefal``;
that payload tampers with ``/var/log/devc`` and calls back to the attacker.
Benign background (cron, sshd, shell use, nginx traffic) surrounds it.
"""

from __future__ import annotations

import json
import random
from dataclasses import replace
from pathlib import Path

from .ingest import Entity, Event, EventLog, GroundTruth, write_event_log, write_ground_truth

SEC = 1_000_000_000
ATTACK_START = 10 * SEC
ATTACK_END = 20 * SEC
ATTACKER_IP = "198.51.100.23"

ENTITIES = [
    Entity("p-nginx", "process", "/usr/local/sbin/nginx"),
    Entity("p-php", "process", "/usr/local/sbin/php-fpm"),
    Entity("p-sh", "process", "/bin/sh"),
    Entity("p-gtcache", "process", "/tmp/gtcache"),
    Entity("p-vugefal", "process", "/tmp/vUgefal"),
    Entity("p-cron", "process", "/usr/sbin/cron"),
    Entity("p-sshd", "process", "/usr/sbin/sshd"),
    Entity("p-bash", "process", "/usr/local/bin/bash"),
    Entity("p-ls", "process", "/bin/ls"),
    Entity("f-index", "file", "/usr/local/www/nginx-dist/index.php"),
    Entity("f-gtcache", "file", "/tmp/gtcache"),
    Entity("f-vugefal", "file", "/tmp/vUgefal"),
    Entity("f-devc", "file", "/var/log/devc"),
    Entity("f-passwd", "file", "/etc/passwd"),
    Entity("f-messages", "file", "/var/log/messages"),
    Entity("f-notes", "file", "/home/alice/notes.txt"),
    Entity("f-libc", "file", "/lib/libc.so.7"),
    Entity("f-access", "file", "/var/log/nginx/access.log"),
    Entity("n-attacker", "netflow", remote_ip=ATTACKER_IP, remote_port=80, local_ip="10.0.0.5", local_port=40122),
    Entity("n-client", "netflow", remote_ip="192.0.2.10", remote_port=51544, local_ip="10.0.0.5", local_port=80),
    Entity("n-ssh", "netflow", remote_ip="192.0.2.44", remote_port=60022, local_ip="10.0.0.5", local_port=22),
]

# (seconds offset inside the attack interval, type, subject, object, cmdline)
_ATTACK_STEPS = [
    (0.5, "EVENT_RECVFROM", "p-nginx", "n-attacker", "nginx: worker process"),
    (1.0, "EVENT_WRITE", "p-php", "f-index", "php-fpm: pool www"),
    (1.5, "EVENT_WRITE", "p-php", "f-gtcache", "php-fpm: pool www"),
    (2.0, "EVENT_FORK", "p-php", "p-sh", "sh -c ./gtcache"),
    (2.5, "EVENT_EXECUTE", "p-sh", "f-gtcache", "./gtcache"),
    (3.0, "EVENT_CONNECT", "p-gtcache", "n-attacker", "./gtcache"),
    (3.5, "EVENT_WRITE", "p-gtcache", "f-vugefal", "./gtcache"),
    (4.0, "EVENT_EXECUTE", "p-gtcache", "f-vugefal", "./gtcache"),
    (4.5, "EVENT_FORK", "p-gtcache", "p-vugefal", "/tmp/vUgefal"),
    (5.0, "EVENT_WRITE", "p-vugefal", "f-devc", "/tmp/vUgefal"),
    (5.5, "EVENT_READ", "p-vugefal", "f-passwd", "/tmp/vUgefal"),
    (6.0, "EVENT_SENDTO", "p-vugefal", "n-attacker", "/tmp/vUgefal"),
]

# background templates: (type, subject, object path pattern, cmdline); each event gets its own file
_BENIGN = [
    ("EVENT_WRITE", "p-cron", "/var/log/cron.{i}", "cron -n"),
    ("EVENT_READ", "p-nginx", "/usr/local/www/nginx-dist/page{i}.html", "nginx: worker process"),
    ("EVENT_READ", "p-php", "/usr/local/www/nginx-dist/app{i}.php", "php-fpm: pool www"),
    ("EVENT_READ", "p-bash", "/home/alice/doc{i}.txt", "-bash"),
    ("EVENT_MMAP", "p-ls", "/lib/libext{i}.so", "ls -la /home/alice"),
    ("EVENT_WRITE", "p-sshd", "/var/log/auth.{i}", "sshd: alice [priv]"),
]
_FIXED_BENIGN = [
    ("EVENT_RECVFROM", "p-nginx", "n-client", "nginx: worker process"),
    ("EVENT_RECVFROM", "p-sshd", "n-ssh", "sshd: alice [priv]"),
    ("EVENT_FORK", "p-sshd", "p-bash", "sshd: alice [priv]"),
    ("EVENT_EXECUTE", "p-bash", "p-ls", "ls -la /home/alice"),
    ("EVENT_READ", "p-cron", "f-passwd", "cron -n"),
    ("EVENT_READ", "p-php", "f-index", "php-fpm: pool www"),
]

N_EVENTS = 50


def build_synthetic(seed: int = 7) -> tuple[EventLog, GroundTruth]:
    """50 events: 12 malicious inside the attack interval, benign background around and inside it,
    two benign events beyond the window, and one exact duplicate for the dedup step."""
    rng = random.Random(seed)
    entities = {e.entity_id: e for e in ENTITIES}
    events: list[Event] = []
    for off, etype, subj, obj, cmd in _ATTACK_STEPS:
        events.append(Event(f"m{len(events) + 1:02d}", ATTACK_START + int(off * SEC), etype, subj, obj, cmd))
    malicious = {ev.event_id for ev in events}

    n_background = N_EVENTS - len(events) - 2 - 1
    for i in range(n_background):
        if i < len(_FIXED_BENIGN):
            etype, subj, obj, cmd = _FIXED_BENIGN[i]
        else:
            etype, subj, pattern, cmd = rng.choice(_BENIGN)
            obj = f"f-{i + 1:02d}"
            entities[obj] = Entity(obj, "file", pattern.format(i=i + 1))
        events.append(Event(f"b{i + 1:02d}", rng.randrange(0, 30 * SEC), etype, subj, obj, cmd))
    # two events after the post segment; excluded from the window
    for j, sec in enumerate((31, 33)):
        obj = f"f-{n_background + j + 1:02d}"
        entities[obj] = Entity(obj, "file", f"/var/log/cron.late{j + 1}")
        events.append(Event(f"x{j + 1:02d}", sec * SEC, "EVENT_WRITE", "p-cron", obj, "cron -n"))
    # a repeat of the first benign event, folded away by dedup
    first = min((ev for ev in events if ev.event_id.startswith("b")), key=lambda e: e.sort_key)
    events.append(Event("d01", first.timestamp_ns + 1, first.event_type, first.subject_id,
                        first.object_id, first.cmdline))
    events.sort(key=lambda e: e.sort_key)
    # opaque ids in time order, so the ids that reach a prompt carry no label information
    rename = {ev.event_id: f"ev{n:04d}" for n, ev in enumerate(events, start=1)}
    events = [replace(ev, event_id=rename[ev.event_id]) for ev in events]
    malicious = {rename[m] for m in malicious}
    log = EventLog(events, entities, "synthetic")
    truth = GroundTruth(frozenset(malicious), (ATTACK_START, ATTACK_END), "synthetic gtcache scenario")
    return log, truth


MEI_RESPONSE = """\
- Command line 1: ./gtcache
  Reason: An unfamiliar binary executed from the web server's working directory right after php-fpm wrote it.
- Command line 2: sh -c ./gtcache
  Reason: php-fpm spawning a shell to run a freshly dropped binary is typical of web-shell exploitation.
- Command line 3: /tmp/vUgefal
  Reason: A randomly named executable under /tmp.
- Summarize All Highly Suspicious Commands:
    - 1. ./gtcache.
    - 2. sh -c ./gtcache.
    - 3. /tmp/vUgefal.
"""


def _acr(ips, procs, files, narrative) -> str:
    def block(title, values):
        if not values:
            return [f"    - {title}: None"]
        return [f"    - {title}:"] + [f"        - `{v}`" for v in values]

    lines = [
        f"- Attack Narrative: {narrative}",
        "- Key Steps:",
        "    - 1) Initial Access: a request to nginx reaches php-fpm, which writes index.php and /tmp/gtcache.",
        "    - 2) Execution: php-fpm runs ./gtcache through sh.",
        "    - 3) Persistence: gtcache drops and launches /tmp/vUgefal.",
        "    - 4) Defense Evasion: vUgefal writes /var/log/devc.",
        "    - 5) Exfiltration: vUgefal reads /etc/passwd and sends data out.",
        "- IoCs:",
    ]
    lines += block("IPs", ips) + block("Processes", procs) + block("Files", files)
    return "\n".join(lines) + "\n"


ACR_RESPONSES = [
    _acr([ATTACKER_IP], ["gtcache", "vUgefal"], ["/tmp/gtcache", "/tmp/vUgefal", "/var/log/devc"],
         "A web request exploited php-fpm to drop gtcache, which staged the vUgefal payload and called back."),
    _acr([ATTACKER_IP], ["gtcache", "vUgefal", "nginx"],
         ["/tmp/vUgefal", "/var/log/devc", "/usr/local/www/nginx-dist/index.php"],
         "nginx served a malicious request; the dropped gtcache binary installed vUgefal."),
    _acr([], ["vUgefal", "gtcache", "nginx"], ["/tmp/gtcache", "/tmp/vUgefal"],
         "nginx and php-fpm launched an implant chain, gtcache then vUgefal."),
]

REFINE_RESPONSE = _acr([ATTACKER_IP], ["gtcache", "vUgefal"], ["/tmp/gtcache", "/tmp/vUgefal", "/var/log/devc"],
                       "Confirmed: php-fpm dropped gtcache, which launched vUgefal and contacted the attacker.")


def mock_rules() -> dict:
    # usage counts are fixed so ledgers do not depend on the token estimator
    def resp(text, pt, ct):
        return {"text": text, "usage": {"prompt_tokens": pt, "completion_tokens": ct}, "wall_time_s": 1.5}

    return {"rules": [
        {"contains": "Review the previous investigation", "responses": [resp(REFINE_RESPONSE, 2400, 310)]},
        {"contains": "Analyze the command lines", "responses": [resp(MEI_RESPONSE, 820, 140)]},
        {"contains": "Inspect the provided provenance graph",
         "responses": [resp(t, 2100, 290 + 10 * i) for i, t in enumerate(ACR_RESPONSES)]},
    ]}


def write_synthetic(root, *, seed: int = 7, vote_k: int = 3, single_shot: bool = False,
                    reflection: str = "none", run_seed: int = 0) -> Path:
    """Write data, mock fixtures and a run config under ``root``; returns the config path."""
    root = Path(root)
    data = root / "data"
    fixtures = root / "fixtures"
    data.mkdir(parents=True, exist_ok=True)
    fixtures.mkdir(parents=True, exist_ok=True)
    log, truth = build_synthetic(seed)
    write_event_log(log, data / "events.jsonl", data / "entities.jsonl")
    write_ground_truth(truth, data / "labels.json")
    (fixtures / "index.json").write_text(json.dumps(mock_rules(), indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
    config = {
        "datasets": [{"name": "synthetic", "events": "data/events.jsonl", "entities": "data/entities.jsonl",
                      "labels": "data/labels.json", "environment": "a FreeBSD web server"}],
        "endpoints": [{"name": "mock-model", "active": True, "max_context_tokens": 131072,
                       "price_per_1k_prompt": "0.005", "price_per_1k_completion": "0.025"}],
        "detection": {"k_hop": 2, "vote_k": vote_k, "reflection": reflection, "single_shot": single_shot},
        "seed": run_seed,
        "output_dir": "out",
        "forbidden_tokens": ["malicious_event_ids", "attack label"],
        "mock_fixtures": "fixtures",
    }
    path = root / "config.json"
    path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
