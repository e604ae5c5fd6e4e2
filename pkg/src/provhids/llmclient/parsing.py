"""Lenient parsers for model responses.

Real outputs drift from the requested format (bold headers, missing colons,
bullets vs. numbering), so section headers are matched case-insensitively
after stripping markdown decoration.
"""

from __future__ import annotations

import ipaddress
import posixpath
import re
import warnings
from dataclasses import dataclass, field
from typing import Iterable

from ..errors import ResponseParseError, ResponseParseWarning

IOC_CATEGORIES = ("ips", "processes", "files")


@dataclass(frozen=True)
class InvestigationReport:
    narrative: str = ""
    key_steps: tuple[tuple[str, str], ...] = ()
    ioc_ips: frozenset[str] = field(default_factory=frozenset)
    ioc_processes: frozenset[str] = field(default_factory=frozenset)
    ioc_files: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "key_steps", tuple((str(t), str(d)) for t, d in self.key_steps))
        for cat in IOC_CATEGORIES:
            name = f"ioc_{cat}"
            values = frozenset(normalize_ioc(cat, v) for v in getattr(self, name))
            if "" in values:
                raise ValueError(f"empty IOC in {name}")
            object.__setattr__(self, name, values)

    def iocs(self, category: str) -> frozenset[str]:
        return getattr(self, f"ioc_{category}")

    def tagged_iocs(self) -> set[tuple[str, str]]:
        return {(cat, v) for cat in IOC_CATEGORIES for v in self.iocs(cat)}

    def to_dict(self) -> dict:
        return {
            "narrative": self.narrative,
            "key_steps": [list(step) for step in self.key_steps],
            "iocs": {cat: sorted(self.iocs(cat)) for cat in IOC_CATEGORIES},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "InvestigationReport":
        iocs = data.get("iocs", {})
        return cls(
            narrative=data.get("narrative", ""),
            key_steps=tuple(tuple(s) for s in data.get("key_steps", ())),
            ioc_ips=frozenset(iocs.get("ips", ())),
            ioc_processes=frozenset(iocs.get("processes", ())),
            ioc_files=frozenset(iocs.get("files", ())),
        )


_QUOTES = "`'\"‘’“”"


def _strip_quotes(value: str) -> str:
    value = value.strip()
    while len(value) >= 2 and value[0] in _QUOTES and value[-1] in _QUOTES:
        value = value[1:-1].strip()
    return value


def normalize_ioc(category: str, value: str) -> str:
    value = _strip_quotes(value)
    if category == "files" and value.startswith("/"):
        value = posixpath.normpath(value)
    elif category == "ips":
        value = _strip_port(value)
    return value


def _strip_port(value: str) -> str:
    try:
        ipaddress.ip_address(value)
        return value
    except ValueError:
        pass
    m = re.fullmatch(r"(\d{1,3}(?:\.\d{1,3}){3}):\d+", value) or re.fullmatch(r"\[([0-9a-fA-F:]+)\]:\d+", value)
    return m.group(1) if m else value


# numbering must be followed by whitespace so "10.0.0.1" is not read as item "10."
_BULLET = re.compile(r"^\s*(?:[-*•+]\s+|\[?\(?\d+[.)\]]+\]?(?:\s+|$))*")
_DECOR = re.compile(r"[*_#]+")


def _clean(line: str) -> str:
    """Line with bullets, numbering and markdown emphasis removed."""
    line = _BULLET.sub("", line, count=1)
    line = _DECOR.sub("", line)
    return line.strip()


def _is_placeholder(item: str) -> bool:
    return bool(re.fullmatch(r"\[[^\]]*\]\.?|\.\.\.|…", item))


def _is_none(item: str) -> bool:
    low = item.lower().strip(" .")
    return low in ("none", "n/a", "na", "nil", "-") or low.startswith(("none ", "none,", "none:", "no ", "n/a "))


# ---------------------------------------------------------------- MEI

_SUMMARY = re.compile(r"summar\w*\b.*\bsuspicious\b.*\bcommand", re.I)
_CMD_LINE = re.compile(r"command\s*line\s*\d+\s*[:：]\s*(?P<cmd>.*\S)", re.I)
_REASON = re.compile(r"^\s*[-*]?\s*\**reason\**\s*[:：]\s*(?P<why>.*\S)", re.I)


def _is_section_break(raw: str) -> bool:
    s = raw.strip()
    if s.startswith("===") or s.startswith("#"):
        return True
    cleaned = _clean(s)
    if re.fullmatch(r"\*\*[^*]+\*\*:?", s):
        return True
    # an unnumbered label line such as "Notes:" starts a new section
    return bool(cleaned) and cleaned.endswith(":") and not _BULLET.match(s).group(0)


def _mei_item(raw: str, known: set[str] | None) -> str:
    item = _BULLET.sub("", raw.strip(), count=1).strip()
    item = _strip_quotes(item)
    if item.endswith(".") and not item.endswith(".."):
        trimmed = _strip_quotes(item[:-1])
        if known is None or item not in known:
            item = trimmed
    return _strip_quotes(item)


def _dedup(items: Iterable[str]) -> list[str]:
    seen, out = set(), []
    for it in items:
        if it and it not in seen:
            seen.add(it)
            out.append(it)
    return out


def parse_mei_response(text: str, known_commands: Iterable[str] | None = None) -> list[str]:
    """Suspicious commands from an evidence-identification response.

    Reads the "Summarize All Highly Suspicious Commands" list; falls back to
    "Command line N:" entries when that section is missing. ``known_commands``
    lets a trailing period be kept when it belongs to a real command.
    """
    known = set(known_commands) if known_commands is not None else None
    lines = text.splitlines()
    summary_at = None
    for i, line in enumerate(lines):
        if _SUMMARY.search(_clean(line)):
            summary_at = i
    if summary_at is not None:
        items = []
        head = lines[summary_at]
        rest = head.split(":", 1)[1].strip() if ":" in _clean(head) else ""
        rest = _DECOR.sub("", rest).strip()
        candidates = [rest] if rest else []
        for raw in lines[summary_at + 1:]:
            if not raw.strip():
                if items:
                    break
                continue
            if _is_section_break(raw) or _CMD_LINE.search(raw):
                break
            candidates.append(raw)
        for raw in candidates:
            item = _mei_item(raw, known)
            if not item or _is_placeholder(item) or _is_none(item):
                continue
            items.append(item)
        return _dedup(items)
    fallback = [_mei_item(m.group("cmd"), known) for m in map(_CMD_LINE.search, lines) if m]
    fallback = _dedup(c for c in fallback if not _is_placeholder(c) and not _is_none(c))
    if not fallback and summary_at is None:
        warnings.warn("no suspicious-command summary or 'Command line N:' entries found",
                      ResponseParseWarning, stacklevel=2)
    return fallback


def parse_mei_reasons(text: str, known_commands: Iterable[str] | None = None) -> dict[str, str]:
    """Map each "Command line N:" entry to the "Reason:" line that follows it."""
    known = set(known_commands) if known_commands is not None else None
    reasons: dict[str, str] = {}
    current = None
    for line in text.splitlines():
        m = _CMD_LINE.search(line)
        if m:
            current = _mei_item(m.group("cmd"), known)
            reasons.setdefault(current, "")
            continue
        r = _REASON.match(line)
        if r and current is not None and not reasons[current]:
            reasons[current] = r.group("why").strip()
    return reasons


# ---------------------------------------------------------------- ACR

_HEADERS = [
    ("narrative", r"(?:attack\s+)?narrative|attack\s+summary"),
    ("steps", r"key\s+(?:attack\s+)?steps|timeline|attack\s+steps"),
    ("iocs", r"io[cC]s?|indicators?\s+of\s+compromise(?:\s*\(io[cC]s?\))?"),
    ("ips", r"ips?|ip\s+addresses|suspicious\s+ips?|ips?\s*/\s*domains"),
    ("processes", r"processes|process\s+names|suspicious\s+processes"),
    ("files", r"files|file\s+paths|suspicious\s+files"),
    ("domains", r"domains|suspicious\s+domains"),
]
_HEADER_RE = [
    (name, re.compile(rf"^(?:{pat})\s*(?:\([^)]*\))?\s*(?:[:：]\s*(?P<rest>.*))?$", re.I))
    for name, pat in _HEADERS
]
_SUBSECTIONS = {"ips", "processes", "files", "domains"}


def _header(line: str):
    s = line.strip()
    if not s:
        return None
    if s.startswith("==="):
        return ("end", "")
    cleaned = _clean(s).replace("`", "")
    for name, rx in _HEADER_RE:
        m = rx.match(cleaned)
        if m:
            return (name, (m.group("rest") or "").strip())
    if s.startswith("#") or re.fullmatch(r"\*\*[^*]+\*\*:?", s):
        return ("other", "")
    return None


_TRAILERS = re.compile(r"\s+(?:\(|--|—|–|-\s)")


def _ioc_item(raw: str) -> str:
    item = _BULLET.sub("", raw.strip(), count=1).strip()
    m = re.match(r"`([^`]+)`", item)
    if m:
        return m.group(1).strip()
    item = item.replace("**", "")
    cut = _TRAILERS.search(item)
    if cut:
        item = item[:cut.start()]
    item = _strip_quotes(item).rstrip(",;")
    if item.endswith(".") and not item.endswith(".."):
        item = item[:-1]
    return _strip_quotes(item)


def _split_inline(rest: str) -> list[str]:
    # split on commas/semicolons that are not inside backticks
    parts = re.split(r"[,;](?=(?:[^`]*`[^`]*`)*[^`]*$)", rest)
    return [p for p in parts if p.strip()]


def _step(raw: str) -> tuple[str, str] | None:
    item = _BULLET.sub("", raw.strip(), count=1).strip()
    if not item or _is_placeholder(item):
        return None
    item = item.replace("**", "")
    if ":" in item:
        tactic, desc = item.split(":", 1)
        return (_strip_quotes(tactic.strip().strip("[]")), desc.strip())
    return ("", item)


def parse_acr_response(text: str) -> InvestigationReport:
    """Narrative, key steps and IoC sets from an investigation response.

    Raises ResponseParseError (carrying the raw text) if no section is recognized.
    """
    lines = text.splitlines()
    headers = [_header(line) for line in lines]
    has_ioc_block = any(h and h[0] == "iocs" for h in headers)
    if has_ioc_block:
        # only the last IoC block counts; earlier ones are usually quoted template text
        last_ioc = max(i for i, h in enumerate(headers) if h and h[0] == "iocs")

    narrative: list[str] = []
    steps: list[tuple[str, str]] = []
    iocs: dict[str, list[str]] = {"ips": [], "processes": [], "files": [], "domains": []}
    recognized = False
    section = None
    in_iocs = False

    for i, (line, head) in enumerate(zip(lines, headers)):
        if head is not None and head[0] in _SUBSECTIONS and has_ioc_block and not in_iocs:
            head = None  # IPs:/Files: outside the IoC block are ordinary content
        if head is not None:
            name, rest = head
            if name in ("end", "other"):
                section = None
                in_iocs = False
                continue
            recognized = True
            section = name
            if name in _SUBSECTIONS:
                for part in _split_inline(rest):
                    item = _ioc_item(part)
                    if item and not _is_none(item) and not _is_placeholder(item):
                        iocs[name].append(item)
                continue
            in_iocs = name == "iocs" and (not has_ioc_block or i == last_ioc)
            if name == "narrative":
                narrative = [rest] if rest else []
            elif name == "steps":
                steps = []
                st = _step(rest) if rest else None
                if st:
                    steps.append(st)
            continue
        if section is None or not line.strip():
            continue
        if section == "narrative":
            narrative.append(line.strip())
        elif section == "steps":
            st = _step(line)
            if st:
                steps.append(st)
        elif section in _SUBSECTIONS:
            item = _ioc_item(line)
            if item and not _is_none(item) and not _is_placeholder(item):
                iocs[section].append(item)

    if not recognized:
        raise ResponseParseError("no recognizable sections in investigation response", text)
    return InvestigationReport(
        narrative=" ".join(narrative).strip(),
        key_steps=tuple(steps),
        ioc_ips=frozenset(iocs["ips"]),
        ioc_processes=frozenset(iocs["processes"]),
        ioc_files=frozenset(iocs["files"]),
    )


def format_report(report: InvestigationReport) -> str:
    """Render a report in the requested output format; parse_acr_response inverts it."""
    out = [f"Attack Narrative: {report.narrative}", "Key Steps:"]
    for n, (tactic, desc) in enumerate(report.key_steps, start=1):
        out.append(f"{n}) {tactic}: {desc}")
    out.append("IoCs:")
    for cat, title in (("ips", "IPs"), ("processes", "Processes"), ("files", "Files")):
        values = sorted(report.iocs(cat))
        if not values:
            out.append(f"{title}: None")
            continue
        out.append(f"{title}:")
        out.extend(f"- `{v}`" for v in values)
    return "\n".join(out) + "\n"
