"""Attack-centric windows: the attack interval flanked by equal-duration benign context.

Segment boundaries::

    pre    = [t_s - dt, t_s)     clipped at 0
    attack = [t_s, t_e]
    post   = (t_e, t_e + dt]

with ``dt = t_e - t_s``.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, replace
from typing import Callable, Iterable

from .errors import IntervalError, ParseError
from .ingest import Event, EventLog, _event_from_record

SEGMENTS = ("pre", "attack", "post")

TokenEstimator = Callable[[str], int]


def default_token_estimator(text: str) -> int:
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class AttackInterval:
    t_s: int
    t_e: int

    def __post_init__(self):
        if self.t_s < 0:
            raise IntervalError(f"t_s must be >= 0, got {self.t_s}")
        if self.t_s >= self.t_e:
            raise IntervalError(f"attack interval needs t_s < t_e, got [{self.t_s}, {self.t_e}]")

    @property
    def delta_t(self) -> int:
        return self.t_e - self.t_s

    @property
    def pre_start(self) -> int:
        return max(0, self.t_s - self.delta_t)

    @property
    def post_end(self) -> int:
        return self.t_e + self.delta_t


@dataclass(frozen=True)
class AttackWindow:
    pre: tuple[Event, ...]
    attack: tuple[Event, ...]
    post: tuple[Event, ...]
    interval: AttackInterval | None = None
    token_estimate: int = 0

    def __post_init__(self):
        for name in SEGMENTS:
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.token_estimate < 0:
            raise ValueError("token_estimate must be >= 0")

    @property
    def events(self) -> tuple[Event, ...]:
        return self.pre + self.attack + self.post

    def segments(self) -> Iterable[tuple[str, Event]]:
        for name in SEGMENTS:
            for ev in getattr(self, name):
                yield name, ev

    def __len__(self):
        return len(self.pre) + len(self.attack) + len(self.post)


@dataclass(frozen=True)
class BudgetViolation:
    token_estimate: int
    limit: int

    @property
    def excess(self) -> int:
        return self.token_estimate - self.limit


def build_attack_window(
    log: EventLog,
    interval: AttackInterval,
    estimator: TokenEstimator = default_token_estimator,
) -> AttackWindow:
    stamps = [ev.timestamp_ns for ev in log.events]
    # bisect over the sorted timestamp column; boundaries follow the module docstring
    lo = bisect.bisect_left(stamps, interval.pre_start)
    a0 = bisect.bisect_left(stamps, interval.t_s)
    a1 = bisect.bisect_right(stamps, interval.t_e)
    hi = bisect.bisect_right(stamps, interval.post_end)
    window = AttackWindow(log.events[lo:a0], log.events[a0:a1], log.events[a1:hi], interval)
    return replace(window, token_estimate=estimate_tokens(window, estimator))


def dump_window(window: AttackWindow) -> str:
    """Line-delimited events, each tagged with its segment. Empty window -> ``""``."""
    lines = []
    for name, ev in window.segments():
        rec = ev.to_record()
        rec["segment"] = name
        lines.append(json.dumps(rec, sort_keys=True))
    return "".join(line + "\n" for line in lines)


def load_window(text: str, interval: AttackInterval | None = None,
                estimator: TokenEstimator = default_token_estimator) -> AttackWindow:
    parts: dict[str, list[Event]] = {name: [] for name in SEGMENTS}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
        seg = rec.pop("segment", None)
        if seg not in parts:
            raise ParseError(f"bad segment tag {seg!r}", lineno)
        parts[seg].append(_event_from_record(rec, lineno))
    window = AttackWindow(parts["pre"], parts["attack"], parts["post"], interval)
    return replace(window, token_estimate=estimate_tokens(window, estimator))


def estimate_tokens(window: AttackWindow, estimator: TokenEstimator = default_token_estimator) -> int:
    return estimator(dump_window(window))


def check_budget(window: AttackWindow, limit: int) -> BudgetViolation | None:
    if window.token_estimate > limit:
        return BudgetViolation(window.token_estimate, limit)
    return None


def trim_to_budget(
    window: AttackWindow,
    limit: int,
    estimator: TokenEstimator = default_token_estimator,
) -> tuple[AttackWindow, BudgetViolation | None]:
    """Drop benign context farthest from the attack, alternating post/pre, until under ``limit``.

    Attack-segment events are never removed, so the returned violation may be
    non-None if the attack segment alone is over budget.
    """
    if check_budget(window, limit) is None:
        return window, None
    # removal order: latest post, earliest pre, latest post, ... (one side runs dry -> other side)
    order = []
    pre_i, post_i = 0, len(window.post)
    take_post = True
    while pre_i < len(window.pre) or post_i > 0:
        if (take_post and post_i > 0) or pre_i >= len(window.pre):
            post_i -= 1
            order.append(("post", post_i))
        else:
            order.append(("pre", pre_i))
            pre_i += 1
        take_post = not take_post

    def trimmed(n: int) -> AttackWindow:
        n_pre = sum(1 for seg, _ in order[:n] if seg == "pre")
        n_post = n - n_pre
        w = AttackWindow(window.pre[n_pre:], window.attack,
                         window.post[:len(window.post) - n_post], window.interval)
        return replace(w, token_estimate=estimate_tokens(w, estimator))

    # estimator is monotone in length, so the smallest sufficient n is found by bisection
    lo, hi = 0, len(order)
    while lo < hi:
        mid = (lo + hi) // 2
        if check_budget(trimmed(mid), limit) is None:
            hi = mid
        else:
            lo = mid + 1
    current = trimmed(lo)
    return current, check_budget(current, limit)
