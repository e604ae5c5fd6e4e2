"""Detection flow: evidence identification, k-hop context, chain reconstruction, voting, reflection."""

from __future__ import annotations

import hashlib
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import BudgetError, DetectionError, ResponseParseError
from .ingest import Entity
from .llmclient import (
    ACR,
    IOC_CATEGORIES,
    MEI,
    REFINE,
    InvestigationReport,
    LLMClient,
    format_report,
    normalize_ioc,
    parse_acr_response,
    parse_mei_reasons,
    parse_mei_response,
    render_prompt,
)
from .provgraph import ProvenanceGraph, SerializedGraph, build_graph, khop_expand, serialize_shuffled
from .rng import derive_seed
from .segment import AttackWindow, trim_to_budget

log = logging.getLogger(__name__)

REFLECTION_STRATEGIES = ("none", "ref_then_agg", "agg_then_ref")


@dataclass(frozen=True)
class DetectionConfig:
    k_hop: int = 2
    vote_k: int = 3
    vote_rule: str = "strict_majority"
    reflection: str = "none"
    rng_seed: int = 0
    expand_scope: str = "window"  # "window" or "log"
    # one ACR sample whose report is used as-is, without the voting step
    single_shot: bool = False

    def __post_init__(self):
        if self.single_shot:
            object.__setattr__(self, "vote_k", 1)
        if self.k_hop < 0:
            raise ValueError("k_hop must be >= 0")
        if self.vote_k < 1 or self.vote_k % 2 == 0:
            raise ValueError("vote_k must be a positive odd number")
        if self.vote_rule != "strict_majority":
            raise ValueError(f"unsupported vote rule {self.vote_rule!r}")
        if self.reflection not in REFLECTION_STRATEGIES:
            raise ValueError(f"reflection must be one of {REFLECTION_STRATEGIES}")
        if self.expand_scope not in ("window", "log"):
            raise ValueError("expand_scope must be 'window' or 'log'")

    def to_dict(self) -> dict:
        # effective parameters only: single-shot is recorded as vote_k=1
        return {"k_hop": self.k_hop, "vote_k": self.vote_k, "vote_rule": self.vote_rule,
                "reflection": self.reflection, "rng_seed": self.rng_seed,
                "expand_scope": self.expand_scope}

    @classmethod
    def from_dict(cls, data: Mapping) -> "DetectionConfig":
        known = {"k_hop", "vote_k", "vote_rule", "reflection", "rng_seed", "expand_scope", "single_shot"}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass(frozen=True)
class EvidenceSet:
    commands: tuple[tuple[str, str], ...] = ()
    seed_entities: frozenset[str] = frozenset()
    status: str = "ok"  # ok | no_cmdlines | no_evidence
    raw_responses: tuple[str, ...] = ()

    @property
    def fallback(self) -> bool:
        return not self.seed_entities

    def to_dict(self) -> dict:
        return {"commands": [list(c) for c in self.commands],
                "seed_entities": sorted(self.seed_entities),
                "status": self.status,
                "raw_responses": list(self.raw_responses)}


def window_cmdlines(window: AttackWindow) -> list[str]:
    """Distinct non-empty command lines in window order."""
    seen: dict[str, None] = {}
    for ev in window.events:
        if ev.cmdline and ev.cmdline.strip():
            seen.setdefault(ev.cmdline, None)
    return list(seen)


def resolve_commands(commands: Iterable[str], window: AttackWindow) -> set[str]:
    """Subject entities of the events each command refers to.

    Exact command-line match wins; otherwise an event matches when the
    command's whitespace tokens are a subset of the event's.
    """
    events = [ev for ev in window.events if ev.cmdline]
    seeds: set[str] = set()
    for cmd in commands:
        target = cmd.strip()
        hits = [ev for ev in events if ev.cmdline.strip() == target]
        if not hits:
            tokens = set(target.split())
            if tokens:
                hits = [ev for ev in events if tokens <= set(ev.cmdline.split())]
        seeds.update(ev.subject_id for ev in hits)
    return seeds


def _mei_batches(cmdlines: list[str], env: str, client: LLMClient, forbidden) -> list[tuple[list[str], str]]:
    try:
        prompt = render_prompt(MEI, cmdlines, env, forbidden=forbidden,
                               max_context_tokens=client.endpoint.max_context_tokens,
                               estimator=client.estimator)
        return [(cmdlines, prompt)]
    except BudgetError:
        if len(cmdlines) == 1:
            raise
    mid = len(cmdlines) // 2
    return (_mei_batches(cmdlines[:mid], env, client, forbidden)
            + _mei_batches(cmdlines[mid:], env, client, forbidden))


def identify_evidence(window: AttackWindow, client: LLMClient, env: str, *,
                      forbidden: Iterable[str] = (), dataset: str = "", run_id: str = "") -> EvidenceSet:
    cmdlines = window_cmdlines(window)
    if not cmdlines:
        return EvidenceSet(status="no_cmdlines")
    forbidden = tuple(forbidden)
    commands: list[str] = []
    reasons: dict[str, str] = {}
    raws = []
    # one batch unless the prompt overflows the context, then halve recursively
    for batch, prompt in _mei_batches(cmdlines, env, client, forbidden):
        [(text, _usage)] = client.complete(prompt, 1, dataset=dataset, stage="mei", run_id=run_id)
        raws.append(text)
        for cmd in parse_mei_response(text, known_commands=batch):
            if cmd not in commands:
                commands.append(cmd)
        for cmd, why in parse_mei_reasons(text, known_commands=batch).items():
            reasons.setdefault(cmd, why)
    seeds = resolve_commands(commands, window)
    return EvidenceSet(
        commands=tuple((c, reasons.get(c, "")) for c in commands),
        seed_entities=frozenset(seeds),
        status="ok" if seeds else "no_evidence",
        raw_responses=tuple(raws),
    )


@dataclass
class AcrSample:
    index: int
    seed: int
    payload: SerializedGraph
    raw_text: str
    usage: object
    report: InvestigationReport | None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "seed": self.seed,
            "payload": self.payload.text,
            "payload_sha256": hashlib.sha256(self.payload.text.encode()).hexdigest(),
            "raw_text": self.raw_text,
            "usage": self.usage.to_dict(),
            "report": self.report.to_dict() if self.report else None,
            "error": self.error,
        }


def expansion_subgraph(graph: ProvenanceGraph, evidence: EvidenceSet, k_hop: int) -> ProvenanceGraph:
    """k-hop context around the evidence seeds; the whole graph when there are none."""
    if evidence.fallback:
        return graph
    return khop_expand(graph, evidence.seed_entities & set(graph.nodes), k_hop)


def run_acr_samples(graph: ProvenanceGraph, evidence: EvidenceSet, config: DetectionConfig,
                    client: LLMClient, env: str, *, forbidden: Iterable[str] = (),
                    dataset: str = "", run_id: str = "") -> list[AcrSample]:
    sub = expansion_subgraph(graph, evidence, config.k_hop)
    forbidden = tuple(forbidden)
    # samples are requested one at a time so each gets its own permutation
    temperature = client.endpoint.sampling.temperature_for(config.vote_k)
    samples = []
    for i in range(config.vote_k):
        seed = derive_seed(config.rng_seed, i)
        payload = serialize_shuffled(sub, seed)
        prompt = render_prompt(ACR, payload, env, forbidden=forbidden,
                               max_context_tokens=client.endpoint.max_context_tokens,
                               estimator=client.estimator)
        [(text, usage)] = client.complete(prompt, 1, sample_offset=i, dataset=dataset,
                                          stage="acr", run_id=run_id, temperature=temperature)
        try:
            report, err = parse_acr_response(text), None
        except ResponseParseError as exc:
            report, err = None, str(exc)
            log.warning("sample %d: %s", i, exc)
        samples.append(AcrSample(i, seed, payload, text, usage, report, err))
    if all(s.report is None for s in samples):
        raise DetectionError("no sample produced a parseable investigation report",
                             [s.raw_text for s in samples])
    return samples


def reconstruct_chain(graph: ProvenanceGraph, evidence: EvidenceSet, config: DetectionConfig,
                      client: LLMClient, env: str, **kwargs) -> list[InvestigationReport]:
    """One parsed report per sample; unparseable samples are dropped."""
    samples = run_acr_samples(graph, evidence, config, client, env, **kwargs)
    return [s.report for s in samples if s.report is not None]


def majority_vote(reports: Sequence[InvestigationReport], vote_k: int | None = None) -> InvestigationReport:
    """Keep each IoC named by strictly more than ``vote_k / 2`` reports, per category.

    ``vote_k`` defaults to ``len(reports)``; passing the configured sample count
    makes unparseable samples count as abstentions. The narrative and steps come
    from the report overlapping most with the voted IoCs (earliest on ties).
    """
    if not reports:
        raise ValueError("majority_vote needs at least one report")
    k = len(reports) if vote_k is None else vote_k
    voted: dict[str, frozenset[str]] = {}
    for cat in IOC_CATEGORIES:
        counts = Counter()
        for rep in reports:
            counts.update({normalize_ioc(cat, v) for v in rep.iocs(cat)})
        voted[cat] = frozenset(v for v, c in counts.items() if 2 * c > k)
    voted_tagged = {(cat, v) for cat, vals in voted.items() for v in vals}
    best = max(range(len(reports)),
               key=lambda i: (len(reports[i].tagged_iocs() & voted_tagged), -i))
    rep = reports[best]
    return InvestigationReport(rep.narrative, rep.key_steps, voted["ips"], voted["processes"], voted["files"])


def _refine(report: InvestigationReport, payload: SerializedGraph, client: LLMClient, env: str,
            index: int, forbidden, dataset: str, run_id: str, trace: list | None) -> InvestigationReport:
    prompt = render_prompt(REFINE, payload, env, report_text=format_report(report), forbidden=forbidden,
                           max_context_tokens=client.endpoint.max_context_tokens,
                           estimator=client.estimator)
    [(text, usage)] = client.complete(prompt, 1, sample_offset=index, dataset=dataset,
                                      stage="reflect", run_id=run_id)
    try:
        refined, err = parse_acr_response(text), None
    except ResponseParseError as exc:
        refined, err = report, str(exc)
        log.warning("refinement %d unparseable, keeping the original report", index)
    if trace is not None:
        trace.append({"index": index, "raw_text": text, "usage": usage.to_dict(),
                      "report": refined.to_dict(), "error": err})
    return refined


def self_reflect(reports: Sequence[InvestigationReport], strategy: str, client: LLMClient, *,
                 payloads: Sequence[SerializedGraph], env: str, vote_k: int | None = None,
                 forbidden: Iterable[str] = (), dataset: str = "", run_id: str = "",
                 trace: list | None = None) -> InvestigationReport:
    """``ref_then_agg`` refines every sample then votes; ``agg_then_ref`` votes then refines once.

    ``payloads[i]`` is the serialized graph sample ``i`` was produced from.
    """
    if strategy not in ("ref_then_agg", "agg_then_ref"):
        raise ValueError(f"unknown reflection strategy {strategy!r}")
    forbidden = tuple(forbidden)
    if strategy == "ref_then_agg":
        refined = [_refine(rep, payloads[i], client, env, i, forbidden, dataset, run_id, trace)
                   for i, rep in enumerate(reports)]
        return majority_vote(refined, vote_k)
    agg = majority_vote(reports, vote_k)
    return _refine(agg, payloads[0], client, env, 0, forbidden, dataset, run_id, trace)


@dataclass
class DetectionResult:
    config: DetectionConfig
    model: str
    evidence: EvidenceSet
    subgraph: ProvenanceGraph
    samples: list[AcrSample]
    voted: InvestigationReport
    reflection: list = field(default_factory=list)
    trimmed: bool = False

    def to_artifact(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "model": self.model,
            "evidence": self.evidence.to_dict(),
            "subgraph": {"nodes": len(self.subgraph.nodes), "edges": len(self.subgraph.edges),
                         "fallback": self.evidence.fallback, "trimmed": self.trimmed},
            "samples": [s.to_dict() for s in self.samples],
            "reflection": self.reflection,
            "voted": self.voted.to_dict(),
        }


def _fit_window(window: AttackWindow, entities, config, client, env, forbidden) -> tuple[AttackWindow, bool]:
    """Shrink benign context until the full-window ACR prompt fits the endpoint's context."""
    limit = client.endpoint.max_context_tokens

    def prompt_tokens(w):
        payload = serialize_shuffled(build_graph(w, entities), derive_seed(config.rng_seed, 0))
        return client.estimator(render_prompt(ACR, payload, env, forbidden=forbidden))

    need = prompt_tokens(window)
    if need <= limit:
        return window, False
    current = window
    for _ in range(32):
        target = max(0, int(current.token_estimate * limit / need * 0.95))
        current, _violation = trim_to_budget(current, target)
        need = prompt_tokens(current)
        if need <= limit or not (current.pre or current.post):
            break
    return current, True


def run_detection(window: AttackWindow, entities: Mapping[str, Entity], config: DetectionConfig,
                  client: LLMClient, env: str, *, forbidden: Iterable[str] = (), log_graph=None,
                  dataset: str = "", run_id: str = "") -> DetectionResult:
    """Full flow for one window. ``log_graph`` is used for expansion when ``expand_scope == "log"``."""
    forbidden = tuple(forbidden)
    tags = {"dataset": dataset, "run_id": run_id}
    evidence = identify_evidence(window, client, env, forbidden=forbidden, **tags)
    trimmed = False
    if evidence.fallback:
        window, trimmed = _fit_window(window, entities, config, client, env, forbidden)
        graph = build_graph(window, entities)
    elif config.expand_scope == "log" and log_graph is not None:
        graph = log_graph
    else:
        graph = build_graph(window, entities)
    samples = run_acr_samples(graph, evidence, config, client, env, forbidden=forbidden, **tags)
    parsed = [s for s in samples if s.report is not None]
    reports = [s.report for s in parsed]
    trace: list = []
    if config.single_shot:
        voted = reports[0]
        if config.reflection != "none":
            voted = _refine(voted, parsed[0].payload, client, env, 0, forbidden, dataset, run_id, trace)
    elif config.reflection == "none":
        voted = majority_vote(reports, config.vote_k)
    else:
        voted = self_reflect(reports, config.reflection, client, payloads=[s.payload for s in parsed],
                             env=env, vote_k=config.vote_k, forbidden=forbidden, trace=trace, **tags)
    subgraph = expansion_subgraph(graph, evidence, config.k_hop)
    return DetectionResult(config, client.endpoint.name, evidence, subgraph, samples, voted, trace, trimmed)
