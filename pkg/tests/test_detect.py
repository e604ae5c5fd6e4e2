import itertools
import random

import pytest

from oracles import majority_oracle
from provhids.detect import (
    DetectionConfig,
    expansion_subgraph,
    identify_evidence,
    majority_vote,
    reconstruct_chain,
    resolve_commands,
    run_acr_samples,
    run_detection,
    self_reflect,
    window_cmdlines,
)
from provhids.errors import DetectionError
from provhids.ingest import Entity, Event
from provhids.llmclient import Completion, FunctionBackend, InvestigationReport, LLMClient, ModelEndpoint, format_report
from provhids.provgraph import build_graph, parse_serialized
from provhids.segment import AttackInterval, AttackWindow, build_attack_window
from provhids.synthetic import ACR_RESPONSES, MEI_RESPONSE, build_synthetic

ENV = "a FreeBSD server"
EP = ModelEndpoint("m", price_per_1k_prompt="0.001", price_per_1k_completion="0.002")


def rep(files=(), procs=(), ips=(), narrative=""):
    return InvestigationReport(narrative, (), frozenset(ips), frozenset(procs), frozenset(files))


def scripted(mei=None, acr=None, refine=None):
    """Backend answering by prompt kind; each entry is a str or a function of (prompt, index)."""
    calls = []

    def fn(prompt, i):
        if prompt.startswith("Analyze the command lines"):
            kind, src = "mei", mei
        elif prompt.startswith("Inspect the provided"):
            kind, src = "acr", acr
        else:
            kind, src = "refine", refine
        calls.append((kind, i, prompt))
        out = src(prompt, i) if callable(src) else src
        return Completion(out, 10, 5)

    return FunctionBackend(fn), calls


def synthetic_window():
    log, truth = build_synthetic()
    return build_attack_window(log, AttackInterval(truth.t_s, truth.t_e)), log.entities


class TestConfig:
    @pytest.mark.parametrize("kw", [{"vote_k": 2}, {"vote_k": 0}, {"k_hop": -1}, {"reflection": "x"},
                                    {"vote_rule": "plurality"}, {"expand_scope": "all"}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            DetectionConfig(**kw)

    def test_single_shot_is_vote_one(self):
        cfg = DetectionConfig(vote_k=5, single_shot=True)
        assert cfg.vote_k == 1
        assert cfg.to_dict() == DetectionConfig(vote_k=1).to_dict()
        assert DetectionConfig.from_dict({**cfg.to_dict(), "bogus": 1}) == DetectionConfig(vote_k=1)


class TestEvidence:
    def test_gtcache_via_sh(self, tiny_entities):
        ents = dict(tiny_entities, sh=Entity("sh", "process", "/bin/sh"))
        w = AttackWindow((), (Event("a", 1, "EVENT_EXECUTE", "sh", "p2", "./gtcache"),
                              Event("b", 2, "EVENT_READ", "p1", "f2", "nginx")), ())
        backend, _ = scripted(mei="Summarize All Highly Suspicious Commands:\n1. ./gtcache\n")
        ev = identify_evidence(w, LLMClient(EP, backend), ENV)
        assert ev.commands == (("./gtcache", ""),)
        assert ev.seed_entities == {"sh"} and not ev.fallback

    def test_no_cmdlines(self):
        w = AttackWindow((), (Event("a", 1, "EVENT_EXIT", "p"),), ())
        backend, calls = scripted()
        ev = identify_evidence(w, LLMClient(EP, backend), ENV)
        assert ev.status == "no_cmdlines" and ev.fallback and calls == []

    def test_ten_commands_three_flagged(self):
        events = [Event(f"e{i}", i, "EVENT_EXECUTE", f"p{i}", cmdline=f"tool{i} --run") for i in range(10)]
        w = AttackWindow((), tuple(events), ())
        flagged = ["tool2 --run", "tool5 --run", "tool7 --run"]
        summary = "Summarize All Highly Suspicious Commands:\n" + "".join(f"- {c}\n" for c in flagged)
        backend, _ = scripted(mei=summary)
        ev = identify_evidence(w, LLMClient(EP, backend), ENV)
        # exhaustive scan: subjects of events whose cmdline equals a flagged command
        want = {e.subject_id for e in events for c in flagged if e.cmdline == c}
        assert ev.seed_entities == want == {"p2", "p5", "p7"}

    def test_token_subset_resolution(self):
        w = AttackWindow((), (Event("a", 1, "T", "p", cmdline="/bin/sh -c ./gtcache -d"),), ())
        assert resolve_commands(["./gtcache"], w) == {"p"}
        assert resolve_commands(["./other"], w) == set()

    def test_cmdlines_distinct_in_order(self):
        w = AttackWindow((Event("a", 1, "T", "p", cmdline="x"),),
                         (Event("b", 2, "T", "p", cmdline="y"), Event("c", 3, "T", "p", cmdline="x")), ())
        assert window_cmdlines(w) == ["x", "y"]

    def test_overflow_splits_batches(self):
        events = [Event(f"e{i}", i, "T", "p", cmdline=f"cmd-{i}-" + "z" * 200) for i in range(8)]
        w = AttackWindow((), tuple(events), ())
        backend, calls = scripted(mei="Summarize All Highly Suspicious Commands:\n- none\n")
        small = ModelEndpoint("s", max_context_tokens=400)
        ev = identify_evidence(w, LLMClient(small, backend), ENV)
        assert len(calls) > 1 and ev.status == "no_evidence"
        seen = [c for _, _, p in calls for c in window_cmdlines(w) if c in p]
        assert sorted(seen) == sorted(window_cmdlines(w))


class TestAcr:
    def test_payloads_differ_only_in_order(self):
        w, ents = synthetic_window()
        graph = build_graph(w, ents)
        backend, _ = scripted(mei=MEI_RESPONSE, acr=lambda p, i: ACR_RESPONSES[i % 3])
        client = LLMClient(EP, backend)
        ev = identify_evidence(w, client, ENV)
        samples = run_acr_samples(graph, ev, DetectionConfig(vote_k=3, rng_seed=11), client, ENV)
        assert len(samples) == 3
        texts = [s.payload.text for s in samples]
        assert len(set(texts)) == 3
        parsed = [parse_serialized(t) for t in texts]
        assert parsed[0] == parsed[1] == parsed[2] == expansion_subgraph(graph, ev, 2)

    def test_vote_one_single_report(self):
        w, ents = synthetic_window()
        backend, _ = scripted(mei=MEI_RESPONSE, acr=ACR_RESPONSES[0])
        client = LLMClient(EP, backend)
        ev = identify_evidence(w, client, ENV)
        assert len(reconstruct_chain(build_graph(w, ents), ev, DetectionConfig(vote_k=1), client, ENV)) == 1

    def test_all_unparseable(self):
        w, ents = synthetic_window()
        backend, _ = scripted(mei=MEI_RESPONSE, acr="sorry")
        client = LLMClient(EP, backend)
        ev = identify_evidence(w, client, ENV)
        with pytest.raises(DetectionError) as exc:
            run_acr_samples(build_graph(w, ents), ev, DetectionConfig(vote_k=3), client, ENV)
        assert exc.value.raw_texts == ["sorry"] * 3

    def test_fallback_uses_whole_graph(self):
        w, ents = synthetic_window()
        backend, _ = scripted(mei="Summarize All Highly Suspicious Commands:\n- None\n", acr=ACR_RESPONSES[0])
        client = LLMClient(EP, backend)
        res = run_detection(w, ents, DetectionConfig(vote_k=1), client, ENV)
        assert res.evidence.fallback and res.subgraph == build_graph(w, ents)


class TestVote:
    def test_identity(self):
        r = rep({"/a"}, {"x"}, {"1.1.1.1"}, "n")
        assert majority_vote([r]) == r

    def test_hand_example(self):
        out = majority_vote([rep({"A", "B"}), rep({"A"}), rep({"A", "C"})])
        assert out.ioc_files == {"A"}

    def test_abstentions_count(self):
        # 2 of 5 configured samples parsed: nothing reaches 3 votes
        assert majority_vote([rep({"A"}), rep({"A"})], vote_k=5).ioc_files == frozenset()
        assert majority_vote([rep({"A"}), rep({"A"})], vote_k=3).ioc_files == {"A"}

    def test_narrative_from_best_overlap(self):
        reps = [rep({"Z"}, narrative="n0"), rep({"A", "B"}, narrative="n1"), rep({"A", "B"}, narrative="n2")]
        assert majority_vote(reps).narrative == "n1"

    def test_per_category(self):
        reps = [rep(files={"x"}), rep(procs={"x"}), rep(files={"x"})]
        out = majority_vote(reps)
        assert out.ioc_files == {"x"} and out.ioc_processes == frozenset()

    def test_normalization_merges(self):
        out = majority_vote([rep({"/tmp/a"}), rep({"`/tmp//a`"}), rep({"/tmp/b"})])
        assert out.ioc_files == {"/tmp/a"}

    @pytest.mark.parametrize("vote_k", [1, 3, 5])
    def test_exhaustive_small(self, vote_k):
        iocs = ["a", "b", "c"]
        subsets = [set(s) for n in range(4) for s in itertools.combinations(iocs, n)]
        for pattern in itertools.product(subsets, repeat=vote_k):
            got = majority_vote([rep(s) for s in pattern]).ioc_files
            assert got == majority_oracle(list(pattern), vote_k)

    def test_empty(self):
        with pytest.raises(ValueError):
            majority_vote([])


class TestReflect:
    def run(self, reflection, refine, vote_k=3):
        w, ents = synthetic_window()
        backend, calls = scripted(mei=MEI_RESPONSE, acr=lambda p, i: ACR_RESPONSES[i % 3], refine=refine)
        cfg = DetectionConfig(vote_k=vote_k, reflection=reflection, rng_seed=3)
        return run_detection(w, ents, cfg, LLMClient(EP, backend), ENV), calls

    @staticmethod
    def echo(prompt, i):
        # identity refiner: return the previous investigation verbatim
        return prompt.split("- Previous Investigation:\n", 1)[1].split("\n- Output Format:", 1)[0]

    @pytest.mark.parametrize("strategy", ["ref_then_agg", "agg_then_ref"])
    def test_identity_refiner(self, strategy):
        base, _ = self.run("none", None)
        out, calls = self.run(strategy, self.echo)
        assert out.voted.tagged_iocs() == base.voted.tagged_iocs()
        n_refine = sum(1 for k, _, _ in calls if k == "refine")
        assert n_refine == (3 if strategy == "ref_then_agg" else 1)

    def test_agg_then_ref_drop_one_file(self):
        base, _ = self.run("none", None)
        dropped = sorted(base.voted.ioc_files)[0]

        def refiner(prompt, i):
            r = InvestigationReport.from_dict({"iocs": {c: sorted(base.voted.iocs(c)) for c in ("ips", "processes")}
                                               | {"files": sorted(base.voted.ioc_files - {dropped})}})
            return format_report(r)

        out, _ = self.run("agg_then_ref", refiner)
        assert out.voted.ioc_files == base.voted.ioc_files - {dropped}
        assert out.voted.ioc_processes == base.voted.ioc_processes

    def test_unparseable_refinement_keeps_original(self):
        base, _ = self.run("none", None)
        out, _ = self.run("ref_then_agg", "garbage")
        assert out.voted.tagged_iocs() == base.voted.tagged_iocs()
        assert all(t["error"] for t in out.reflection)

    def test_unknown_strategy(self):
        with pytest.raises(ValueError):
            self_reflect([rep()], "both", None, payloads=[], env=ENV)


class TestSingleShot:
    @pytest.mark.parametrize("reflection", ["none", "ref_then_agg", "agg_then_ref"])
    def test_equals_vote_one(self, reflection):
        w, ents = synthetic_window()
        arts = []
        for cfg in (DetectionConfig(vote_k=1, reflection=reflection), DetectionConfig(single_shot=True,
                                                                                      reflection=reflection)):
            backend, _ = scripted(mei=MEI_RESPONSE, acr=ACR_RESPONSES[2],
                                  refine=TestReflect.echo)
            arts.append(run_detection(w, ents, cfg, LLMClient(EP, backend), ENV).to_artifact())
        assert arts[0] == arts[1]

    def test_seeded_determinism(self):
        w, ents = synthetic_window()
        outs = []
        for _ in range(2):
            backend, _ = scripted(mei=MEI_RESPONSE, acr=lambda p, i: random.Random(p).choice(ACR_RESPONSES))
            outs.append(run_detection(w, ents, DetectionConfig(rng_seed=99), LLMClient(EP, backend), ENV)
                        .to_artifact())
        assert outs[0] == outs[1]
