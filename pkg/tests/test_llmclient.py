import json
import threading
from decimal import Decimal
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from provhids.errors import BudgetError, ConfigError, TransportError
from provhids.llmclient import (
    Completion,
    FunctionBackend,
    HttpBackend,
    LLMClient,
    MockBackend,
    ModelEndpoint,
    Sampling,
    TransientError,
    UsageLedger,
    UsageRecord,
    write_fixture,
)

OPUS = ModelEndpoint("opus", price_per_1k_prompt="0.005", price_per_1k_completion="0.025")


class TestCost:
    def test_run_metadata_example(self):
        assert OPUS.cost(24_901, 1_309) == Decimal("0.15723")

    def test_record_validation(self):
        with pytest.raises(ValueError):
            UsageRecord(1, 1, 3, 0.0, 0)
        with pytest.raises(ValueError):
            UsageRecord(-1, 1, 0, 0.0, 0)

    def test_sampling_defaults(self):
        assert Sampling().temperature_for(1) == 0.0
        assert Sampling().temperature_for(5) == 0.7
        assert Sampling(0.3).temperature_for(1) == 0.3

    def test_endpoint_dict_roundtrip(self):
        assert ModelEndpoint.from_dict(OPUS.to_dict()) == OPUS


class TestMock:
    def fixtures(self, tmp_path):
        write_fixture(tmp_path, "hello", [
            {"text": "a", "usage": {"prompt_tokens": 10, "completion_tokens": 1}},
            {"text": "b", "usage": {"prompt_tokens": 10, "completion_tokens": 2}},
            {"text": "c"},
        ])
        (tmp_path / "long.txt").write_text("from file", encoding="utf-8")
        (tmp_path / "index.json").write_text(json.dumps(
            {"rules": [{"contains": "world", "responses": [{"text_file": "long.txt"}]}]}), encoding="utf-8")
        return tmp_path

    def test_per_sample_order_stable(self, tmp_path):
        client = LLMClient(OPUS, MockBackend(self.fixtures(tmp_path)))
        out = client.complete("hello", 3)
        assert [t for t, _ in out] == ["a", "b", "c"]
        assert [u.completion_tokens for _, u in out] == [1, 2, 1]  # "c" falls back to ceil(1/4)
        assert len(client.ledger) == 3
        assert client.complete("hello", 3) == out

    def test_offset_wraps(self, tmp_path):
        client = LLMClient(OPUS, MockBackend(self.fixtures(tmp_path)))
        assert [t for t, _ in client.complete("hello", 2, sample_offset=2)] == ["c", "a"]

    def test_rule_lookup(self, tmp_path):
        client = LLMClient(OPUS, MockBackend(self.fixtures(tmp_path)))
        assert client.complete("hello world!")[0][0] == "from file"

    def test_missing_fixture(self, tmp_path):
        with pytest.raises(ConfigError, match="no mock fixture"):
            LLMClient(OPUS, MockBackend(self.fixtures(tmp_path))).complete("nothing")
        with pytest.raises(ConfigError):
            MockBackend(tmp_path / "absent")

    def test_parallel_same_as_serial(self, tmp_path):
        d = self.fixtures(tmp_path)
        serial = LLMClient(OPUS, MockBackend(d)).complete("hello", 6)
        parallel = LLMClient(OPUS, MockBackend(d), parallelism=4).complete("hello", 6)
        assert serial == parallel


class TestClient:
    def test_retries_then_succeeds(self):
        calls, sleeps = [], []

        def fn(prompt, i):
            calls.append(i)
            if len(calls) < 3:
                raise TransientError("503")
            return "ok"

        client = LLMClient(OPUS, FunctionBackend(fn), max_attempts=3, backoff_s=0.5, sleep=sleeps.append)
        assert client.complete("p")[0][0] == "ok"
        assert sleeps == [0.5, 1.0]

    def test_retries_exhausted(self):
        def fn(prompt, i):
            raise TransientError("timeout")

        client = LLMClient(OPUS, FunctionBackend(fn), max_attempts=2, sleep=lambda s: None)
        with pytest.raises(TransportError, match="giving up after 2"):
            client.complete("p")
        assert len(client.ledger) == 0

    def test_local_budget_check(self):
        small = ModelEndpoint("s", max_context_tokens=2)
        with pytest.raises(BudgetError):
            LLMClient(small, FunctionBackend(lambda p, i: "x")).complete("123456789")

    def test_temperature_passed(self):
        seen = []

        class Recorder:
            def generate(self, endpoint, prompt, sample_index, temperature):
                seen.append(temperature)
                return Completion("x", 1, 1)

        client = LLMClient(OPUS, Recorder())
        client.complete("p", 1)
        client.complete("p", 2)
        client.complete("p", 1, temperature=0.7)
        assert seen == [0.0, 0.7, 0.7, 0.7]

    def test_ledger_roundtrip(self, tmp_path):
        client = LLMClient(OPUS, FunctionBackend(lambda p, i: Completion("x", 24_901, 1_309, 27.54)))
        client.complete("p", dataset="d", stage="acr", run_id="r")
        client.ledger.dump(tmp_path / "l.jsonl")
        back = UsageLedger.load(tmp_path / "l.jsonl")
        assert back.entries == client.ledger.entries
        assert back.entries[0].usage.cost == Decimal("0.15723")


class _Handler(BaseHTTPRequestHandler):
    status = 200
    body = {}
    last = {}

    def do_POST(self):
        n = int(self.headers["Content-Length"])
        type(self).last = {"path": self.path, "auth": self.headers.get("Authorization"),
                           "json": json.loads(self.rfile.read(n))}
        payload = json.dumps(type(self).body).encode()
        self.send_response(type(self).status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    srv = HTTPServer(("127.0.0.1", 0), _Handler)
    t = threading.Thread(target=srv.serve_forever, args=(0.05,), daemon=True)
    t.start()
    yield srv
    srv.shutdown()
    srv.server_close()


class TestHttp:
    def endpoint(self, srv, **kw):
        return ModelEndpoint("m", base_url=f"http://127.0.0.1:{srv.server_address[1]}/v1", **kw)

    def test_success(self, server, monkeypatch):
        monkeypatch.setenv("TEST_KEY", "sekrit")
        _Handler.status = 200
        _Handler.body = {"choices": [{"message": {"content": "hi"}}],
                         "usage": {"prompt_tokens": 7, "completion_tokens": 3}}
        comp = HttpBackend(5).generate(self.endpoint(server, auth_env_var="TEST_KEY"), "p", 0, 0.0)
        assert (comp.text, comp.prompt_tokens, comp.completion_tokens) == ("hi", 7, 3)
        assert _Handler.last["path"] == "/v1/chat/completions"
        assert _Handler.last["auth"] == "Bearer sekrit"
        assert _Handler.last["json"]["messages"] == [{"role": "user", "content": "p"}]

    @pytest.mark.parametrize("status, body, exc", [
        (401, {}, ConfigError),
        (413, {}, BudgetError),
        (400, {"error": "maximum context length exceeded"}, BudgetError),
        (429, {}, TransientError),
        (503, {}, TransientError),
        (404, {}, TransportError),
        (200, {"nope": 1}, TransportError),
    ])
    def test_status_mapping(self, server, status, body, exc):
        _Handler.status, _Handler.body = status, body
        with pytest.raises(exc):
            HttpBackend(5).generate(self.endpoint(server), "p", 0, 0.0)

    def test_missing_key(self, server, monkeypatch):
        monkeypatch.delenv("ABSENT_KEY", raising=False)
        with pytest.raises(ConfigError, match="ABSENT_KEY"):
            HttpBackend(5).generate(self.endpoint(server, auth_env_var="ABSENT_KEY"), "p", 0, 0.0)

    def test_no_base_url(self):
        with pytest.raises(ConfigError):
            HttpBackend().generate(ModelEndpoint("m"), "p", 0, 0.0)

    def test_unreachable_is_transient(self):
        ep = ModelEndpoint("m", base_url="http://127.0.0.1:9")
        with pytest.raises(TransientError):
            HttpBackend(2).generate(ep, "p", 0, 0.0)
