"""Model endpoints, completion backends, usage accounting."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Callable, Protocol, Sequence

from ..errors import BudgetError, ConfigError, TransportError
from ..segment import default_token_estimator

log = logging.getLogger(__name__)

MULTI_SAMPLE_TEMPERATURE = 0.7
SINGLE_SHOT_TEMPERATURE = 0.0


@dataclass(frozen=True)
class Sampling:
    temperature: float | None = None  # None: 0 for single-shot, 0.7 when sampling several
    max_output_tokens: int = 4096

    def __post_init__(self):
        if self.temperature is not None and self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")

    def temperature_for(self, n_samples: int) -> float:
        if self.temperature is not None:
            return self.temperature
        return SINGLE_SHOT_TEMPERATURE if n_samples == 1 else MULTI_SAMPLE_TEMPERATURE


@dataclass(frozen=True)
class ModelEndpoint:
    name: str
    base_url: str = ""
    auth_env_var: str = ""
    max_context_tokens: int = 131_072
    price_per_1k_prompt: Decimal = Decimal(0)
    price_per_1k_completion: Decimal = Decimal(0)
    sampling: Sampling = field(default_factory=Sampling)

    def __post_init__(self):
        object.__setattr__(self, "price_per_1k_prompt", Decimal(str(self.price_per_1k_prompt)))
        object.__setattr__(self, "price_per_1k_completion", Decimal(str(self.price_per_1k_completion)))
        if self.max_context_tokens <= 0:
            raise ValueError("max_context_tokens must be positive")
        if self.price_per_1k_prompt < 0 or self.price_per_1k_completion < 0:
            raise ValueError("prices must be non-negative")

    def cost(self, prompt_tokens: int, completion_tokens: int) -> Decimal:
        return token_cost(prompt_tokens, completion_tokens,
                          self.price_per_1k_prompt, self.price_per_1k_completion)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelEndpoint":
        sampling = data.get("sampling") or {}
        return cls(
            name=data["name"],
            base_url=data.get("base_url", ""),
            auth_env_var=data.get("auth_env_var", ""),
            max_context_tokens=int(data.get("max_context_tokens", 131_072)),
            price_per_1k_prompt=Decimal(str(data.get("price_per_1k_prompt", 0))),
            price_per_1k_completion=Decimal(str(data.get("price_per_1k_completion", 0))),
            sampling=Sampling(sampling.get("temperature"), int(sampling.get("max_output_tokens", 4096))),
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "base_url": self.base_url,
            "auth_env_var": self.auth_env_var,
            "max_context_tokens": self.max_context_tokens,
            "price_per_1k_prompt": str(self.price_per_1k_prompt),
            "price_per_1k_completion": str(self.price_per_1k_completion),
            "sampling": {"temperature": self.sampling.temperature,
                         "max_output_tokens": self.sampling.max_output_tokens},
        }


def token_cost(prompt_tokens: int, completion_tokens: int,
               price_prompt_1k: Decimal, price_completion_1k: Decimal) -> Decimal:
    return (prompt_tokens * Decimal(price_prompt_1k) + completion_tokens * Decimal(price_completion_1k)) / 1000


@dataclass(frozen=True)
class UsageRecord:
    prompt_tokens: int
    completion_tokens: int
    total_tokens: int
    wall_time_s: float
    cost: Decimal

    def __post_init__(self):
        object.__setattr__(self, "cost", Decimal(str(self.cost)))
        if min(self.prompt_tokens, self.completion_tokens, self.total_tokens) < 0:
            raise ValueError("token counts must be non-negative")
        if self.total_tokens != self.prompt_tokens + self.completion_tokens:
            raise ValueError("total_tokens must equal prompt_tokens + completion_tokens")
        if self.wall_time_s < 0 or self.cost < 0:
            raise ValueError("wall time and cost must be non-negative")

    @classmethod
    def from_counts(cls, endpoint: ModelEndpoint, prompt_tokens: int, completion_tokens: int,
                    wall_time_s: float = 0.0) -> "UsageRecord":
        return cls(prompt_tokens, completion_tokens, prompt_tokens + completion_tokens,
                   wall_time_s, endpoint.cost(prompt_tokens, completion_tokens))

    def to_dict(self) -> dict:
        return {
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "total_tokens": self.total_tokens,
            "wall_time_s": self.wall_time_s,
            "cost": str(self.cost),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "UsageRecord":
        return cls(int(data["prompt_tokens"]), int(data["completion_tokens"]), int(data["total_tokens"]),
                   float(data["wall_time_s"]), Decimal(str(data["cost"])))


@dataclass(frozen=True)
class LedgerEntry:
    model: str
    dataset: str
    stage: str
    run_id: str
    usage: UsageRecord

    def to_dict(self) -> dict:
        return {"model": self.model, "dataset": self.dataset, "stage": self.stage,
                "run_id": self.run_id, "usage": self.usage.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "LedgerEntry":
        return cls(data["model"], data["dataset"], data["stage"], data["run_id"],
                   UsageRecord.from_dict(data["usage"]))


class UsageLedger:
    """Append-only record of every completion's usage; safe to share between threads."""

    def __init__(self, entries: Sequence[LedgerEntry] = ()):
        self._entries = list(entries)
        self._lock = threading.Lock()

    def append(self, entry: LedgerEntry) -> None:
        with self._lock:
            self._entries.append(entry)

    @property
    def entries(self) -> tuple[LedgerEntry, ...]:
        with self._lock:
            return tuple(self._entries)

    def __len__(self):
        return len(self._entries)

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "UsageLedger":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    entries.append(LedgerEntry.from_dict(json.loads(line)))
        return cls(entries)


@dataclass(frozen=True)
class Completion:
    """Raw backend output. Missing token counts are filled in by the local estimator."""

    text: str
    prompt_tokens: int | None = None
    completion_tokens: int | None = None
    wall_time_s: float | None = None


class Backend(Protocol):
    def generate(self, endpoint: ModelEndpoint, prompt: str, sample_index: int,
                 temperature: float) -> Completion: ...


class TransientError(TransportError):
    """Retryable transport failure (timeouts, 429, 5xx)."""


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class MockBackend:
    """Replays stored responses.

    Lookup order for a prompt: ``<sha256(prompt)>.json`` in the fixture
    directory, then the first rule in ``index.json`` whose ``contains`` string
    occurs in the prompt. Each fixture holds a ``responses`` list; sample ``i``
    gets ``responses[i % len(responses)]``. A response is ``{"text": ...}`` or
    ``{"text_file": ...}`` with optional ``usage`` and ``wall_time_s``.
    """

    def __init__(self, fixture_dir):
        self.fixture_dir = Path(fixture_dir)
        if not self.fixture_dir.is_dir():
            raise ConfigError(f"mock fixture directory not found: {self.fixture_dir}")
        index = self.fixture_dir / "index.json"
        self.rules = json.loads(index.read_text(encoding="utf-8")).get("rules", []) if index.exists() else []

    def _responses(self, prompt: str) -> list[dict]:
        path = self.fixture_dir / f"{prompt_hash(prompt)}.json"
        if path.exists():
            return json.loads(path.read_text(encoding="utf-8"))["responses"]
        for rule in self.rules:
            if rule.get("contains") and rule["contains"] in prompt:
                return rule["responses"]
        raise ConfigError(f"no mock fixture for prompt hash {prompt_hash(prompt)}")

    def generate(self, endpoint, prompt, sample_index, temperature):
        responses = self._responses(prompt)
        if not responses:
            raise ConfigError("mock fixture has an empty responses list")
        resp = responses[sample_index % len(responses)]
        text = resp["text"] if "text" in resp else (self.fixture_dir / resp["text_file"]).read_text(encoding="utf-8")
        usage = resp.get("usage") or {}
        return Completion(text, usage.get("prompt_tokens"), usage.get("completion_tokens"),
                          resp.get("wall_time_s", 0.0))


def write_fixture(fixture_dir, prompt: str, responses: Sequence[dict]) -> Path:
    path = Path(fixture_dir) / f"{prompt_hash(prompt)}.json"
    path.write_text(json.dumps({"responses": list(responses)}, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


class FunctionBackend:
    """Backend driven by a Python callable ``fn(prompt, sample_index) -> str | Completion``."""

    def __init__(self, fn: Callable[[str, int], object]):
        self.fn = fn

    def generate(self, endpoint, prompt, sample_index, temperature):
        out = self.fn(prompt, sample_index)
        return out if isinstance(out, Completion) else Completion(str(out), wall_time_s=0.0)


class HttpBackend:
    """Chat-completions style JSON over HTTP.

    Request: ``POST {base_url}/chat/completions`` with
    ``{"model", "messages": [{"role": "user", "content": prompt}], "temperature", "max_tokens"}``.
    Response: ``{"choices": [{"message": {"content": ...}}], "usage": {"prompt_tokens", "completion_tokens"}}``.
    """

    def __init__(self, timeout_s: float = 120.0):
        self.timeout_s = timeout_s

    def generate(self, endpoint, prompt, sample_index, temperature):
        if not endpoint.base_url:
            raise ConfigError(f"endpoint {endpoint.name!r} has no base_url")
        headers = {"Content-Type": "application/json"}
        if endpoint.auth_env_var:
            key = os.environ.get(endpoint.auth_env_var)
            if not key:
                raise ConfigError(f"environment variable {endpoint.auth_env_var} is not set")
            headers["Authorization"] = f"Bearer {key}"
        body = json.dumps({
            "model": endpoint.name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "max_tokens": endpoint.sampling.max_output_tokens,
        }).encode("utf-8")
        req = urllib.request.Request(endpoint.base_url.rstrip("/") + "/chat/completions",
                                     data=body, headers=headers, method="POST")
        start = time.monotonic()
        try:
            with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            detail = exc.read().decode("utf-8", "replace")
            if exc.code in (401, 403):
                raise ConfigError(f"authentication failed for {endpoint.name!r} (HTTP {exc.code})") from None
            if exc.code == 413 or (exc.code == 400 and "context" in detail.lower()):
                raise BudgetError(f"endpoint rejected prompt as too long: {detail[:200]}") from None
            if exc.code == 429 or exc.code >= 500:
                raise TransientError(f"HTTP {exc.code}") from None
            raise TransportError(f"HTTP {exc.code}: {detail[:200]}") from None
        except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
            raise TransientError(str(exc)) from None
        elapsed = time.monotonic() - start
        try:
            text = payload["choices"][0]["message"]["content"]
            usage = payload.get("usage") or {}
        except (KeyError, IndexError, TypeError):
            raise TransportError("malformed chat-completions response") from None
        return Completion(text, usage.get("prompt_tokens"), usage.get("completion_tokens"), elapsed)


class LLMClient:
    """Sends finished prompts to a backend and returns (text, usage) pairs.

    Transient failures are retried with exponential backoff up to ``max_attempts``.
    Every successful completion is appended to ``ledger``.
    """

    def __init__(self, endpoint: ModelEndpoint, backend: Backend, *, ledger: UsageLedger | None = None,
                 max_attempts: int = 3, backoff_s: float = 1.0, parallelism: int = 1,
                 estimator=default_token_estimator, sleep=time.sleep):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.endpoint = endpoint
        self.backend = backend
        self.ledger = ledger if ledger is not None else UsageLedger()
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self.parallelism = max(1, parallelism)
        self.estimator = estimator
        self._sleep = sleep

    def _one(self, prompt: str, index: int, temperature: float) -> Completion:
        for attempt in range(1, self.max_attempts + 1):
            try:
                return self.backend.generate(self.endpoint, prompt, index, temperature)
            except TransientError as exc:
                if attempt == self.max_attempts:
                    raise TransportError(
                        f"{self.endpoint.name}: giving up after {attempt} attempts ({exc})") from exc
                delay = self.backoff_s * 2 ** (attempt - 1)
                log.warning("transient failure from %s (%s); retrying in %.1fs", self.endpoint.name, exc, delay)
                self._sleep(delay)
        raise AssertionError("unreachable")

    def complete(self, prompt: str, n_samples: int = 1, *, sample_offset: int = 0,
                 dataset: str = "", stage: str = "", run_id: str = "",
                 temperature: float | None = None) -> list[tuple[str, UsageRecord]]:
        """``temperature`` overrides the endpoint's default for ``n_samples``."""
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        est = self.estimator(prompt)
        if est > self.endpoint.max_context_tokens:
            raise BudgetError(f"prompt needs ~{est} tokens, {self.endpoint.name} allows "
                              f"{self.endpoint.max_context_tokens}")
        if temperature is None:
            temperature = self.endpoint.sampling.temperature_for(n_samples)
        indices = [sample_offset + i for i in range(n_samples)]
        if self.parallelism > 1 and n_samples > 1:
            with ThreadPoolExecutor(max_workers=min(self.parallelism, n_samples)) as pool:
                raw = list(pool.map(lambda i: self._one(prompt, i, temperature), indices))
        else:
            raw = [self._one(prompt, i, temperature) for i in indices]

        out = []
        for comp in raw:
            pt = comp.prompt_tokens if comp.prompt_tokens is not None else est
            ct = comp.completion_tokens if comp.completion_tokens is not None else self.estimator(comp.text)
            usage = UsageRecord.from_counts(self.endpoint, pt, ct, comp.wall_time_s or 0.0)
            self.ledger.append(LedgerEntry(self.endpoint.name, dataset, stage, run_id, usage))
            out.append((comp.text, usage))
        return out
