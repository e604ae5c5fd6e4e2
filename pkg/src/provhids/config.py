"""Run configuration: a single JSON file, paths resolved relative to it.

Keys::

    {
      "datasets": [{"name", "events", "entities", "labels", "environment"}],
      "endpoints": [{"name", "active", "base_url", "auth_env_var", "max_context_tokens",
                     "price_per_1k_prompt", "price_per_1k_completion", "sampling"}],
      "detection": {"k_hop", "vote_k", "reflection", "expand_scope", "single_shot"},
      "seed": 0,
      "output_dir": "out",
      "token_budget": null,        # per-window limit; defaults to the active endpoint's context
      "trim": false,               # tail-trim over-budget windows instead of only flagging them
      "dedup": true,
      "forbidden_tokens": [],      # extra contamination-guard tokens; dataset names are always added
      "mock_fixtures": null,       # directory of canned responses; null means live HTTP
      "parallelism": 1
    }

Secrets are read from the environment variable named by ``auth_env_var``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

from .detect import DetectionConfig
from .errors import ConfigError
from .llmclient import ModelEndpoint

_TOP_KEYS = {"datasets", "endpoints", "detection", "seed", "output_dir", "token_budget", "trim", "dedup",
             "forbidden_tokens", "mock_fixtures", "parallelism"}


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    events: Path
    entities: Path
    labels: Path
    environment: str = "a Linux host"


@dataclass(frozen=True)
class RunConfig:
    datasets: tuple[DatasetSpec, ...]
    endpoints: tuple[ModelEndpoint, ...]
    active_endpoint: str
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    output_dir: Path = Path("out")
    token_budget: int | None = None
    trim: bool = False
    dedup: bool = True
    forbidden_tokens: tuple[str, ...] = ()
    mock_fixtures: Path | None = None
    parallelism: int = 1

    @property
    def seed(self) -> int:
        return self.detection.rng_seed

    @property
    def endpoint(self) -> ModelEndpoint:
        for e in self.endpoints:
            if e.name == self.active_endpoint:
                return e
        raise ConfigError(f"active endpoint {self.active_endpoint!r} not configured")

    @property
    def budget(self) -> int:
        return self.token_budget if self.token_budget is not None else self.endpoint.max_context_tokens

    def dataset(self, name: str) -> DatasetSpec:
        for d in self.datasets:
            if d.name == name:
                return d
        raise ConfigError(f"unknown dataset {name!r}; configured: {', '.join(d.name for d in self.datasets)}")

    def guard_tokens(self) -> tuple[str, ...]:
        """Contamination guard: configured tokens plus every dataset name."""
        toks = set(self.forbidden_tokens) | {d.name for d in self.datasets}
        return tuple(sorted(t for t in toks if t))

    def with_overrides(self, *, seed: int | None = None, mock_fixtures=None, output_dir=None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, detection=replace(cfg.detection, rng_seed=seed))
        if mock_fixtures is not None:
            cfg = replace(cfg, mock_fixtures=Path(mock_fixtures))
        if output_dir is not None:
            cfg = replace(cfg, output_dir=Path(output_dir))
        return cfg


def _require(mapping: Mapping, key: str, where: str) -> Any:
    if key not in mapping:
        raise ConfigError(f"{where}: missing key {key!r}")
    return mapping[key]


def config_from_dict(data: Mapping, base_dir: Path = Path("."), *, check_files: bool = True) -> RunConfig:
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    base_dir = Path(base_dir)

    def resolve(p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else base_dir / p

    datasets = []
    for i, d in enumerate(_require(data, "datasets", "config")):
        where = f"datasets[{i}]"
        spec = DatasetSpec(
            name=str(_require(d, "name", where)),
            events=resolve(_require(d, "events", where)),
            entities=resolve(_require(d, "entities", where)),
            labels=resolve(_require(d, "labels", where)),
            environment=str(d.get("environment", "a Linux host")),
        )
        if check_files:
            for attr in ("events", "entities", "labels"):
                if not getattr(spec, attr).is_file():
                    raise ConfigError(f"{where}: {attr} file not found: {getattr(spec, attr)}")
        datasets.append(spec)
    names = [d.name for d in datasets]
    if len(set(names)) != len(names):
        raise ConfigError("dataset names must be unique")
    if not datasets:
        raise ConfigError("config lists no datasets")

    raw_eps = _require(data, "endpoints", "config")
    endpoints = []
    active = [e["name"] for e in raw_eps if e.get("active")]
    if len(active) != 1:
        raise ConfigError(f"exactly one endpoint must be active, found {len(active)}")
    for e in raw_eps:
        try:
            endpoints.append(ModelEndpoint.from_dict({k: v for k, v in e.items() if k != "active"}))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad endpoint entry {e.get('name', '?')!r}: {exc}") from None

    det = dict(data.get("detection", {}))
    unknown = set(det) - {"k_hop", "vote_k", "vote_rule", "reflection", "expand_scope", "single_shot"}
    if unknown:
        raise ConfigError(f"unknown detection keys: {', '.join(sorted(unknown))}")
    det["rng_seed"] = int(data.get("seed", 0))
    try:
        detection = DetectionConfig.from_dict(det)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad detection settings: {exc}") from None

    budget = data.get("token_budget")
    if budget is not None and int(budget) <= 0:
        raise ConfigError("token_budget must be positive")
    mock = data.get("mock_fixtures")
    return RunConfig(
        datasets=tuple(datasets),
        endpoints=tuple(endpoints),
        active_endpoint=active[0],
        detection=detection,
        output_dir=resolve(data.get("output_dir", "out")),
        token_budget=None if budget is None else int(budget),
        trim=bool(data.get("trim", False)),
        dedup=bool(data.get("dedup", True)),
        forbidden_tokens=tuple(data.get("forbidden_tokens", ())),
        mock_fixtures=None if mock is None else resolve(mock),
        parallelism=max(1, int(data.get("parallelism", 1))),
    )


def load_config(path, *, check_files: bool = True) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} ({exc.msg})") from None
    return config_from_dict(data, path.parent, check_files=check_files)
