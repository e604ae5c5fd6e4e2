"""Model-agnostic client: prompt rendering, completion backends, response parsing."""

from .client import (
    Completion,
    FunctionBackend,
    HttpBackend,
    LedgerEntry,
    LLMClient,
    MockBackend,
    ModelEndpoint,
    Sampling,
    TransientError,
    UsageLedger,
    UsageRecord,
    prompt_hash,
    token_cost,
    write_fixture,
)
from .parsing import (
    IOC_CATEGORIES,
    InvestigationReport,
    format_report,
    normalize_ioc,
    parse_acr_response,
    parse_mei_reasons,
    parse_mei_response,
)
from .prompts import ACR, MEI, REFINE, render_prompt, scan_forbidden

__all__ = [
    "ACR", "MEI", "REFINE", "IOC_CATEGORIES",
    "Completion", "FunctionBackend", "HttpBackend", "InvestigationReport", "LedgerEntry",
    "LLMClient", "MockBackend", "ModelEndpoint", "Sampling", "TransientError", "UsageLedger",
    "UsageRecord", "format_report", "normalize_ioc", "parse_acr_response", "parse_mei_reasons",
    "parse_mei_response", "prompt_hash", "render_prompt", "scan_forbidden", "token_cost",
    "write_fixture",
]
