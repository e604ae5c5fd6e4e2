"""Evaluation harness for LLM-driven host intrusion detection over provenance graphs."""

from .errors import (
    BudgetError,
    ConfigError,
    ContaminationError,
    DetectionError,
    IntervalError,
    ParseError,
    ProvHidsError,
    ReferentialError,
    ResponseParseError,
    StageError,
    TransportError,
)

__version__ = "0.1.0"
