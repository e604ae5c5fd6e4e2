"""Exception hierarchy shared by every pipeline stage."""

from __future__ import annotations


class ProvHidsError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(ProvHidsError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ReferentialError(ProvHidsError):
    def __init__(self, message: str, missing_ids=()):
        self.missing_ids = sorted(missing_ids)
        if self.missing_ids:
            message = f"{message}: {', '.join(self.missing_ids)}"
        super().__init__(message)


class IntervalError(ProvHidsError):
    pass


class BudgetError(ProvHidsError):
    pass


class ConfigError(ProvHidsError):
    pass


class TransportError(ProvHidsError):
    pass


class ContaminationError(ProvHidsError):
    def __init__(self, tokens):
        self.tokens = sorted(tokens)
        super().__init__(f"prompt contains forbidden tokens: {', '.join(self.tokens)}")


class ResponseParseError(ProvHidsError):
    """A model response had no recognizable structure. ``raw`` keeps the text for audit."""

    def __init__(self, message: str, raw: str):
        self.raw = raw
        super().__init__(message)


class DetectionError(ProvHidsError):
    def __init__(self, message: str, raw_texts=()):
        self.raw_texts = list(raw_texts)
        super().__init__(message)


class StageError(ProvHidsError):
    def __init__(self, stage: str, dataset: str | None, cause: BaseException):
        self.stage = stage
        self.dataset = dataset
        self.cause = cause
        where = f"stage {stage!r}" + (f", dataset {dataset!r}" if dataset else "")
        super().__init__(f"{where}: {type(cause).__name__}: {cause}")


class ResponseParseWarning(UserWarning):
    pass
