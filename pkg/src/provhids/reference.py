"""Published per-model results and dataset statistics, used as fixtures for aggregation and regime checks.

Each cell is (precision, mcc, fpr_percent). FPR is in percentage points.
"""

from __future__ import annotations

from typing import NamedTuple

DATASETS = (
    "E3-CADETS", "E3-THEIA", "E3-TRACE",
    "E5-CADETS", "E5-THEIA", "E5-TRACE",
    "NL-HW17", "NL-HW20", "NL-WIN10",
)

MODELS = (
    "Claude-Opus-4.6", "Claude-Sonnet-4.5", "Claude-Sonnet-4", "GPT-5.2", "GPT-4.1",
    "GPT-OSS-120B", "Gemini-2.5-Flash", "DeepSeek-V3.2", "Qwen3.6-Plus",
)


class Cell(NamedTuple):
    precision: float
    mcc: float
    fpr_percent: float


def _row(*vals: float) -> dict[str, Cell]:
    assert len(vals) == 27
    return {d: Cell(*vals[3 * i:3 * i + 3]) for i, d in enumerate(DATASETS)}


REFERENCE_RESULTS: dict[str, dict[str, Cell]] = {
    "Claude-Opus-4.6": _row(
        0.694, 0.602, 0.04, 0.857, 0.283, 0.001, 1.000, 0.980, 0.000,
        0.280, 0.404, 0.074, 0.211, 0.122, 0.013, 0.500, 0.707, 0.005,
        0.700, 0.542, 0.645, 0.714, 0.633, 0.852, 0.840, 0.348, 0.176),
    "Claude-Sonnet-4.5": _row(
        0.703, 0.561, 0.03, 0.667, 0.250, 0.002, 1.000, 0.979, 0.000,
        0.064, 0.192, 0.424, 0.158, 0.054, 0.014, 0.200, 0.447, 0.019,
        0.500, 0.379, 1.075, 0.714, 0.695, 1.022, 0.722, 0.250, 0.220),
    "Claude-Sonnet-4": _row(
        0.774, 0.566, 0.02, 0.800, 0.224, 0.001, 1.000, 0.073, 0.000,
        0.061, 0.188, 0.440, 0.062, 0.066, 0.053, 0.200, 0.447, 0.019,
        0.571, 0.365, 0.645, 0.731, 0.557, 0.596, 0.833, 0.168, 0.044),
    "GPT-5.2": _row(
        0.808, 0.510, 0.01, 0.833, 0.255, 0.001, 1.000, 0.979, 0.000,
        0.200, 0.182, 0.033, 0.078, 0.074, 0.042, 0.333, 0.577, 0.010,
        0.565, 0.665, 2.151, 0.739, 0.529, 0.511, 0.688, 0.224, 0.220),
    "GPT-4.1": _row(
        0.774, 0.534, 0.02, 1.000, 0.250, 0.000, 1.000, 0.980, 0.000,
        0.050, 0.170, 0.543, 0.022, 0.019, 0.039, 0.200, 0.447, 0.019,
        0.500, 0.622, 2.796, 0.714, 0.487, 0.511, 0.788, 0.373, 0.308),
    "GPT-OSS-120B": _row(
        0.667, 0.429, 0.02, 1.000, 0.216, 0.000, 1.000, 0.980, 0.000,
        0.014, 0.048, 0.559, 0.062, 0.066, 0.053, 0.200, 0.447, 0.019,
        0.300, 0.217, 1.505, 0.800, 0.463, 0.256, 0.667, 0.187, 0.176),
    "Gemini-2.5-Flash": _row(
        0.562, 0.279, 0.02, 0.500, 0.177, 0.003, 1.000, 0.979, 0.000,
        0.009, 0.026, 0.456, 0.009, 0.024, 0.389, 0.200, 0.447, 0.019,
        0.400, 0.573, 4.516, 0.700, 0.328, 0.256, 0.522, 0.341, 1.407),
    "DeepSeek-V3.2": _row(
        0.667, 0.428, 0.02, 0.625, 0.221, 0.002, 1.000, 0.980, 0.000,
        0.200, 0.182, 0.033, 0.022, 0.019, 0.039, 0.200, 0.447, 0.019,
        0.333, 0.300, 2.151, 0.794, 0.697, 0.596, 0.731, 0.305, 0.308),
    "Qwen3.6-Plus": _row(
        0.786, 0.364, 0.01, 0.750, 0.187, 0.001, 1.000, 0.979, 0.000,
        0.286, 0.218, 0.021, 0.017, 0.017, 0.052, 0.200, 0.447, 0.019,
        0.714, 0.462, 0.430, 0.708, 0.739, 1.193, 0.714, 0.218, 0.176),
}


class DatasetStats(NamedTuple):
    events: int
    malicious: int
    ratio: int  # benign events per malicious event, rounded as published


DATASET_SUMMARY: dict[str, DatasetStats] = {
    "E3-CADETS": DatasetStats(39198, 52, 753),
    "E3-THEIA": DatasetStats(121263, 64, 1894),
    "E3-TRACE": DatasetStats(106395, 4, 26598),
    "E5-CADETS": DatasetStats(83323, 18, 4628),
    "E5-THEIA": DatasetStats(112741, 56, 2012),
    "E5-TRACE": DatasetStats(61892, 3, 20630),
    "NL-HW17": DatasetStats(481, 16, 29),
    "NL-HW20": DatasetStats(1217, 43, 27),
    "NL-WIN10": DatasetStats(2411, 136, 17),
}

# Published regime labels; GPT-5.2 is deliberately absent (not named in the source).
PUBLISHED_REGIMES = {
    "Claude-Opus-4.6": "conservative",
    "Claude-Sonnet-4": "conservative",
    "Gemini-2.5-Flash": "over_sensitive",
    "GPT-4.1": "over_sensitive",
    "DeepSeek-V3.2": "over_sensitive",
    "Qwen3.6-Plus": "balanced",
    "GPT-OSS-120B": "balanced",
    "Claude-Sonnet-4.5": "balanced",
}


def column(dataset: str, metric: str) -> list[float]:
    """One metric for every model on ``dataset``, in MODELS order."""
    return [getattr(REFERENCE_RESULTS[m][dataset], metric) for m in MODELS]


def fpr_vector(model: str) -> list[float]:
    return [REFERENCE_RESULTS[model][d].fpr_percent for d in DATASETS]
