"""
Scoring: precision, FPR, MCC and behavioral regimes
===================================================

Event-level confusion counts give precision, false positive rate and the
Matthews correlation coefficient. Per-model FPR vectors place each model in
a conservative, balanced or over-sensitive regime.
"""

from provhids.evaluation import ConfusionCounts, MetricSet, aggregate_metrics, classify_regime, compute_metrics
from provhids.reference import DATASETS, MODELS, column, fpr_vector

# a detector that finds 11 of 12 attack events and raises 4 false alarms among 35 benign
m = compute_metrics(ConfusionCounts(tp=11, fp=4, fn=1, tn=31))
print(f"precision={m.precision:.3f} fpr={m.fpr_percent:.3f}% mcc={m.mcc:.3f}")

# with heavy class imbalance, MCC drops while FPR stays tiny
m = compute_metrics(ConfusionCounts(tp=40, fp=200, fn=12, tn=39_000))
print(f"imbalanced: precision={m.precision:.3f} fpr={m.fpr_percent:.3f}% mcc={m.mcc:.3f}")

# no alerts at all: precision is defined as 0 and flagged
print(compute_metrics(ConfusionCounts(0, 0, 5, 95)))

# per-dataset mean MCC across the nine reference models
for d in DATASETS:
    mean = aggregate_metrics([MetricSet(0, 0, v) for v in column(d, "mcc")]).mcc
    print(f"{d:10s} mean MCC {mean:.3f}")

# regimes, sorted by average FPR
regimes = {mdl: classify_regime(fpr_vector(mdl)) for mdl in MODELS}
for model, r in sorted(regimes.items(), key=lambda kv: kv[1].f_avg):
    print(f"{model:18s} avg={r.f_avg:.3f}% max={r.f_max:.3f}% -> {r.regime}")
