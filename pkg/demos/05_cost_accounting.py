"""
Token cost and runtime accounting
=================================

Every completion is logged with its token counts and wall time. Costs are
recomputed from a price table with exact decimal arithmetic and grouped per
(model, dataset).
"""

from decimal import Decimal

from provhids.evaluation import PriceTable, account_costs, format_cost_table
from provhids.llmclient import LedgerEntry, UsageRecord

prices = PriceTable({
    "big-model": (Decimal("0.005"), Decimal("0.025")),
    "small-model": (Decimal("0.0002"), Decimal("0.0006")),
})


def usage(prompt, completion, seconds):
    return UsageRecord(prompt, completion, prompt + completion, seconds, 0)


ledger = [
    # one investigation call: 24,901 prompt and 1,309 completion tokens
    LedgerEntry("big-model", "host-a", "acr", "run-1", usage(24_901, 1_309, 27.54)),
    LedgerEntry("big-model", "host-a", "mei", "run-1", usage(3_100, 420, 6.1)),
    LedgerEntry("small-model", "host-a", "acr", "run-1", usage(24_901, 2_050, 11.0)),
    LedgerEntry("small-model", "host-a", "acr", "run-2", usage(25_300, 1_980, 10.4)),
]

print("single call:", prices.cost("big-model", 24_901, 1_309))
for row in account_costs(ledger, prices):
    print(row.model, row.dataset, "runs", row.runs, "calls", row.calls,
          "total", row.total_cost, "per run", row.cost_per_run)
print(format_cost_table(account_costs(ledger, prices)))
