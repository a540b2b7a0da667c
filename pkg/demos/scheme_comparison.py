"""Paired comparison of every scheme on a handful of seeds.

All schemes of one seed see the same channels, tasks and requests, so the
differences below come from the decisions alone.

    python demos/scheme_comparison.py [num_seeds]
"""

import sys

from hecc.benchmarks import default_schemes, run_comparison, summarize
from hecc.scenario import ScenarioConfig

seeds = range(int(sys.argv[1]) if len(sys.argv) > 1 else 4)
means = summarize(run_comparison(ScenarioConfig(), default_schemes(), seeds, frames=1, slots=2))
base = means["PROPOSED"]
print(f"{'scheme':20s} {'objective':>10s} {'latency ms':>11s} {'cost':>7s} {'x cost':>7s} {'offload':>8s}")
for name, m in means.items():
    print(f"{name:20s} {m['objective']:10.6f} {m['latency_total'] * 1e3:11.3f} {m['cost_total']:7.3f} "
          f"{m['cost_total'] / base['cost_total']:7.2f} {m['offload_fraction']:8.3f}")
