"""How far the penalty SCA lands from the exact optimum on small instances.

    python demos/oracle_gap.py [num_seeds]
"""

import sys
import time

from hecc.bnb import solve_exact
from hecc.longterm import solve_lsp
from hecc.orchestrator import default_allocation
from hecc.scenario import Scenario, ScenarioConfig, substream

for seed in range(int(sys.argv[1]) if len(sys.argv) > 1 else 5):
    inst = Scenario(ScenarioConfig(num_ues=4, num_ess=2, num_services=3, rng_seed=seed)).instance(0, 0)
    alloc = default_allocation(inst.M)
    t0 = time.perf_counter()
    exact = solve_exact(inst, alloc, None)
    t1 = time.perf_counter()
    sca = solve_lsp(inst, alloc, None, rng=substream(seed, "solver", 0))
    t2 = time.perf_counter()
    gap = 100 * (sca.objective - exact.objective) / exact.objective
    print(f"seed {seed}: exact {exact.objective:.6f} ({exact.mode}, {t1 - t0:.2f} s)  "
          f"SCA {sca.objective:.6f} ({len(sca.trace)} it, {t2 - t1:.2f} s)  gap {gap:.2f}%")
