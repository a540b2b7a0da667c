"""One long-term frame on the default scenario, step by step.

Places services and routes every UE with the penalty SCA, then splits each
task and the uplink band for the first slot, and prints what came out.

    python demos/single_frame.py
"""

import numpy as np

from hecc.longterm import solve_lsp
from hecc.orchestrator import default_allocation
from hecc.scenario import Scenario, ScenarioConfig, substream
from hecc.shortterm import solve_ssp
from hecc.system_model import e2e_latency, total_cost, ue_energy

cfg = ScenarioConfig()
scenario = Scenario(cfg)
inst = scenario.instance(0, 0)
print(f"{inst.M} UEs, {inst.K} ESs, {inst.S} services; requests {inst.services.tolist()}")

# long-term: binary configuration for a half split and equal bandwidth
lsp = solve_lsp(inst, default_allocation(inst.M), None, rng=substream(cfg.rng_seed, "solver", 0))
for it in lsp.trace:
    print(f"  L-SP iter {it.iteration}: penalized {it.penalized_objective:.4f}  penalty {it.penalty_value:.2e}")
d = lsp.decision
print("placement (service x ES):")
print(d.placement.astype(int))
for m in range(inst.M):
    k = int(np.argmax(d.assoc[m]))
    if d.edge_cloud[m, k]:
        route = "cloud"
    elif d.edge_edge[m, k].any():
        route = f"ES {int(np.argmax(d.edge_edge[m, k]))}"
    else:
        route = "kept"
    print(f"  UE {m}: service {inst.services[m]} -> ES {k}, {route}")

# short-term: offloading split and bandwidth for this slot
cost = total_cost(d, None, cfg)
ssp = solve_ssp(inst, d, cost_term=cost.total)
alloc = ssp.allocation
lat = e2e_latency(inst, d, alloc)
print(f"S-SP: {len(ssp.trace) - 1} iterations, objective {ssp.trace[0].objective:.6f} -> {ssp.objective:.6f}")
print("local share phi:", np.round(alloc.phi, 3).tolist())
print("bandwidth share:", np.round(alloc.bw, 3).tolist())
print(f"e2e latency (ms): {np.round(lat.e2e * 1e3, 3).tolist()}  cap {cfg.latency_cap * 1e3} ms")
print(f"UE energy (mJ): {np.round(ue_energy(inst, d, alloc) * 1e3, 4).tolist()}")
print(f"frame cost {cost.total:.3f} (cloud requests {cost.request_cost:.2f})")
