"""Acceptance criteria, one test each, every test printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` to see the lines inline;
they are also repeated in the terminal summary of any pytest run.
"""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from hecc import cli
from hecc.benchmarks import default_schemes, run_comparison, summarize
from hecc.bnb import enumerate_lemma_feasible, solve_exact
from hecc.longterm import solve_lsp
from hecc.orchestrator import default_allocation
from hecc.scenario import Scenario, ScenarioConfig, substream
from hecc.shortterm import bilinear_upper_bound, rate_lower_bound, solve_ssp, true_rate
from hecc.system_model import (
    AllocationDecision,
    backhaul_fronthaul_delays,
    backhaul_fronthaul_delays_coupled,
    check_feasibility,
    compute_loads,
    compute_loads_coupled,
    propagation_delay,
    propagation_delay_coupled,
    status_change_cost,
    total_processing_delay,
    total_processing_delay_coupled,
)

TABLE2 = ScenarioConfig()
SLOPE_TOL = 0.01  # allowed rise between adjacent sweep points


def record(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} ({detail})"
    print(line)
    ACCEPTANCE.append(line)
    assert ok, line


def test_c1_simplified_model_equivalence():
    start = time.perf_counter()
    worst, count = 0.0, 0
    for M in (1, 2, 3):
        for K in (1, 2):
            for S in (1, 2):
                inst = Scenario(ScenarioConfig(num_ues=M, num_ess=K, num_services=S, rng_seed=M * 10 + K + S)
                                ).instance(0, 0)
                phi = substream(0, "solver", M, K, S).uniform(0.0, 1.0, M)
                for d in enumerate_lemma_feasible(M, K, S, inst.services):
                    count += 1
                    pairs = [
                        (compute_loads(d, inst.config)[0], compute_loads_coupled(d, inst.config, inst.services)[0]),
                        (total_processing_delay(inst, d, phi), total_processing_delay_coupled(inst, d, phi)),
                        (propagation_delay(inst, d), propagation_delay_coupled(inst, d)),
                    ]
                    pairs += list(zip(backhaul_fronthaul_delays(inst, d, phi),
                                      backhaul_fronthaul_delays_coupled(inst, d, phi)))
                    for simple, coupled in pairs:
                        scale = max(1.0, float(np.max(np.abs(coupled)))) if coupled.size else 1.0
                        if coupled.size:
                            worst = max(worst, float(np.max(np.abs(simple - coupled))) / scale)
    elapsed = time.perf_counter() - start
    record(1, "coupled and simplified model agree", worst <= 1e-12 and elapsed < 10.0,
           f"{count} decisions, worst relative gap {worst:.1e}, {elapsed:.1f} s")


def test_c2_cost_truth_table():
    got = {lam: float(status_change_cost(now, prev, TABLE2.price_install, TABLE2.price_uninstall))
           for lam, (now, prev) in {1: (1.0, 0.0), 0: (1.0, 1.0), -1: (0.0, 1.0)}.items()}
    ok = got == {1: 0.1, 0: 0.0, -1: 0.05}
    record(2, "status change cost truth table", ok, f"{got}")


def test_c3_surrogate_soundness():
    rng = np.random.default_rng(2024)
    n = 10_000
    W, N0 = TABLE2.bandwidth, TABLE2.noise_density
    gain = TABLE2.tx_power * rng.exponential(8.0, n) * 10 ** (rng.uniform(-130.0, -70.0, n) / 10)
    b, bb = rng.uniform(1e-3, 1.0, n), rng.uniform(1e-3, 1.0, n)
    exact = true_rate(b, gain, W, N0)
    rate_ok = np.all(rate_lower_bound(b, bb, gain, W, N0) <= exact * (1 + 1e-12))
    rate_tight = np.max(np.abs(rate_lower_bound(bb, bb, gain, W, N0) / true_rate(bb, gain, W, N0) - 1))
    y, z = rng.uniform(0.0, 10.0, n), rng.uniform(0.0, 10.0, n)
    ya, za = rng.uniform(1e-3, 10.0, n), rng.uniform(1e-3, 10.0, n)
    prod_ok = np.all(bilinear_upper_bound(y, z, ya, za) >= y * z * (1 - 1e-12))
    prod_tight = np.max(np.abs(bilinear_upper_bound(ya, za, ya, za) / (ya * za) - 1))
    ok = bool(rate_ok and prod_ok and rate_tight <= 1e-9 and prod_tight <= 1e-9)
    record(3, "surrogate bounds sound and tight", ok,
           f"{n} samples each, anchor gaps {rate_tight:.1e} and {prod_tight:.1e}")


def test_c4_long_term_convergence():
    inst = Scenario(TABLE2).instance(0, 0)
    alloc = default_allocation(inst.M)
    start = time.perf_counter()
    res = solve_lsp(inst, alloc, None, alpha=1e4, rng=substream(TABLE2.rng_seed, "solver", 0))
    elapsed = time.perf_counter() - start
    values = [it.penalized_objective for it in res.trace]
    monotone = all(b <= a + 1e-9 * max(1.0, abs(a)) for a, b in zip(values, values[1:]))
    ok = (monotone and res.converged and len(values) <= 10 and res.trace[-1].penalty_value < 1e-3
          and not res.fallback and elapsed < 30.0)
    record(4, "long-term SCA convergence", ok,
           f"{len(values)} iterations, monotone={monotone}, penalty {res.trace[-1].penalty_value:.1e}, "
           f"{elapsed:.2f} s")


def test_c5_oracle_gap():
    start = time.perf_counter()
    gaps = []
    for seed in range(10):
        inst = Scenario(ScenarioConfig(num_ues=4, num_ess=2, num_services=3, rng_seed=seed)).instance(0, 0)
        alloc = default_allocation(4)
        exact = solve_exact(inst, alloc, None)
        res = solve_lsp(inst, alloc, None, rng=substream(seed, "solver", 0))
        gaps.append(100.0 * (res.objective - exact.objective) / exact.objective)
    elapsed = time.perf_counter() - start
    ok = max(gaps) <= 5.0 and min(gaps) >= -1e-9 and elapsed < 300.0
    record(5, "long-term SCA within 5% of the exact optimum", ok,
           f"gaps {np.round(gaps, 2).tolist()} %, {elapsed:.1f} s")


def test_c6_short_term_convergence():
    details, ok = [], True
    for M, K in ((8, 2), (10, 2), (10, 4)):
        cfg = TABLE2.replace(num_ues=M, num_ess=K, ue_positions=None, es_positions=None)
        inst = Scenario(cfg).instance(0, 0)
        decision = solve_lsp(inst, default_allocation(M), None, rng=substream(cfg.rng_seed, "solver", 0)).decision
        res = solve_ssp(inst, decision)
        values = [it.objective for it in res.trace]
        monotone = all(b <= a for a, b in zip(values, values[1:]))
        worst = max(it.max_residual for it in res.trace)
        final = max((v.residual for v in check_feasibility(inst, decision, res.allocation)), default=0.0)
        good = monotone and res.converged and len(values) - 1 <= 50 and worst <= 1e-6 and final <= 1e-6
        ok &= good
        details.append(f"{M}x{K}: {len(values) - 1} it, residual {max(worst, final):.0e}")
    record(6, "short-term SCA convergence", ok, "; ".join(details))


@pytest.fixture(scope="module")
def benchmark_means():
    rows = run_comparison(TABLE2, default_schemes(), range(20), frames=1, slots=2)
    return summarize(rows)


def test_c7_benchmark_ordering(benchmark_means):
    s = benchmark_means
    P = s["PROPOSED"]
    obj = [s[k]["objective"] for k in ("PROPOSED", "FUAS", "RUAS")]
    neec = s["NEEC"]["cost_total"] / P["cost_total"]
    wo = s["WO_CLOUD"]["cost_total"] / P["cost_total"]
    others = ["FIXED_OFFLOAD(30)", "FIXED_OFFLOAD(80)", "FIXED_OFFLOAD(100)", "EB"]
    lat_ok = all(P["latency_total"] <= s[k]["latency_total"] for k in others)
    margin = s["FIXED_OFFLOAD(30)"]["latency_total"] / P["latency_total"] - 1
    checks = {
        "objective order": obj[0] <= obj[1] <= obj[2],
        "NEEC cost >= 1.5x": neec >= 1.5,
        "W/o cloud cost >= 1.5x": wo >= 1.5,
        "latency below fixed and EB": lat_ok,
        "fixed 30% margin >= 10%": margin >= 0.10,
    }
    failed = [k for k, v in checks.items() if not v]
    record(7, "benchmark ordering over 20 seeds", not failed,
           f"objectives {np.round(obj, 6).tolist()}, cost ratios NEEC {neec:.3f} W/o cloud {wo:.3f}, "
           f"fixed 30% margin {100 * margin:.1f}%" + (f"; failed: {', '.join(failed)}" if failed else ""))


def _non_increasing(values):
    return all(b <= a * (1 + SLOPE_TOL) for a, b in zip(values, values[1:]))


def test_c8_monotone_sweeps():
    schemes = default_schemes()
    seeds = range(5)
    grid_f = [2e9, 2.5e9, 3e9, 3.5e9]
    by_scheme = {}
    for fk in grid_f:
        means = summarize(run_comparison(TABLE2.replace(es_rate=fk), schemes, seeds, frames=1, slots=2))
        for name, m in means.items():
            by_scheme.setdefault(name, []).append(m["latency_total"])
    bad = [k for k, v in by_scheme.items() if not _non_increasing(v)]
    grid_e = [1.5e-4, 2e-4, 3e-4, 5e-4, 1e-3]
    lat_e = []
    for e in grid_e:
        means = summarize(run_comparison(TABLE2.replace(energy_cap=e), ["PROPOSED"], seeds, frames=1, slots=2))
        lat_e.append(means["PROPOSED"]["latency_total"])
    if not _non_increasing(lat_e):
        bad.append("PROPOSED over E_max")
    worst = max(max(b / a - 1 for a, b in zip(v, v[1:])) for v in [*by_scheme.values(), lat_e])
    record(8, "monotone sweeps over f_k and E_max", not bad,
           f"largest rise {100 * worst:+.2f}%, E_max latencies (ms) {np.round(np.array(lat_e) * 1e3, 3).tolist()}"
           + (f"; failed: {', '.join(bad)}" if bad else ""))


def test_c9_determinism(tmp_path):
    config = "configs/small.yaml"
    outs = [tmp_path / "a", tmp_path / "b"]
    codes = []
    for out in outs:
        codes.append(cli.main(["run", "--config", config, "--seeds", "0-1", "--out", str(out)]))
        codes.append(cli.main(["compare", "--config", config, "--seeds", "0-1", "--frames", "2",
                               "--schemes", "PROPOSED,RUAS,EB", "--out", str(out)]))
    names = ["run_trace.csv", "compare.csv"]
    same = all((outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names)
    record(9, "repeat runs give byte-identical CSVs", same and set(codes) == {0},
           f"{', '.join(names)} compared, exit codes {codes}")
