import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import half_split, kept_local, make_instance
from hecc.bnb import enumerate_lemma_feasible
from hecc.system_model import (
    AllocationDecision,
    PlacementDecision,
    backhaul_fronthaul_delays,
    backhaul_fronthaul_delays_coupled,
    check_feasibility,
    compute_loads,
    compute_loads_coupled,
    e2e_latency,
    energy,
    lemma_residuals,
    objective,
    processing_delay,
    propagation_delay,
    propagation_delay_coupled,
    snr,
    status_change_cost,
    total_cost,
    total_processing_delay,
    total_processing_delay_coupled,
    transmission_delay_ue,
    ue_energy,
    uplink_rate,
    uplink_rates,
)

LN2 = math.log(2.0)


# -- elementary terms -------------------------------------------------------


def test_processing_delay_examples():
    assert processing_delay(0.0, 1e9) == 0.0
    assert processing_delay(3.0e5, 1e9) == pytest.approx(3.0e-4, rel=1e-15)
    assert processing_delay(3.0e5, 0.5e9) == pytest.approx(2 * processing_delay(3.0e5, 1e9))
    with pytest.raises(ValueError):
        processing_delay(1.0, 0.0)


def test_snr_examples():
    assert snr(1.0, 4.0, 0.5, 2.0, 1.0) == pytest.approx(4.0)
    assert snr(1.0, 4.0, 1.0, 2.0, 1.0) == pytest.approx(snr(1.0, 4.0, 0.5, 2.0, 1.0) / 2)
    assert snr(1.0, 0.0, 0.5, 2.0, 1.0) == 0.0
    with pytest.raises(ValueError):
        snr(1.0, 4.0, 0.0, 2.0, 1.0)


def test_uplink_rate_examples():
    assert uplink_rate([0.0, 0.0], 0.5, [3.0, 7.0], 1e6) == 0.0
    assert uplink_rate([1.0], 1.0, [3.0], LN2) == pytest.approx(math.log(4.0), rel=1e-15)
    assert uplink_rate([0.0, 0.0], 1.0, [0.0, 0.0], 1e6) == 0.0


def test_uplink_rate_increasing_in_share():
    inst = make_instance(1, 1, 1)
    shares = np.linspace(0.01, 1.0, 200)
    rates = [uplink_rates(inst, kept_local(inst), AllocationDecision(np.zeros(1), np.array([b])))[0] for b in shares]
    assert np.all(np.diff(rates) > 0)


def test_transmission_delay_examples():
    assert transmission_delay_ue(1e4, 1.0, 0.0) == 0.0
    assert transmission_delay_ue(1e4, 0.5, 1e6) == pytest.approx(5e-3)
    assert transmission_delay_ue(1e4, 0.0, 1e6) == pytest.approx(2 * transmission_delay_ue(1e4, 0.5, 1e6))
    assert transmission_delay_ue(1e4, 0.5, 0.0) == math.inf


def test_energy_examples():
    assert energy(1.0, 3e5, 1e4, 0.0, 0.2, 1e-27, 1e9) == pytest.approx(1.5e-4, rel=1e-12)
    e = energy(0.4, 3e5, 1e4, 2e6, 0.2, 1e-27, 1e9)
    compute = 0.5e-27 * 0.4 * 3e5 * 1e18
    assert e - compute == pytest.approx(0.2 * transmission_delay_ue(1e4, 0.4, 2e6), rel=1e-12)


# -- routes -----------------------------------------------------------------


def _cloud_route(inst, m=0, k=0):
    d = kept_local(inst, k)
    d.edge_cloud[m, k] = 1.0
    return d


def test_backhaul_single_cloud_user():
    inst = make_instance(1, 2, 1)
    inst = inst.replace(bits=np.array([2e6]))
    back, front = backhaul_fronthaul_delays(inst, _cloud_route(inst), np.array([0.5]))
    assert back[0] == pytest.approx(1e-3, rel=1e-15)
    assert back[1] == 0.0 and np.all(front == 0.0)


def test_no_cloud_means_no_backhaul(tiny):
    back, _ = backhaul_fronthaul_delays(tiny, kept_local(tiny), np.full(2, 0.3))
    assert np.all(back == 0.0)


def test_propagation_examples():
    inst = make_instance(1, 2, 1)
    assert propagation_delay(inst, kept_local(inst))[0] == 0.0
    assert propagation_delay(inst, _cloud_route(inst))[0] == pytest.approx(1e4 / 2e8)
    d = kept_local(inst)
    d.edge_edge[0, 0, 1] = 1.0
    d.placement[:, 1] = 1.0
    assert propagation_delay(inst, d)[0] <= propagation_delay(inst, _cloud_route(inst))[0]


def test_processing_cloud_route_uses_cloud_rate():
    inst = make_instance(1, 2, 1)
    phi = np.array([0.25])
    got = total_processing_delay(inst, _cloud_route(inst), phi)[0]
    expected = 0.25 * inst.cycles[0] / 1e9 + 0.75 * inst.cycles[0] / 4e9
    assert got == pytest.approx(expected, rel=1e-14)
    local_only = total_processing_delay(inst, _cloud_route(inst), np.array([1.0]))[0]
    assert local_only == pytest.approx(inst.cycles[0] / 1e9)


def test_compute_loads_examples(tiny):
    empty = PlacementDecision.zeros(2, 2, 2)
    f_k, f_c = compute_loads(empty, tiny.config)
    assert np.all(f_k == 0) and f_c == 0
    one = PlacementDecision.zeros(2, 2, 2)
    one.assoc[0, 0] = 1.0
    one.placement[tiny.services[0], 0] = 1.0
    f_k, f_c = compute_loads(one, tiny.config)
    assert f_k[0] == 2e9 and f_k[1] == 0 and f_c == 0


# -- costs -------------------------------------------------------------------


@pytest.mark.parametrize("lam, expected", [(1, 0.1), (-1, 0.05), (0, 0.0)])
def test_status_change_truth_table(lam, expected):
    now, prev = (1.0, 0.0) if lam == 1 else (0.0, 1.0) if lam == -1 else (1.0, 1.0)
    assert status_change_cost(now, prev, 0.1, 0.05) == expected


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_status_change_smooth_form(now, prev):
    lam = now - prev
    expected = 0.5 * lam**2 * 0.15 - 0.5 * lam * (0.05 - 0.1)
    assert status_change_cost(now, prev, 0.1, 0.05) == pytest.approx(expected, abs=1e-15)


def test_total_cost_examples(tiny):
    cfg = tiny.config
    d = kept_local(tiny)
    placed = d.placement.sum()
    ledger = total_cost(d, d.placement, cfg)
    assert ledger.total == pytest.approx(placed * 0.1)
    prev = d.placement.copy()
    d2 = d.copy()
    free = np.argwhere(d2.placement == 0)[:2]
    for s, k in free:
        d2.placement[s, k] = 1.0
    d2.edge_cloud[0, 0] = 1.0
    ledger = total_cost(d2, prev, cfg)
    assert ledger.total == pytest.approx(2 * 0.1 + d2.placement.sum() * 0.1 + 0.01, abs=1e-15)
    assert set(np.unique(ledger.change)) <= {0.0, 1.0}


def test_average_of_identical_frames(tiny):
    d = kept_local(tiny)
    single = total_cost(d, d.placement, tiny.config).total
    ledger = total_cost(d, d.placement, tiny.config, history=[single] * 4)
    assert ledger.average == pytest.approx(single)


def test_objective_weights(tiny):
    d, a = kept_local(tiny), half_split(2)
    lat = e2e_latency(tiny, d, a).e2e.sum()
    cost = total_cost(d, None, tiny.config).total
    pure_t = tiny.replace(config=tiny.config.replace(weight_latency=1.0, weight_cost=0.0))
    pure_c = tiny.replace(config=tiny.config.replace(weight_latency=0.0, weight_cost=1.0))
    assert objective(pure_t, d, a) == pytest.approx(lat)
    assert objective(pure_c, d, a) == pytest.approx(cost)
    assert objective(tiny, d, a) == pytest.approx(0.99 * lat + 0.01 * cost)


# -- e2e latency -------------------------------------------------------------


def _hand_e2e(inst, d, phi, bw):
    """Loop-by-loop evaluation with scalar arithmetic only."""
    cfg = inst.config
    M, K = inst.M, inst.K
    back = [0.0] * K
    front = [0.0] * K
    radio = []
    for m in range(M):
        rate = 0.0
        for k in range(K):
            if d.assoc[m, k]:
                gamma = cfg.tx_power * inst.gains[m, k] / (bw[m] * cfg.bandwidth * cfg.noise_density)
                rate = bw[m] * cfg.bandwidth / LN2 * math.log(1 + gamma)
        sent = (1 - phi[m]) * inst.bits[m]
        radio.append(0.0 if sent == 0 else (math.inf if rate == 0 else sent / rate))
        for k in range(K):
            back[k] += d.edge_cloud[m, k] * sent / cfg.backhaul_rate
            for j in range(K):
                if j != k:
                    front[k] += d.edge_edge[m, k, j] * sent / cfg.fronthaul_rate
    link = max(b + f for b, f in zip(back, front))
    out = []
    for m in range(M):
        off = (1 - phi[m]) * inst.cycles[m]
        cp, prop = 0.0, 0.0
        for k in range(K):
            fwd = sum(d.edge_edge[m, k, j] for j in range(K) if j != k)
            branch = (d.assoc[m, k] - fwd - d.edge_cloud[m, k]) * off / cfg.es_rate
            branch += sum(d.edge_edge[m, k, j] * off / cfg.es_rate for j in range(K) if j != k)
            branch += d.edge_cloud[m, k] * off / cfg.cloud_rate
            cp = max(cp, branch)
            p = d.edge_cloud[m, k] * inst.cloud_distance[k] / cfg.propagation_speed
            p += sum(d.edge_edge[m, k, j] * inst.es_distance[k, j] / cfg.propagation_speed
                     for j in range(K) if j != k)
            prop = max(prop, p)
        out.append(phi[m] * inst.cycles[m] / cfg.ue_rate + cp + prop + radio[m] + link)
    return out


def test_e2e_matches_hand_evaluation():
    inst = make_instance(3, 2, 2, seed=5)
    d = PlacementDecision.zeros(3, 2, 2)
    d.placement[:] = [[1, 0], [0, 1]]
    services = inst.services
    # UE0 kept or forwarded, UE1 to the cloud, UE2 silent
    d.assoc[0, 0] = 1.0
    if d.placement[services[0], 0] == 0:
        d.edge_edge[0, 0, 1] = 1.0
    d.assoc[1, 1] = 1.0
    d.edge_cloud[1, 1] = 1.0
    phi = np.array([0.3, 0.6, 1.0])
    bw = np.array([0.4, 0.5, 0.0])
    got = e2e_latency(inst, d, AllocationDecision(phi, bw)).e2e
    assert got == pytest.approx(_hand_e2e(inst, d, phi, bw), rel=1e-13)


def test_fully_local_latency_is_local_time(tiny):
    d = PlacementDecision.zeros(2, 2, 2)
    d.placement[0, :] = 1.0
    lat = e2e_latency(tiny, d, AllocationDecision(np.ones(2), np.zeros(2))).e2e
    assert lat == pytest.approx(tiny.cycles / 1e9)


@given(st.integers(0, 50), st.floats(0.0, 1.0), st.floats(0.05, 0.95))
def test_e2e_is_sum_of_breakdown(seed, phi0, b0):
    inst = make_instance(2, 2, 2, seed=seed)
    d = _cloud_route(inst)
    lb = e2e_latency(inst, d, AllocationDecision(np.array([phi0, 0.5]), np.array([b0, 1 - b0])))
    assert np.allclose(lb.e2e, lb.tot_pro + lb.tot_cp + lb.tot_t, rtol=0, atol=0)
    for part in (lb.ue_cp, lb.es_cp, lb.cloud_cp, lb.radio, lb.backhaul, lb.fronthaul, lb.tot_t, lb.tot_pro, lb.tot_cp):
        assert np.all(part >= 0)


@given(st.integers(0, 30), st.sampled_from(["ue_rate", "es_rate", "cloud_rate", "backhaul_rate", "fronthaul_rate"]),
       st.floats(1.01, 4.0))
def test_e2e_non_increasing_in_server_rates(seed, name, factor):
    inst = make_instance(3, 2, 2, seed=seed)
    d = _cloud_route(inst, m=1, k=0)
    alloc = half_split(3)
    faster = inst.replace(config=inst.config.replace(**{name: getattr(inst.config, name) * factor}))
    assert np.all(e2e_latency(faster, d, alloc).e2e <= e2e_latency(inst, d, alloc).e2e)


def test_evaluators_are_pure(tiny):
    d, a = _cloud_route(tiny), half_split(2)
    before = [x.copy() for x in d.arrays()]
    first = e2e_latency(tiny, d, a).e2e.copy()
    second = e2e_latency(tiny, d, a).e2e
    assert np.array_equal(first, second)
    assert all(np.array_equal(x, y) for x, y in zip(before, d.arrays()))
    assert np.array_equal(ue_energy(tiny, d, a), ue_energy(tiny, d, a))


# -- coupled versus simplified forms ------------------------------------------


def test_product_truth_table():
    for a, b in [(0, 0), (1, 0), (1, 1)]:  # every admissible row with b <= a
        assert a * b == b


@pytest.mark.parametrize("seed", [0, 1])
def test_coupled_equals_simplified_two_by_two(seed):
    inst = make_instance(2, 2, 2, seed=seed)
    phi = np.array([0.3, 0.7])
    count = 0
    for d in enumerate_lemma_feasible(2, 2, 2, inst.services):
        count += 1
        assert np.array_equal(compute_loads(d, inst.config)[0], compute_loads_coupled(d, inst.config, inst.services)[0])
        for a, b in zip(backhaul_fronthaul_delays(inst, d, phi), backhaul_fronthaul_delays_coupled(inst, d, phi)):
            assert np.max(np.abs(a - b)) <= 1e-12
        assert np.max(np.abs(propagation_delay(inst, d) - propagation_delay_coupled(inst, d))) <= 1e-12
        simple = total_processing_delay(inst, d, phi)
        assert np.max(np.abs(simple - total_processing_delay_coupled(inst, d, phi))) <= 1e-12
        # at most one branch is active, so max and sum coincide
        assert np.max(np.abs(simple - total_processing_delay(inst, d, phi, reduce="sum"))) <= 1e-12
    assert count > 0


# -- feasibility -------------------------------------------------------------


def test_bandwidth_overbooking_reported(tiny):
    d = kept_local(tiny)
    viol = check_feasibility(tiny, d, AllocationDecision(np.full(2, 0.5), np.array([0.75, 0.75])))
    rows = [v for v in viol if v.constraint == "bandwidth_sum"]
    assert len(rows) == 1 and rows[0].residual == pytest.approx(0.5)


def test_all_local_point_feasible_when_caps_hold(tiny):
    d = PlacementDecision.zeros(2, 2, 2)
    d.placement[0, :] = 1.0
    alloc = AllocationDecision(np.ones(2), np.zeros(2))
    bad = {v.constraint for v in check_feasibility(tiny, d, alloc)}
    local = tiny.cycles / tiny.config.ue_rate
    assert np.all(local <= tiny.config.latency_cap)
    assert not bad
    tight = tiny.replace(config=tiny.config.replace(latency_cap=float(local.min()) * 0.5))
    assert "latency" in {v.constraint for v in check_feasibility(tight, d, alloc)}


def _independent_violations(inst, d, alloc, tol=1e-6):
    """Constraint-by-constraint re-evaluation for a subset of rows."""
    cfg = inst.config
    out = set()
    lat = _hand_e2e(inst, d, alloc.phi, alloc.bw)
    if any(t / cfg.latency_cap - 1 > tol for t in lat):
        out.add("latency")
    if sum(alloc.bw) - 1 > tol:
        out.add("bandwidth_sum")
    for m in range(inst.M):
        if d.assoc[m].sum() > 1 + tol:
            out.add("single_association")
        if abs(alloc.phi[m] + d.assoc[m].sum() * (1 - alloc.phi[m]) - 1) > tol:
            out.add("coupling")
        for k in range(inst.K):
            s = inst.services[m]
            fwd = sum(d.edge_edge[m, k, j] for j in range(inst.K) if j != k)
            if d.assoc[m, k] - fwd - d.edge_cloud[m, k] - d.placement[s, k] > tol:
                out.add("service_availability")
    return out


@given(st.integers(0, 10_000))
def test_feasibility_matches_duplicate_evaluator(seed):
    rng = np.random.default_rng(seed)
    inst = make_instance(3, 2, 2, seed=seed % 7)
    d = PlacementDecision.zeros(3, 2, 2)
    d.placement[:] = rng.integers(0, 2, size=(2, 2))
    for m in range(3):
        k = rng.integers(-1, 2)
        if k >= 0:
            d.assoc[m, k] = 1.0
            if rng.random() < 0.3:
                d.edge_cloud[m, k] = 1.0
    alloc = AllocationDecision(rng.uniform(0.0, 1.0, 3), rng.uniform(0.05, 0.6, 3))
    got = {v.constraint for v in check_feasibility(inst, d, alloc)}
    expected = _independent_violations(inst, d, alloc)
    checked = {"latency", "bandwidth_sum", "single_association", "coupling", "service_availability"}
    assert got & checked == expected


def test_lemma_rows_zero_on_enumerated_points(tiny):
    for d in enumerate_lemma_feasible(2, 2, 2, tiny.services):
        res = lemma_residuals(d, tiny.services)
        assert all(np.all(r <= 0) for r in res.values())
