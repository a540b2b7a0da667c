"""Delay, rate, energy, load and cost evaluators.

Two families of evaluators live here:

* the *coupled* forms, which multiply association, cooperation and
  placement bits together exactly as the original model does, and
* the *simplified* forms, valid whenever the decision satisfies the
  service-availability / connectivity / transfer conditions
  (see ``lemma_residuals``), in which the products collapse to sums.

The simulator and the solvers use the simplified forms; the coupled ones are
kept for the exhaustive equivalence tests.

Shapes: M UEs, K ESs, S services.  ``assoc`` (M, K), ``edge_edge`` (M, K, K)
indexed [m, k, k'] for a transfer k -> k' (diagonal unused), ``edge_cloud``
(M, K), ``placement`` (S, K).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scenario import Instance, ScenarioConfig

LN2 = np.log(2.0)
FEASIBILITY_TOL = 1e-6


@dataclass
class PlacementDecision:
    assoc: np.ndarray
    edge_edge: np.ndarray
    edge_cloud: np.ndarray
    placement: np.ndarray

    @classmethod
    def zeros(cls, M: int, K: int, S: int) -> "PlacementDecision":
        return cls(np.zeros((M, K)), np.zeros((M, K, K)), np.zeros((M, K)), np.zeros((S, K)))

    @property
    def shape(self) -> tuple[int, int, int]:
        M, K = self.assoc.shape
        return M, K, self.placement.shape[0]

    def copy(self) -> "PlacementDecision":
        return PlacementDecision(*(np.array(a, dtype=float) for a in self.arrays()))

    def arrays(self):
        return self.assoc, self.edge_edge, self.edge_cloud, self.placement

    def offdiag_edge_edge(self) -> np.ndarray:
        K = self.assoc.shape[1]
        return self.edge_edge * (1.0 - np.eye(K))[None]

    def entries(self) -> np.ndarray:
        """All decision entries as one flat vector (edge-edge diagonal excluded)."""
        K = self.assoc.shape[1]
        off = ~np.eye(K, dtype=bool)
        return np.concatenate([
            self.assoc.ravel(), self.edge_edge[:, off].ravel(),
            self.edge_cloud.ravel(), self.placement.ravel(),
        ])

    def is_binary(self, tol: float = 0.0) -> bool:
        x = self.entries()
        return bool(np.all(np.minimum(np.abs(x), np.abs(1 - x)) <= tol))

    def rounded(self) -> "PlacementDecision":
        """Nearest binary point, floor(x + 0.5) entrywise."""
        out = PlacementDecision(*(np.floor(a + 0.5) for a in self.arrays()))
        K = out.assoc.shape[1]
        out.edge_edge[:, np.arange(K), np.arange(K)] = 0.0
        return out

    def __eq__(self, other):
        if not isinstance(other, PlacementDecision):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


@dataclass
class AllocationDecision:
    phi: np.ndarray  # locally executed fraction, (M,)
    bw: np.ndarray  # bandwidth fraction, (M,)

    def copy(self) -> "AllocationDecision":
        return AllocationDecision(np.array(self.phi, dtype=float), np.array(self.bw, dtype=float))


@dataclass
class CostLedger:
    change: np.ndarray  # lambda in {-1, 0, 1}, (S, K)
    change_cost: np.ndarray  # (S, K)
    operation_cost: np.ndarray  # (S, K)
    request_cost: float
    total: float
    average: float


@dataclass
class LatencyBreakdown:
    ue_cp: np.ndarray  # (M,)
    es_cp: np.ndarray  # (M, K), processing time if executed at ES k
    cloud_cp: np.ndarray  # (M,)
    radio: np.ndarray  # (M,)
    backhaul: np.ndarray  # (K,)
    fronthaul: np.ndarray  # (K,)
    tot_t: np.ndarray
    tot_pro: np.ndarray
    tot_cp: np.ndarray
    e2e: np.ndarray


@dataclass(frozen=True)
class Violation:
    constraint: str
    index: tuple
    residual: float


# ---------------------------------------------------------------------------
# elementary terms


def processing_delay(cycles, rate):
    rate = np.asarray(rate, dtype=float)
    if np.any(rate <= 0):
        raise ValueError("processing rate must be positive")
    return np.asarray(cycles, dtype=float) / rate


def snr(power, gain, bw, bandwidth, noise_density):
    bw = np.asarray(bw, dtype=float)
    if np.any(bw <= 0):
        raise ValueError("SNR is undefined for a zero bandwidth share")
    if bandwidth <= 0 or noise_density <= 0:
        raise ValueError("bandwidth and noise density must be positive")
    return power * np.asarray(gain, dtype=float) / (bw * bandwidth * noise_density)


def uplink_rate(assoc, bw, snr_per_k, bandwidth):
    """Sum over ESs of assoc_k * b * (W/ln2) * ln(1 + snr_k)."""
    assoc = np.asarray(assoc, dtype=float)
    return float(np.sum(assoc * bw * (bandwidth / LN2) * np.log1p(snr_per_k)))


def link_rates(inst: Instance, bw) -> np.ndarray:
    """Achievable rate of every (UE, ES) pair for the given shares, (M, K)."""
    cfg = inst.config
    b = np.asarray(bw, dtype=float)[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        gamma = cfg.tx_power * inst.gains / (b * cfg.bandwidth * cfg.noise_density)
        r = b * (cfg.bandwidth / LN2) * np.log1p(gamma)
    return np.where(b > 0, r, 0.0)


def uplink_rates(inst: Instance, decision: PlacementDecision, alloc: AllocationDecision) -> np.ndarray:
    return np.sum(decision.assoc * link_rates(inst, alloc.bw), axis=1)


def transmission_delay_ue(bits, phi, rate):
    """(1 - phi) a / R; zero when nothing is sent, inf when R = 0 but data is."""
    bits, phi, rate = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (bits, phi, rate)))
    sent = (1.0 - phi) * bits
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(sent <= 0, 0.0, np.where(rate > 0, sent / np.where(rate > 0, rate, 1.0), np.inf))
    return float(out) if out.ndim == 0 else out


def energy(phi, cycles, bits, rate, power, eff_capacitance, ue_rate):
    """Local computing energy plus transmit energy of one or many UEs."""
    compute = 0.5 * eff_capacitance * np.asarray(phi) * np.asarray(cycles) * ue_rate**2
    return compute + power * transmission_delay_ue(bits, phi, rate)


def _service_rows(decision: PlacementDecision, services) -> np.ndarray:
    """g[s_m, k] for every UE, (M, K)."""
    return decision.placement[np.asarray(services, dtype=int), :]


def _es_rates(cfg: ScenarioConfig, K: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(cfg.es_rate, dtype=float), (K,))


# ---------------------------------------------------------------------------
# simplified forms


def compute_loads(decision: PlacementDecision, cfg: ScenarioConfig) -> tuple[np.ndarray, float]:
    """Per-ES and cloud allocated cycles/s."""
    M, K, _ = decision.shape
    f_es = _es_rates(cfg, K)
    ee = decision.offdiag_edge_edge()
    kept = decision.assoc - ee.sum(axis=2) - decision.edge_cloud
    received = ee.sum(axis=(0, 1))  # tasks transferred into ES k
    f_k = (kept.sum(axis=0) + received) * f_es
    f_c = float(decision.edge_cloud.sum() * cfg.cloud_rate)
    return f_k, f_c


def backhaul_fronthaul_delays(inst: Instance, decision: PlacementDecision, phi) -> tuple[np.ndarray, np.ndarray]:
    cfg = inst.config
    sent = (1.0 - np.asarray(phi, dtype=float)) * inst.bits
    backhaul = decision.edge_cloud.T @ sent / cfg.backhaul_rate
    fronthaul = decision.offdiag_edge_edge().sum(axis=2).T @ sent / cfg.fronthaul_rate
    return backhaul, fronthaul


def propagation_delay(inst: Instance, decision: PlacementDecision, reduce: str = "max") -> np.ndarray:
    v = inst.config.propagation_speed
    ee = decision.offdiag_edge_edge()
    branch = decision.edge_cloud * inst.cloud_distance[None, :] / v
    branch = branch + np.einsum("mkj,kj->mk", ee, inst.es_distance) / v
    return _reduce(branch, reduce)


def _cp_times(inst: Instance, phi):
    cfg = inst.config
    phi = np.asarray(phi, dtype=float)
    off = (1.0 - phi) * inst.cycles
    ue = phi * inst.cycles / cfg.ue_rate
    es = off[:, None] / _es_rates(cfg, inst.K)[None, :]
    cloud = off / cfg.cloud_rate
    return ue, es, cloud


def total_processing_delay(inst: Instance, decision: PlacementDecision, phi, reduce: str = "max") -> np.ndarray:
    ue, es, cloud = _cp_times(inst, phi)
    ee = decision.offdiag_edge_edge()
    kept = decision.assoc - ee.sum(axis=2) - decision.edge_cloud
    branch = kept * es + np.einsum("mkj,mj->mk", ee, es) + decision.edge_cloud * cloud[:, None]
    return ue + _reduce(branch, reduce)


def _reduce(branch: np.ndarray, how: str) -> np.ndarray:
    if how == "max":
        return branch.max(axis=1)
    if how == "sum":
        return branch.sum(axis=1)
    raise ValueError(f"unknown reduction {how!r}")


# ---------------------------------------------------------------------------
# coupled forms (products of binaries kept explicit)


def compute_loads_coupled(decision: PlacementDecision, cfg: ScenarioConfig, services) -> tuple[np.ndarray, float]:
    M, K, _ = decision.shape
    f_es = _es_rates(cfg, K)
    g = _service_rows(decision, services)
    ee = decision.offdiag_edge_edge()
    sig = decision.assoc
    own = g * sig * (1.0 - ee.sum(axis=2) - decision.edge_cloud)
    f_k = own.sum(axis=0) * f_es
    # transfers from k' into k, gated by placement at k and association at k'
    into = np.einsum("mk,mj,mjk->k", g, sig, ee)
    f_k = f_k + into * f_es
    f_c = float(np.sum(sig * decision.edge_cloud) * cfg.cloud_rate)
    return f_k, f_c


def backhaul_fronthaul_delays_coupled(inst: Instance, decision: PlacementDecision, phi):
    cfg = inst.config
    sent = (1.0 - np.asarray(phi, dtype=float)) * inst.bits
    sig = decision.assoc
    g = _service_rows(decision, inst.services)
    ee = decision.offdiag_edge_edge()
    backhaul = (sig * decision.edge_cloud).T @ sent / cfg.backhaul_rate
    fwd = sig * np.einsum("mkj,mj->mk", ee, g)
    fronthaul = fwd.T @ sent / cfg.fronthaul_rate
    return backhaul, fronthaul


def propagation_delay_coupled(inst: Instance, decision: PlacementDecision) -> np.ndarray:
    v = inst.config.propagation_speed
    sig = decision.assoc
    g = _service_rows(decision, inst.services)
    ee = decision.offdiag_edge_edge()
    branch = sig * decision.edge_cloud * inst.cloud_distance[None, :] / v
    branch = branch + sig * np.einsum("mkj,mj,kj->mk", ee, g, inst.es_distance) / v
    return branch.max(axis=1)


def total_processing_delay_coupled(inst: Instance, decision: PlacementDecision, phi) -> np.ndarray:
    ue, es, cloud = _cp_times(inst, phi)
    sig = decision.assoc
    g = _service_rows(decision, inst.services)
    ee = decision.offdiag_edge_edge()
    at_k = es * sig * (1.0 - ee.sum(axis=2) - decision.edge_cloud) * g
    at_neighbor = sig * np.einsum("mkj,mj,mj->mk", ee, g, es)
    at_cloud = sig * decision.edge_cloud * cloud[:, None]
    return ue + (at_k + at_neighbor + at_cloud).max(axis=1)


# ---------------------------------------------------------------------------
# aggregate quantities


def e2e_latency(inst: Instance, decision: PlacementDecision, alloc: AllocationDecision) -> LatencyBreakdown:
    ue, es, cloud = _cp_times(inst, alloc.phi)
    rate = uplink_rates(inst, decision, alloc)
    radio = transmission_delay_ue(inst.bits, alloc.phi, rate)
    backhaul, fronthaul = backhaul_fronthaul_delays(inst, decision, alloc.phi)
    tot_t = radio + np.max(backhaul + fronthaul)
    tot_pro = propagation_delay(inst, decision)
    tot_cp = total_processing_delay(inst, decision, alloc.phi)
    return LatencyBreakdown(
        ue_cp=ue, es_cp=es, cloud_cp=cloud, radio=np.atleast_1d(radio), backhaul=backhaul,
        fronthaul=fronthaul, tot_t=tot_t, tot_pro=tot_pro, tot_cp=tot_cp,
        e2e=tot_pro + tot_cp + tot_t,
    )


def ue_energy(inst: Instance, decision: PlacementDecision, alloc: AllocationDecision) -> np.ndarray:
    cfg = inst.config
    rate = uplink_rates(inst, decision, alloc)
    return energy(alloc.phi, inst.cycles, inst.bits, rate, cfg.tx_power, cfg.eff_capacitance, cfg.ue_rate)


def status_change_cost(g_now, g_prev, price_install, price_uninstall):
    lam = np.asarray(g_now, dtype=float) - np.asarray(g_prev, dtype=float)
    smooth = 0.5 * lam**2 * (price_uninstall + price_install) - 0.5 * lam * (price_uninstall - price_install)
    # integer steps return the prices themselves, free of rounding in the quadratic form
    return np.where(lam == 1.0, price_install, np.where(lam == -1.0, price_uninstall, smooth))


def total_cost(decision: PlacementDecision, prev_placement, cfg: ScenarioConfig, history=()) -> CostLedger:
    """Cost of one long-term frame; ``history`` holds earlier frame totals."""
    prev = np.zeros_like(decision.placement) if prev_placement is None else np.asarray(prev_placement, float)
    lam = decision.placement - prev
    change = status_change_cost(decision.placement, prev, cfg.price_install, cfg.price_uninstall)
    operation = decision.placement * cfg.price_operate
    request = float(decision.edge_cloud.sum() * cfg.price_request)
    total = float(change.sum() + operation.sum() + request)
    totals = list(history) + [total]
    return CostLedger(lam, change, operation, request, total, float(np.mean(totals)))


def objective(inst: Instance, decision: PlacementDecision, alloc: AllocationDecision, prev_placement=None) -> float:
    cfg = inst.config
    lat = e2e_latency(inst, decision, alloc)
    cost = total_cost(decision, prev_placement, cfg)
    return float(cfg.weight_latency * lat.e2e.sum() + cfg.weight_cost * cost.total)


# ---------------------------------------------------------------------------
# feasibility


def lemma_residuals(decision: PlacementDecision, services) -> dict[str, np.ndarray]:
    """lhs - rhs of every structural row; feasible rows are <= 0."""
    sig, ec = decision.assoc, decision.edge_cloud
    ee = decision.offdiag_edge_edge()
    g = _service_rows(decision, services)
    fwd = ee.sum(axis=2)
    M, K, _ = decision.shape
    off = ~np.eye(K, dtype=bool)
    # transfer k -> k' needs the service at k'
    transfer = np.where(off[None], ee - g[:, None, :], -np.inf)
    return {
        "service_availability": sig - fwd - ec - g,
        "connectivity": np.stack([fwd + ec - sig, fwd - sig, ec - sig], axis=-1),
        "transfer": transfer,
    }


def structural_residuals(decision: PlacementDecision, cfg: ScenarioConfig) -> dict[str, np.ndarray]:
    ee = decision.offdiag_edge_edge()
    n_srv = decision.placement.sum(axis=0)
    x = decision.entries()
    return {
        "binary": np.minimum(np.abs(x), np.abs(1.0 - x)),
        "single_association": decision.assoc.sum(axis=1) - 1.0,
        "single_route": ee.sum(axis=2) + decision.edge_cloud - 1.0,
        "single_neighbor": ee.sum(axis=2) - 1.0,
        "min_services": 1.0 - n_srv,
        "max_services": n_srv - cfg.max_services_per_es,
    }


def check_feasibility(
    inst: Instance,
    decision: PlacementDecision,
    alloc: AllocationDecision,
    prev_placement=None,
    tol: float = FEASIBILITY_TOL,
) -> list[Violation]:
    """Every violated constraint with its normalized residual.

    Caps are normalized by their bound (e.g. latency/T_max - 1); structural rows
    are already O(1). An empty list means feasible within ``tol``.
    """
    cfg = inst.config
    rows: dict[str, np.ndarray] = {}
    phi, bw = np.asarray(alloc.phi, float), np.asarray(alloc.bw, float)

    lat = e2e_latency(inst, decision, alloc)
    rows["latency"] = lat.e2e / cfg.latency_cap - 1.0
    rows["energy"] = ue_energy(inst, decision, alloc) / cfg.energy_cap - 1.0
    # the rate floor binds only UEs that actually transmit to some ES
    linked = decision.assoc.sum(axis=1) > 0.5
    rows["rate"] = np.where(linked, 1.0 - uplink_rates(inst, decision, alloc) / cfg.rate_floor, 0.0)
    cost = total_cost(decision, prev_placement, cfg)
    rows["cost"] = np.array([cost.total / cfg.cost_cap - 1.0])
    f_k, f_c = compute_loads(decision, cfg)
    rows["es_capacity"] = f_k / cfg.es_capacity - 1.0
    rows["cloud_capacity"] = np.array([f_c / cfg.cloud_capacity - 1.0])
    rows["coupling"] = np.abs(phi + decision.assoc.sum(axis=1) * (1.0 - phi) - 1.0)
    rows.update(structural_residuals(decision, cfg))
    rows.update(lemma_residuals(decision, inst.services))
    rows["offload_bounds"] = np.stack([-phi, phi - 1.0], axis=-1)
    rows["bandwidth_bounds"] = -bw
    rows["bandwidth_sum"] = np.array([bw.sum() - 1.0])

    out = []
    for name, arr in rows.items():
        arr = np.nan_to_num(np.asarray(arr, dtype=float), nan=np.inf, neginf=-np.inf)
        for idx in zip(*np.nonzero(arr > tol)):
            out.append(Violation(name, tuple(int(i) for i in idx), float(arr[idx])))
    return out
