"""SCA solver for the short-term offloading/bandwidth subproblem.

For a fixed binary configuration the nonconvex pieces are the uplink rate (a
concave lower bound around the bandwidth anchor) and the product of the
offloaded fraction with the per-bit transmission time (an AM-GM upper bound
around both anchors). Both bounds are tight at the anchor, so each convex
solve starts from a feasible point of the next and the objective cannot rise.

Inside the program time is in milliseconds and energy in millijoules.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .scenario import Instance
from .system_model import (
    AllocationDecision,
    PlacementDecision,
    e2e_latency,
    link_rates,
    propagation_delay,
    total_cost,
    ue_energy,
    uplink_rates,
)

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
MS = 1e3  # seconds -> milliseconds, joules -> millijoules
PHI_CEILING = 1.0 - 1e-6
# Floor on the offloaded-fraction anchor inside the AM-GM bound. The bound stays
# valid for any positive anchor; the floor only keeps rho_bar/y_bar from
# wrecking the conditioning once a UE computes (almost) everything locally.
Y_ANCHOR_FLOOR = 1e-3
SSP_CONSTRAINTS = ("latency", "energy", "rate", "coupling", "offload_bounds", "bandwidth_bounds", "bandwidth_sum")


class SspInfeasible(RuntimeError):
    def __init__(self, message: str, report: dict | None = None):
        super().__init__(message)
        self.report = report or {}


def rate_lower_bound(b, b_anchor, gain_power, bandwidth, noise_density):
    """Concave minorant of b (W/ln2) ln(1 + c / (b W N0)) around ``b_anchor``.

    ``gain_power`` is P * ||h||^2.
    """
    b = np.asarray(b, dtype=float)
    bb = np.asarray(b_anchor, dtype=float)
    if np.any(b <= 0) or np.any(bb <= 0):
        raise ValueError("bandwidth shares must be positive")
    y_bar = bb * bandwidth * noise_density
    L = np.log1p(gain_power / y_bar)
    B = bb * gain_power / (gain_power + y_bar)
    return (bandwidth / LN2) * (2.0 * bb * L + B * (1.0 - b / bb) - L * bb**2 / b)


def true_rate(b, gain_power, bandwidth, noise_density):
    b = np.asarray(b, dtype=float)
    return b * (bandwidth / LN2) * np.log1p(gain_power / (b * bandwidth * noise_density))


def bilinear_upper_bound(y, z, y_anchor, z_anchor):
    """0.5 (z_bar/y_bar y^2 + y_bar/z_bar z^2) >= y z."""
    y_anchor = np.asarray(y_anchor, dtype=float)
    z_anchor = np.asarray(z_anchor, dtype=float)
    if np.any(y_anchor <= 0) or np.any(z_anchor <= 0):
        raise ValueError("anchors must be positive")
    return 0.5 * (z_anchor / y_anchor * np.asarray(y) ** 2 + y_anchor / z_anchor * np.asarray(z) ** 2)


@dataclass
class SspAnchors:
    phi: np.ndarray
    bw: np.ndarray
    rho: np.ndarray  # a * r in milliseconds


@dataclass
class SspIterate:
    iteration: int
    objective: float
    max_residual: float
    phi: np.ndarray
    bw: np.ndarray
    rho: np.ndarray


@dataclass
class SspResult:
    allocation: AllocationDecision
    trace: list = field(default_factory=list)
    objective: float = math.nan
    converged: bool = False
    restored: bool = False


@dataclass
class _Routes:
    """Per-UE constants implied by a binary configuration."""

    assoc: np.ndarray  # associated ES or -1
    gain_power: np.ndarray
    t_ue: np.ndarray  # ms per unit of phi
    t_remote: np.ndarray  # ms per unit of (1 - phi)
    t_prop: np.ndarray  # ms
    link: np.ndarray  # (K, M): ms per unit of (1 - phi) on each ES's outgoing links


def _routes(inst: Instance, decision: PlacementDecision) -> _Routes:
    cfg = inst.config
    M, K = inst.M, inst.K
    f_es = np.broadcast_to(np.asarray(cfg.es_rate, dtype=float), (K,))
    assoc = np.where(decision.assoc.sum(axis=1) > 0.5, np.argmax(decision.assoc, axis=1), -1)
    t_remote = np.zeros(M)
    link = np.zeros((K, M))
    ee = decision.offdiag_edge_edge()
    for m in range(M):
        k = assoc[m]
        if k < 0:
            continue
        if decision.edge_cloud[m, k] > 0.5:
            t_remote[m] = inst.cycles[m] / cfg.cloud_rate
            link[k, m] = inst.bits[m] / cfg.backhaul_rate
        elif ee[m, k].sum() > 0.5:
            j = int(np.argmax(ee[m, k]))
            t_remote[m] = inst.cycles[m] / f_es[j]
            link[k, m] = inst.bits[m] / cfg.fronthaul_rate
        else:
            t_remote[m] = inst.cycles[m] / f_es[k]
    gp = np.array([cfg.tx_power * inst.gains[m, k] if k >= 0 else 0.0 for m, k in enumerate(assoc)])
    return _Routes(assoc, gp, MS * inst.cycles / cfg.ue_rate, MS * t_remote,
                   MS * propagation_delay(inst, decision), MS * link)


def build_ssp_program(
    inst: Instance,
    decision: PlacementDecision,
    anchors: SspAnchors,
    cost_term: float = 0.0,
    phi_pin=None,
    bw_pin=None,
):
    """Convex surrogate around ``anchors``; returns (program, index map)."""
    cfg = inst.config
    M, K = inst.M, inst.K
    R = _routes(inst, decision)
    on = R.assoc >= 0
    W, N0 = cfg.bandwidth, cfg.noise_density
    e_cp = MS * 0.5 * cfg.eff_capacitance * inst.cycles * cfg.ue_rate**2  # mJ per unit phi
    p = conic.ConicProgram()
    X = p.x
    idx = {"phi": np.full(M, -1), "bw": np.full(M, -1), "rho": np.full(M, -1)}
    theta = p.add_var("link", 0.0)
    idx["link"] = theta
    phi_pin = np.full(M, np.nan) if phi_pin is None else np.asarray(phi_pin, dtype=float)
    bw_pin = np.full(M, np.nan) if bw_pin is None else np.asarray(bw_pin, dtype=float)

    # offloaded fraction y = 1 - phi as an affine expression per UE
    y = {}
    for m in np.nonzero(on)[0]:
        if np.isnan(phi_pin[m]):
            i = p.add_var(f"phi[{m}]", 0.0, PHI_CEILING)
        else:
            i = p.add_var(f"phi[{m}]", phi_pin[m], phi_pin[m])
        idx["phi"][m] = i
        y[m] = 1.0 - X(i)
        j = p.add_var(f"bw[{m}]", 0.0, 1.0)
        if not np.isnan(bw_pin[m]):
            p.fix(j, bw_pin[m])
        idx["bw"][m] = j
        idx["rho"][m] = p.add_var(f"rho[{m}]", 0.0)

    # shared link epigraph
    for k in range(K):
        row = conic.Affine.constant(0.0)
        for m in np.nonzero(on)[0]:
            if R.link[k, m] > 0:
                row = row + y[m] * R.link[k, m]
        p.add_le(row - X(theta))

    latency_terms = conic.Affine.constant(0.0)
    for m in range(M):
        if not on[m]:
            lat = conic.Affine.constant(R.t_ue[m] + R.t_prop[m]) + X(theta)
            p.add_le(lat, MS * cfg.latency_cap)
            latency_terms = latency_terms + lat
            continue
        b, rho = idx["bw"][m], idx["rho"][m]
        bb, rb = anchors.bw[m], max(anchors.rho[m], 1e-9)
        yb = max(1.0 - anchors.phi[m], Y_ANCHOR_FLOOR)
        # rate minorant: (W/ln2)(2 bb L + B (1 - b/bb) - L s), s >= bb^2 / b
        s = p.add_var(f"s[{m}]", 0.0)
        p.add_rotated(X(s), X(b), [conic.Affine.constant(bb)])
        gp = R.gain_power[m]
        yb_noise = bb * W * N0
        L = math.log1p(gp / yb_noise)
        Bc = bb * gp / (gp + yb_noise)
        rate = (conic.Affine.constant(2.0 * bb * L + Bc) - X(b, Bc / bb) - X(s, L)) * (W / LN2)
        p.add_ge(rate * (1.0 / cfg.rate_floor), 1.0)
        # rho * rate / (1e3 a) >= 1, i.e. rho is at least the transmit time of the whole task in ms
        p.add_rotated(X(rho), rate * (1.0 / (MS * inst.bits[m])), [conic.Affine.constant(1.0)])
        # (1 - phi) * rho, exact when phi is pinned, AM-GM bound otherwise
        if not np.isnan(phi_pin[m]):
            radio = X(rho, 1.0 - phi_pin[m])
        else:
            qy = p.add_var(f"qy[{m}]", 0.0)
            qr = p.add_var(f"qr[{m}]", 0.0)
            p.add_rotated(X(qy), conic.Affine.constant(1.0), [y[m]])
            p.add_rotated(X(qr), conic.Affine.constant(1.0), [X(rho)])
            radio = X(qy, 0.5 * rb / yb) + X(qr, 0.5 * yb / rb)
        phi_m = 1.0 - y[m]
        energy = radio * (cfg.tx_power) + phi_m * e_cp[m]
        p.add_le(energy, MS * cfg.energy_cap)
        lat = phi_m * R.t_ue[m] + y[m] * R.t_remote[m] + radio + X(theta) + R.t_prop[m]
        p.add_le(lat, MS * cfg.latency_cap)
        latency_terms = latency_terms + lat
    bws = idx["bw"][on]
    if bws.size:
        p.add_le(conic.Affine.of(bws, 1.0), 1.0)
    p.add_objective(latency_terms * cfg.weight_latency + MS * cfg.weight_cost * cost_term)
    return p, idx


def _min_bandwidth(inst, m, k, need_rate):
    """Smallest share giving UE m at least ``need_rate`` at ES k (rate grows with b)."""
    cfg = inst.config
    gp = cfg.tx_power * inst.gains[m, k]
    if true_rate(1.0, gp, cfg.bandwidth, cfg.noise_density) < need_rate:
        return math.inf
    lo, hi = 0.0, 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if mid > 0 and true_rate(mid, gp, cfg.bandwidth, cfg.noise_density) >= need_rate:
            hi = mid
        else:
            lo = mid
    return hi


def initial_point(inst: Instance, decision: PlacementDecision, phi_pin=None, bw_pin=None):
    """Feasible start: equal shares (raised to the rate floor if needed) and
    offloaded fractions as close to one half as the caps allow.

    Returns (AllocationDecision, restored flag); raises SspInfeasible.
    """
    cfg = inst.config
    M = inst.M
    R = _routes(inst, decision)
    on = R.assoc >= 0
    n_on = int(on.sum())
    phi_pin = np.full(M, np.nan) if phi_pin is None else np.asarray(phi_pin, dtype=float)
    bw_pin = np.full(M, np.nan) if bw_pin is None else np.asarray(bw_pin, dtype=float)
    bw = np.where(on, 1.0 / max(n_on, 1), 0.0)
    bw = np.where(np.isnan(bw_pin) | ~on, bw, bw_pin)
    restored = False
    b_min = np.array([_min_bandwidth(inst, m, R.assoc[m], cfg.rate_floor) if on[m] else 0.0 for m in range(M)])
    if np.any(bw[on] < b_min[on]):
        if not np.all(np.isnan(bw_pin[on])):
            raise SspInfeasible("pinned bandwidth below the rate floor", {"ues": np.nonzero(bw < b_min)[0].tolist()})
        spare = 1.0 - b_min[on].sum()
        if not np.isfinite(spare) or spare < 0:
            raise SspInfeasible("rate floor cannot be met with the available bandwidth",
                                {"min_share_sum": float(b_min[on].sum())})
        bw = np.where(on, b_min + spare / max(n_on, 1), 0.0)
        restored = True

    phi = np.where(on, 0.5, 1.0)
    phi = np.where(np.isnan(phi_pin) | ~on, phi, phi_pin)
    free = on & np.isnan(phi_pin)
    rates = np.where(on, link_rates(inst, bw)[np.arange(M), np.maximum(R.assoc, 0)], 0.0)
    for _ in range(20):
        alloc = AllocationDecision(phi.copy(), bw.copy())
        lat = e2e_latency(inst, decision, alloc).e2e
        en = ue_energy(inst, decision, alloc)
        bad = (lat > cfg.latency_cap * (1 - 1e-9)) | (en > cfg.energy_cap * (1 - 1e-9))
        if not bad.any():
            return alloc, restored
        if not (bad & free).any():
            break
        restored = True
        theta = max(0.0, float(np.max(R.link @ (1.0 - phi)))) / MS if R.link.size else 0.0
        for m in np.nonzero(bad & free)[0]:
            # both caps are affine in phi for fixed rate; intersect their feasible intervals
            t_tx = inst.bits[m] / rates[m]
            lat0 = R.t_prop[m] / MS + theta + R.t_remote[m] / MS + t_tx  # phi = 0 (own link share kept)
            dlat = R.t_ue[m] / MS - R.t_remote[m] / MS - t_tx
            e0 = cfg.tx_power * t_tx
            de = 0.5 * cfg.eff_capacitance * inst.cycles[m] * cfg.ue_rate**2 - e0
            lo, hi = 0.0, PHI_CEILING
            for c0, c1, cap in ((lat0, dlat, cfg.latency_cap), (e0, de, cfg.energy_cap)):
                cap = cap * (1 - 1e-6)
                if abs(c1) < 1e-300:
                    if c0 > cap:
                        lo, hi = 1.0, 0.0
                elif c1 > 0:
                    hi = min(hi, (cap - c0) / c1)
                else:
                    lo = max(lo, (cap - c0) / c1)
            if lo > hi:
                raise SspInfeasible("no offloading fraction meets the latency and energy caps", {"ue": int(m)})
            phi[m] = min(max(0.5, lo), hi)
    raise SspInfeasible("could not construct a feasible starting point", {})


def ssp_residual(inst, decision, alloc) -> float:
    from .system_model import check_feasibility

    viol = [v for v in check_feasibility(inst, decision, alloc, tol=0.0) if v.constraint in SSP_CONSTRAINTS]
    return max((v.residual for v in viol), default=0.0)


def true_objective(inst, decision, alloc, cost_term) -> float:
    """Exact weighted objective of the short-term problem (seconds plus cost)."""
    cfg = inst.config
    lat = e2e_latency(inst, decision, alloc).e2e.sum()
    return float(cfg.weight_latency * lat + cfg.weight_cost * cost_term)


def solve_ssp(
    inst: Instance,
    decision: PlacementDecision,
    init: AllocationDecision | None = None,
    tol: float = 1e-4,
    max_iter: int = 50,
    cost_term: float | None = None,
    phi_pin=None,
    bw_pin=None,
    solver_tol: float = conic.DEFAULT_TOL,
) -> SspResult:
    """Build the surrogate at the anchors, solve, re-anchor, repeat.

    The trace starts with the initial point (iteration 0) and records the exact
    objective of every accepted iterate. A step that would raise the exact
    objective (possible only when the anchor floor made the bound loose, or
    from solver noise) is rejected and the loop stops at the previous iterate.
    """
    R = _routes(inst, decision)
    on = R.assoc >= 0
    restored = False
    if init is None:
        init, restored = initial_point(inst, decision, phi_pin, bw_pin)
    if cost_term is None:
        cost_term = total_cost(decision, None, inst.config).total
    phi = np.where(on, np.minimum(np.asarray(init.phi, dtype=float), PHI_CEILING), 1.0)
    bw = np.where(on, np.asarray(init.bw, dtype=float), 0.0)

    def rho_of(phi, bw):
        rates = uplink_rates(inst, decision, AllocationDecision(phi, bw))
        return np.where(on & (rates > 0), MS * inst.bits / np.where(rates > 0, rates, 1.0), 0.0)

    rho = rho_of(phi, bw)
    start = AllocationDecision(phi.copy(), bw.copy())
    value = true_objective(inst, decision, start, cost_term)
    trace = [SspIterate(0, value, ssp_residual(inst, decision, start), phi.copy(), bw.copy(), rho.copy())]
    converged = False
    for it in range(1, max_iter + 1):
        prog, idx = build_ssp_program(inst, decision, SspAnchors(phi, bw, rho), cost_term, phi_pin, bw_pin)
        sol = conic.solve(prog, solver_tol)
        if not sol.ok:
            if it == 1:
                raise SspInfeasible(f"surrogate program {sol.status} at the starting point", {})
            log.warning("short-term surrogate returned %s; keeping the last iterate", sol.status)
            break
        x = sol.x
        new_phi, new_bw = phi.copy(), bw.copy()
        for m in np.nonzero(on)[0]:
            new_phi[m] = min(max(x[idx["phi"][m]], 0.0), PHI_CEILING)
            new_bw[m] = max(x[idx["bw"][m]], 1e-12)
        if new_bw[on].sum() > 1.0:
            new_bw[on] /= new_bw[on].sum()
        alloc = AllocationDecision(new_phi, new_bw)
        new_value = true_objective(inst, decision, alloc, cost_term)
        residual = ssp_residual(inst, decision, alloc)
        if new_value > value or residual > 1e-6:
            converged = True
            break
        phi, bw = new_phi, new_bw
        rho = rho_of(phi, bw)
        trace.append(SspIterate(it, new_value, residual, phi.copy(), bw.copy(), rho.copy()))
        if abs(value - new_value) <= tol * max(abs(value), 1e-12):
            converged = True
            value = new_value
            break
        value = new_value
    final = AllocationDecision(phi.copy(), bw.copy())
    return SspResult(final, trace, value, converged, restored)
