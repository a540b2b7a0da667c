"""Penalty-SCA solver for the long-term placement/cooperation subproblem.

With the short-term allocation (phi, b) held fixed, every latency and cost
term is affine in the relaxed binaries except the max-over-ESs terms (handled
with epigraph variables) and the squared status change (a rotated cone). The
binary requirement is replaced by the concave penalty delta - delta^2, which
is majorized by its tangent at the current anchor; repeating the convex solve
and re-anchoring drives the iterate to a binary point.
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
    check_feasibility,
    link_rates,
    objective,
)

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 1e4
# the program minimizes OBJECTIVE_SCALE * objective + alpha * penalty; the scale
# was calibrated so that alpha = 1e4 drives the relaxed entries to binary values
# within a few iterations without overriding the latency/cost trade-off
OBJECTIVE_SCALE = 3e6
TIME_UNIT = 1e-6
ANCHOR_BAND = (0.45, 0.55)
# an SCA run that stops above this penalty is treated as stalled
BINARY_PENALTY = 1e-3
DEFAULT_STARTS = 3  # random anchors per solve; the best rounding wins
PIN_KEYS = ("assoc", "edge_edge", "edge_cloud", "placement")


class LspInfeasible(RuntimeError):
    """The fixed short-term allocation admits no feasible configuration."""

    def __init__(self, message: str, report: dict | None = None):
        super().__init__(message)
        self.report = report or {}


def penalty(delta) -> float:
    """Sum of delta - delta^2; accepts an array or a PlacementDecision."""
    x = delta.entries() if isinstance(delta, PlacementDecision) else np.asarray(delta, dtype=float).ravel()
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError("penalty is defined on [0, 1] only")
    return float(np.sum(x - x * x))


def penalty_surrogate(delta, anchor) -> float:
    """Tangent majorizer sum(delta - 2 delta anchor + anchor^2)."""
    x = delta.entries() if isinstance(delta, PlacementDecision) else np.asarray(delta, dtype=float).ravel()
    a = anchor.entries() if isinstance(anchor, PlacementDecision) else np.asarray(anchor, dtype=float).ravel()
    return float(np.sum(x - 2.0 * x * a + a * a))


@dataclass
class LspVars:
    """Variable indices of the long-term program (edge_edge diagonal is -1)."""

    assoc: np.ndarray
    edge_edge: np.ndarray
    edge_cloud: np.ndarray
    placement: np.ndarray
    prop: np.ndarray
    proc: np.ndarray
    link: int
    switch: np.ndarray

    def decision(self, x: np.ndarray) -> PlacementDecision:
        ee = np.where(self.edge_edge >= 0, x[np.maximum(self.edge_edge, 0)], 0.0)
        return PlacementDecision(x[self.assoc].copy(), ee, x[self.edge_cloud].copy(), x[self.placement].copy())

    def binary_indices(self) -> np.ndarray:
        K = self.assoc.shape[1]
        off = ~np.eye(K, dtype=bool)
        return np.concatenate([self.assoc.ravel(), self.edge_edge[:, off].ravel(),
                               self.edge_cloud.ravel(), self.placement.ravel()])


@dataclass
class LspIterate:
    iteration: int
    penalized_objective: float
    penalty_value: float
    max_fractionality: float
    delta: PlacementDecision | None = None


@dataclass
class LspResult:
    decision: PlacementDecision
    trace: list = field(default_factory=list)
    objective: float = math.nan
    converged: bool = False
    retries: int = 0
    fallback: bool = False
    report: dict = field(default_factory=dict)


def _pin_array(pins, key, shape):
    if not pins or pins.get(key) is None:
        return np.full(shape, np.nan)
    return np.broadcast_to(np.asarray(pins[key], dtype=float), shape)


def build_lsp_program(
    inst: Instance,
    alloc: AllocationDecision,
    prev_placement,
    anchor: PlacementDecision | None,
    alpha: float,
    pins: dict | None = None,
    scale: float = OBJECTIVE_SCALE,
) -> tuple[conic.ConicProgram, LspVars]:
    """Convexified long-term program around ``anchor``.

    ``pins`` maps decision names to arrays with NaN for free entries; pinned
    entries become fixed variables (used by the benchmark schemes and the
    branch-and-bound oracle). With ``alpha == 0`` the program is the plain
    continuous relaxation.
    """
    cfg = inst.config
    M, K, S = inst.M, inst.K, inst.S
    phi = np.asarray(alloc.phi, dtype=float)
    bw = np.asarray(alloc.bw, dtype=float)
    prev = np.zeros((S, K)) if prev_placement is None else np.asarray(prev_placement, dtype=float)
    # time variables are carried in microseconds
    tu = 1.0 / TIME_UNIT
    wt, wc = cfg.weight_latency * scale * TIME_UNIT, cfg.weight_cost * scale
    v = cfg.propagation_speed / tu
    sent = (1.0 - phi) * inst.bits
    f_es = np.broadcast_to(np.asarray(cfg.es_rate, dtype=float), (K,))
    t_es = tu * ((1.0 - phi) * inst.cycles)[:, None] / f_es[None, :]
    t_cloud = tu * (1.0 - phi) * inst.cycles / cfg.cloud_rate
    t_ue = tu * phi * inst.cycles / cfg.ue_rate
    rates = link_rates(inst, bw)

    p = conic.ConicProgram()
    pin = {k: _pin_array(pins, k, s) for k, s in
           (("assoc", (M, K)), ("edge_edge", (M, K, K)), ("edge_cloud", (M, K)), ("placement", (S, K)))}

    def binvars(name, shape, fixed):
        idx = p.add_vars(name, shape, 0.0, 1.0)
        for pos in np.ndindex(*shape):
            if not np.isnan(fixed[pos]):
                p.fix(idx[pos], fixed[pos])
        return idx

    sig = binvars("assoc", (M, K), pin["assoc"])
    ee = np.full((M, K, K), -1, dtype=np.int64)
    for m in range(M):
        for k in range(K):
            for j in range(K):
                if j != k:
                    ee[m, k, j] = p.add_var(f"edge_edge[{m},{k},{j}]", 0.0, 1.0)
                    if not np.isnan(pin["edge_edge"][m, k, j]):
                        p.fix(ee[m, k, j], pin["edge_edge"][m, k, j])
    ec = binvars("edge_cloud", (M, K), pin["edge_cloud"])
    g = binvars("placement", (S, K), pin["placement"])
    prop = p.add_vars("prop", (M,), 0.0)
    proc = p.add_vars("proc", (M,), 0.0)
    link = p.add_var("link", 0.0)
    switch = p.add_vars("switch", (S, K), 0.0)
    V = LspVars(sig, ee, ec, g, prop, proc, link, switch)

    def X(i, c=1.0):
        return conic.Affine.of([i], [c])

    def fwd(m, k):  # sum over k' of edge_edge[m, k, k']
        js = [j for j in range(K) if j != k]
        return conic.Affine.of(ee[m, k, js], 1.0) if js else conic.Affine.constant(0.0)

    # transmission: radio constants (exact at binary association) plus shared link epigraph
    radio = np.zeros((M, K))
    for m in range(M):
        for k in range(K):
            if sent[m] <= 0:
                radio[m, k] = 0.0
            elif rates[m, k] > 0:
                radio[m, k] = tu * sent[m] / rates[m, k]
            else:
                p.fix(sig[m, k], 0.0)
    for k in range(K):
        row = conic.Affine.constant(0.0)
        for m in range(M):
            row = row + X(ec[m, k], tu * sent[m] / cfg.backhaul_rate) + fwd(m, k) * (tu * sent[m] / cfg.fronthaul_rate)
        p.add_le(row - X(link))

    # propagation and processing epigraphs, one row per ES
    for m in range(M):
        for k in range(K):
            row = X(ec[m, k], inst.cloud_distance[k] / v)
            for j in range(K):
                if j != k:
                    row = row + X(ee[m, k, j], inst.es_distance[k, j] / v)
            p.add_le(row - X(prop[m]))
            branch = (X(sig[m, k]) - fwd(m, k) - X(ec[m, k])) * t_es[m, k] + X(ec[m, k], t_cloud[m])
            for j in range(K):
                if j != k:
                    branch = branch + X(ee[m, k, j], t_es[m, j])
            p.add_le(branch - X(proc[m]))

    def e2e(m):
        radio_m = conic.Affine.of(sig[m], radio[m])
        return radio_m + X(link) + X(prop[m]) + X(proc[m]) + t_ue[m]

    # status change: switch >= (g - prev)^2
    for s in range(S):
        for k in range(K):
            lam = X(g[s, k]) - prev[s, k]
            p.add_rotated(X(switch[s, k]), conic.Affine.constant(1.0), [lam])
    cost = conic.Affine.constant(0.0)
    half_sum = 0.5 * (cfg.price_uninstall + cfg.price_install)
    half_diff = 0.5 * (cfg.price_uninstall - cfg.price_install)
    for s in range(S):
        for k in range(K):
            cost = cost + X(switch[s, k], half_sum) - (X(g[s, k]) - prev[s, k]) * half_diff
            cost = cost + X(g[s, k], cfg.price_operate)
    cost = cost + conic.Affine.of(ec.ravel(), cfg.price_request)

    # objective
    total_latency = conic.Affine.constant(0.0)
    for m in range(M):
        total_latency = total_latency + e2e(m)
    p.add_objective(total_latency * wt + cost * wc)
    if alpha > 0:
        a = anchor.entries() if anchor is not None else np.full(V.binary_indices().size, 0.5)
        idx = V.binary_indices()
        p.add_objective(conic.Affine.of(idx, alpha * (1.0 - 2.0 * a), alpha * float(np.sum(a * a))))

    # QoS rows with phi, b fixed
    energy_compute = 0.5 * cfg.eff_capacitance * phi * inst.cycles * cfg.ue_rate**2
    for m in range(M):
        p.add_le(e2e(m), tu * cfg.latency_cap)
        need = cfg.rate_floor
        if sent[m] > 0:
            budget = cfg.energy_cap - energy_compute[m]
            if budget <= 0:
                raise LspInfeasible("energy budget exhausted by local computing", {"ue": m})
            need = max(need, cfg.tx_power * sent[m] / budget)
        p.add_ge(conic.Affine.of(sig[m], rates[m] / need), 1.0)
        if phi[m] < 1.0:
            p.add_eq(conic.Affine.of(sig[m], 1.0), 1.0)
        else:
            p.add_le(conic.Affine.of(sig[m], 1.0), 1.0)
    p.add_le(cost, cfg.cost_cap)

    # compute capacities
    for k in range(K):
        load = conic.Affine.constant(0.0)
        for m in range(M):
            load = load + (X(sig[m, k]) - fwd(m, k) - X(ec[m, k])) * f_es[k]
            for j in range(K):
                if j != k:
                    load = load + X(ee[m, j, k], f_es[k])
        p.add_le(load, cfg.es_capacity)
    p.add_le(conic.Affine.of(ec.ravel(), cfg.cloud_rate), cfg.cloud_capacity)

    # structure: single neighbour, service bounds, and the three lemma families
    for m in range(M):
        srv = inst.services[m]
        for k in range(K):
            p.add_le(fwd(m, k), 1.0)
            p.add_le(X(sig[m, k]) - fwd(m, k) - X(ec[m, k]) - X(g[srv, k]), 0.0)
            p.add_le(fwd(m, k) + X(ec[m, k]) - X(sig[m, k]), 0.0)
            p.add_le(X(ec[m, k]) - X(sig[m, k]), 0.0)
            for j in range(K):
                if j != k:
                    p.add_le(X(ee[m, k, j]) - X(g[srv, j]), 0.0)
    for k in range(K):
        col = conic.Affine.of(g[:, k], 1.0)
        p.add_ge(col, 1.0)
        p.add_le(col, cfg.max_services_per_es)
    return p, V


def lsp_objective(inst: Instance, decision: PlacementDecision, alloc: AllocationDecision, prev_placement) -> float:
    """Long-term objective of a binary decision with the allocation held fixed."""
    return objective(inst, decision, alloc, prev_placement)


def lsp_violations(inst, decision, alloc, prev_placement, tol=1e-6):
    return check_feasibility(inst, decision, alloc, prev_placement, tol)


def random_anchor(rng: np.random.Generator, M: int, K: int, S: int) -> PlacementDecision:
    lo, hi = ANCHOR_BAND
    d = PlacementDecision(rng.uniform(lo, hi, (M, K)), rng.uniform(lo, hi, (M, K, K)),
                          rng.uniform(lo, hi, (M, K)), rng.uniform(lo, hi, (S, K)))
    d.edge_edge[:, np.arange(K), np.arange(K)] = 0.0
    return d


def _fractionality(d: PlacementDecision) -> float:
    x = d.entries()
    return float(np.max(np.minimum(x, 1.0 - x))) if x.size else 0.0


def _sca(inst, alloc, prev, alpha, anchor, pins, tol, max_iter, solver_tol, scale):
    trace = []
    last = None
    delta = anchor
    converged = False
    for it in range(max_iter):
        prog, V = build_lsp_program(inst, alloc, prev, delta, alpha, pins, scale)
        sol = conic.solve(prog, solver_tol)
        if not sol.ok:
            return None, trace, False, sol.status
        delta = V.decision(np.clip(sol.x, 0.0, None))
        for a in delta.arrays():
            np.clip(a, 0.0, 1.0, out=a)
        value = sol.objective
        trace.append(LspIterate(it + 1, value, penalty(delta), _fractionality(delta), delta))
        if last is not None and abs(last - value) <= tol * max(1.0, abs(last)):
            converged = True
            break
        last = value
    return delta, trace, converged, conic.OPTIMAL


def fallback_decision(inst: Instance, pins: dict | None = None) -> PlacementDecision:
    """Association by strongest gain, popular services placed, misses forwarded."""
    cfg = inst.config
    M, K, S = inst.M, inst.K, inst.S
    d = PlacementDecision.zeros(M, K, S)
    fixed_assoc = _pin_array(pins, "assoc", (M, K))
    for m in range(M):
        if not np.all(np.isnan(fixed_assoc[m])):
            d.assoc[m] = np.nan_to_num(fixed_assoc[m])
        else:
            d.assoc[m, int(np.argmax(inst.gains[m]))] = 1.0
    fixed_g = _pin_array(pins, "placement", (S, K))
    for k in range(K):
        users = inst.services[d.assoc[:, k] > 0]
        counts = np.bincount(users, minlength=S) if users.size else np.zeros(S, dtype=int)
        order = sorted(range(S), key=lambda s: (-counts[s], s))
        chosen = [s for s in order if counts[s] > 0][: cfg.max_services_per_es] or [order[0]]
        d.placement[chosen, k] = 1.0
    mask = ~np.isnan(fixed_g)
    d.placement[mask] = fixed_g[mask]
    no_ee = pins is not None and pins.get("edge_edge") is not None and np.nanmax(np.asarray(pins["edge_edge"])) == 0
    no_ec = pins is not None and pins.get("edge_cloud") is not None and np.nanmax(np.asarray(pins["edge_cloud"])) == 0
    for m in range(M):
        k = int(np.argmax(d.assoc[m]))
        s = inst.services[m]
        if d.placement[s, k] > 0:
            continue
        hosts = [j for j in range(K) if j != k and d.placement[s, j] > 0]
        if hosts and not no_ee:
            d.edge_edge[m, k, min(hosts, key=lambda j: inst.es_distance[k, j])] = 1.0
        elif not no_ec:
            d.edge_cloud[m, k] = 1.0
        else:
            # nothing else is allowed: host the service locally
            d.placement[s, k] = 1.0
    return d


def solve_lsp(
    inst: Instance,
    alloc: AllocationDecision,
    prev_placement,
    alpha: float = DEFAULT_ALPHA,
    tol: float = 1e-4,
    max_iter: int = 50,
    rng: np.random.Generator | None = None,
    pins: dict | None = None,
    max_retries: int = 10,
    solver_tol: float = 1e-9,
    scale: float = OBJECTIVE_SCALE,
    starts: int = DEFAULT_STARTS,
) -> LspResult:
    """Penalty-SCA with rounding and re-initialization on infeasible rounding.

    ``starts`` independent random anchors are run to completion and the best
    rounded decision is kept (ties go to the earliest start).
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if starts < 1:
        raise ValueError("starts must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    best = None
    for _ in range(starts):
        res = _solve_single(inst, alloc, prev_placement, alpha, tol, max_iter, rng, pins, max_retries,
                            solver_tol, scale)
        if best is None or (best.fallback and not res.fallback) or (
                res.fallback == best.fallback and res.objective < best.objective):
            best = res
    return best


def _solve_single(inst, alloc, prev_placement, alpha, tol, max_iter, rng, pins, max_retries, solver_tol,
                  scale) -> LspResult:
    M, K, S = inst.M, inst.K, inst.S
    report: dict = {}
    backup: LspResult | None = None
    last_trace: list = []
    for attempt in range(max_retries + 1):
        anchor = random_anchor(rng, M, K, S)
        try:
            delta, trace, converged, status = _sca(inst, alloc, prev_placement, alpha, anchor, pins, tol,
                                                   max_iter, solver_tol, scale)
        except LspInfeasible as exc:
            report = {"reason": str(exc), **exc.report}
            break
        last_trace = trace
        if delta is None:
            report = {"reason": f"convex program {status}", "attempt": attempt}
            if status == conic.INFEASIBLE:
                break
            continue
        rounded = delta.rounded()
        bad = check_feasibility(inst, rounded, alloc, prev_placement)
        if bad:
            report = {"reason": "rounded point infeasible", "violations": [v.constraint for v in bad][:10]}
            continue
        result = LspResult(rounded, trace, lsp_objective(inst, rounded, alloc, prev_placement), converged,
                           attempt, False, {})
        if trace[-1].penalty_value <= BINARY_PENALTY:
            return result
        # stalled at a non-binary fixed point (entries stuck near 1/2 where the
        # tangent has no slope); keep the rounding and try a fresh anchor
        if backup is None or result.objective < backup.objective:
            backup = result
        report = {"reason": "non-binary fixed point", "penalty": trace[-1].penalty_value}
    if backup is not None:
        backup.retries = max_retries
        backup.report = report
        return backup
    log.warning("long-term solve fell back to heuristic: %s", report.get("reason"))
    d = fallback_decision(inst, pins)
    return LspResult(d, last_trace, lsp_objective(inst, d, alloc, prev_placement), False, max_retries, True, report)
