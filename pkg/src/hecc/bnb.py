"""Exact long-term solver for small instances.

Two modes share one objective (the long-term objective with the short-term
allocation held fixed):

* ``exhaustive`` walks the structured feasible set. Given a placement, every
  UE independently picks one of ``1 + K(K+1)`` routes (unassociated, or
  associate with ES k and then keep / forward to k' / send to the cloud), and
  the lemma rows only decide which of those routes are open. All placements
  times all open route combinations are scored in vectorized form.
* ``bnb`` is a depth-first branch and bound whose node bounds come from the
  continuous relaxation of the long-term program (no penalty term).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .longterm import (
    OBJECTIVE_SCALE,
    build_lsp_program,
    fallback_decision,
    lsp_objective,
)
from .scenario import Instance
from .system_model import AllocationDecision, PlacementDecision, check_feasibility, link_rates, status_change_cost

EXHAUSTIVE_CAP = 2**24
KEEP, CLOUD = -1, -2


class NodeLimitReached(RuntimeError):
    """The bnb search visited more nodes than allowed."""


class SearchSpaceTooLarge(ValueError):
    pass


@dataclass
class BnbNode:
    pins: dict
    bound: float
    depth: int


@dataclass
class ExactResult:
    decision: PlacementDecision | None
    objective: float
    mode: str
    nodes: int = 0
    evaluated: int = 0
    pruned: int = 0


def route_options(K: int) -> list[tuple[int, int]]:
    """(associated ES or -1, route) with route KEEP, CLOUD or a neighbour index."""
    opts = [(-1, KEEP)]
    for k in range(K):
        opts.append((k, KEEP))
        opts += [(k, j) for j in range(K) if j != k]
        opts.append((k, CLOUD))
    return opts


def search_space_size(M: int, K: int, S: int) -> int:
    return 2 ** (S * K) * (1 + K * (K + 1)) ** M


def decision_from_routes(routes, placement, services, K: int) -> PlacementDecision:
    M = len(routes)
    d = PlacementDecision.zeros(M, K, placement.shape[0])
    d.placement[:] = placement
    for m, (k, r) in enumerate(routes):
        if k < 0:
            continue
        d.assoc[m, k] = 1.0
        if r == CLOUD:
            d.edge_cloud[m, k] = 1.0
        elif r >= 0:
            d.edge_edge[m, k, r] = 1.0
    return d


def enumerate_lemma_feasible(M: int, K: int, S: int, services):
    """Yield every binary decision satisfying the lemma rows (any placement)."""
    opts = route_options(K)
    services = np.asarray(services, dtype=int)
    for bits in itertools.product((0.0, 1.0), repeat=S * K):
        g = np.asarray(bits).reshape(S, K)
        open_ = [[o for o in opts if _route_open(o, g[services[m]])] for m in range(M)]
        for combo in itertools.product(*open_):
            yield decision_from_routes(combo, g, services, K)


def _route_open(opt, grow) -> bool:
    k, r = opt
    if k < 0 or r == CLOUD:
        return True
    if r == KEEP:
        return grow[k] > 0
    return grow[r] > 0


def _option_table(inst: Instance, alloc: AllocationDecision):
    """Per (UE, option) latency, link, load and QoS data, with phi and b fixed."""
    cfg = inst.config
    M, K = inst.M, inst.K
    opts = route_options(K)
    O = len(opts)
    phi = np.asarray(alloc.phi, dtype=float)
    sent = (1.0 - phi) * inst.bits
    rates = link_rates(inst, alloc.bw)
    f_es = np.broadcast_to(np.asarray(cfg.es_rate, dtype=float), (K,))
    t_es = ((1.0 - phi) * inst.cycles)[:, None] / f_es[None, :]
    t_cloud = (1.0 - phi) * inst.cycles / cfg.cloud_rate
    t_ue = phi * inst.cycles / cfg.ue_rate
    e_cp = 0.5 * cfg.eff_capacitance * phi * inst.cycles * cfg.ue_rate**2
    v = cfg.propagation_speed

    base = np.zeros((M, O))  # e2e minus the shared link term
    link = np.zeros((M, O, K))
    load = np.zeros((M, O, K))
    cloud = np.zeros((M, O))
    ok = np.ones((M, O), dtype=bool)
    for m in range(M):
        for o, (k, r) in enumerate(opts):
            if k < 0:
                rate = 0.0
                base[m, o] = t_ue[m]
                ok[m, o] = phi[m] >= 1.0
            else:
                rate = rates[m, k]
                radio = 0.0 if sent[m] <= 0 else (sent[m] / rate if rate > 0 else math.inf)
                if r == KEEP:
                    cp, pr = t_es[m, k], 0.0
                    load[m, o, k] = f_es[k]
                elif r == CLOUD:
                    cp, pr = t_cloud[m], inst.cloud_distance[k] / v
                    link[m, o, k] = sent[m] / cfg.backhaul_rate
                    cloud[m, o] = 1.0
                else:
                    cp, pr = t_es[m, r], inst.es_distance[k, r] / v
                    link[m, o, k] = sent[m] / cfg.fronthaul_rate
                    load[m, o, r] = f_es[r]
                base[m, o] = radio + pr + t_ue[m] + cp
            energy = e_cp[m] + (0.0 if sent[m] <= 0 else (cfg.tx_power * sent[m] / rate if rate > 0 else math.inf))
            ok[m, o] &= energy <= cfg.energy_cap * (1 + 1e-12)
            ok[m, o] &= rate >= cfg.rate_floor
            ok[m, o] &= np.isfinite(base[m, o])
    return opts, base, link, load, cloud, ok


def _placement_cost(g, prev, cfg):
    change = status_change_cost(g, prev, cfg.price_install, cfg.price_uninstall)
    return float(change.sum() + g.sum() * cfg.price_operate)


def solve_exhaustive(inst: Instance, alloc: AllocationDecision, prev_placement=None) -> ExactResult:
    cfg = inst.config
    M, K, S = inst.M, inst.K, inst.S
    size = search_space_size(M, K, S)
    if size > EXHAUSTIVE_CAP:
        raise SearchSpaceTooLarge(
            f"{size} combinations exceed the exhaustive cap of {EXHAUSTIVE_CAP}; use mode='bnb'")
    prev = np.zeros((S, K)) if prev_placement is None else np.asarray(prev_placement, dtype=float)
    opts, base, link, load, cloud, ok = _option_table(inst, alloc)
    f_es_cap = cfg.es_capacity
    services = np.asarray(inst.services, dtype=int)
    best = (math.inf, None)
    evaluated = 0
    for bits in itertools.product((0.0, 1.0), repeat=S * K):
        g = np.asarray(bits).reshape(S, K)
        per_es = g.sum(axis=0)
        if np.any(per_es < 1) or np.any(per_es > cfg.max_services_per_es):
            continue
        fixed_cost = _placement_cost(g, prev, cfg)
        lists = []
        for m in range(M):
            lists.append([o for o, opt in enumerate(opts) if ok[m, o] and _route_open(opt, g[services[m]])])
        if any(not lst for lst in lists):
            continue
        grids = np.meshgrid(*[np.asarray(lst) for lst in lists], indexing="ij")
        combo = np.stack([gr.ravel() for gr in grids], axis=1)  # (C, M), lexicographic
        rows = np.arange(M)[None, :]
        b = base[rows, combo]
        theta = link[rows, combo].sum(axis=1).max(axis=1)
        feasible = b.max(axis=1) + theta <= cfg.latency_cap * (1 + 1e-12)
        feasible &= np.all(load[rows, combo].sum(axis=1) <= f_es_cap * (1 + 1e-12), axis=1)
        n_cloud = cloud[rows, combo].sum(axis=1)
        feasible &= n_cloud * cfg.cloud_rate <= cfg.cloud_capacity * (1 + 1e-12)
        cost = fixed_cost + n_cloud * cfg.price_request
        feasible &= cost <= cfg.cost_cap * (1 + 1e-12)
        evaluated += combo.shape[0]
        if not feasible.any():
            continue
        obj = cfg.weight_latency * (b.sum(axis=1) + M * theta) + cfg.weight_cost * cost
        obj = np.where(feasible, obj, math.inf)
        i = int(np.argmin(obj))
        if obj[i] < best[0]:
            best = (float(obj[i]), [opts[o] for o in combo[i]], g)
    if best[1] is None:
        return ExactResult(None, math.inf, "exhaustive", evaluated=evaluated)
    d = decision_from_routes(best[1], best[2], services, K)
    return ExactResult(d, lsp_objective(inst, d, alloc, prev_placement), "exhaustive", evaluated=evaluated)


# ---------------------------------------------------------------------------
# branch and bound


def _binary_slots(M: int, K: int, S: int):
    """Branching order: placement, association, then cooperation bits."""
    slots = [("placement", (s, k)) for s in range(S) for k in range(K)]
    slots += [("assoc", (m, k)) for m in range(M) for k in range(K)]
    slots += [("edge_edge", (m, k, j)) for m in range(M) for k in range(K) for j in range(K) if j != k]
    slots += [("edge_cloud", (m, k)) for m in range(M) for k in range(K)]
    tiers = {"placement": 0, "assoc": 1, "edge_edge": 2, "edge_cloud": 2}
    return slots, tiers


def _empty_pins(M, K, S):
    return {"assoc": np.full((M, K), np.nan), "edge_edge": np.full((M, K, K), np.nan),
            "edge_cloud": np.full((M, K), np.nan), "placement": np.full((S, K), np.nan)}


def _copy_pins(p):
    return {k: v.copy() for k, v in p.items()}


def solve_bnb(inst: Instance, alloc: AllocationDecision, prev_placement=None, prune: bool = True,
              node_limit: int = 200_000) -> ExactResult:
    M, K, S = inst.M, inst.K, inst.S
    slots, tiers = _binary_slots(M, K, S)
    to_obj = 1.0 / OBJECTIVE_SCALE

    def relax(pins):
        prog, V = build_lsp_program(inst, alloc, prev_placement, None, 0.0, pins)
        sol = conic.solve(prog, 1e-9)
        if sol.status == conic.INFEASIBLE:
            return None, math.inf
        if not sol.ok:
            # an unreliable bound may not prune; fall back to a trivial one
            return None, -math.inf
        return V.decision(sol.x), sol.objective * to_obj

    incumbent, best = None, math.inf
    start = fallback_decision(inst)
    if not check_feasibility(inst, start, alloc, prev_placement):
        incumbent, best = start, lsp_objective(inst, start, alloc, prev_placement)

    nodes = pruned = 0
    stack = [_empty_pins(M, K, S)]
    eps = 1e-9
    while stack:
        pins = stack.pop()
        nodes += 1
        if nodes > node_limit:
            raise NodeLimitReached(f"branch-and-bound exceeded the node limit of {node_limit}")
        relaxed, bound = relax(pins)
        if bound == math.inf:
            pruned += 1
            continue
        if prune and bound >= best - eps * max(1.0, abs(best)):
            pruned += 1
            continue
        free = [(name, idx) for name, idx in slots if np.isnan(pins[name][idx])]
        if relaxed is not None:
            frac = {sl: min(getattr(relaxed, sl[0])[sl[1]], 1 - getattr(relaxed, sl[0])[sl[1]]) for sl in free}
            if all(f <= 1e-7 for f in frac.values()):
                cand = relaxed.rounded()
                if not check_feasibility(inst, cand, alloc, prev_placement):
                    val = lsp_objective(inst, cand, alloc, prev_placement)
                    if val < best - eps * max(1.0, abs(best)):
                        incumbent, best = cand, val
                    # the relaxation is exact at this point, nothing below can do better
                    if prune:
                        continue
        if not free:
            continue
        if relaxed is not None:
            top = min(tiers[name] for name, _ in free)
            cands = [sl for sl in free if tiers[sl[0]] == top]
            name, idx = max(cands, key=lambda sl: frac[sl])  # first most-fractional wins ties
            first = float(np.floor(getattr(relaxed, name)[idx] + 0.5))
        else:
            name, idx = free[0]
            first = 1.0
        for value in (1.0 - first, first):  # pushed last is explored first
            child = _copy_pins(pins)
            child[name][idx] = value
            stack.append(child)
    return ExactResult(incumbent, best, "bnb", nodes=nodes, pruned=pruned)


def solve_exact(inst: Instance, alloc: AllocationDecision, prev_placement=None, mode: str = "auto",
                **kwargs) -> ExactResult:
    if mode == "auto":
        mode = "exhaustive" if search_space_size(inst.M, inst.K, inst.S) <= EXHAUSTIVE_CAP else "bnb"
    if mode == "exhaustive":
        return solve_exhaustive(inst, alloc, prev_placement)
    if mode == "bnb":
        return solve_bnb(inst, alloc, prev_placement, **kwargs)
    raise ValueError(f"unknown mode {mode!r}")
