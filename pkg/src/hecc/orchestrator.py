"""Two-timescale simulation loop.

Long-term frames re-solve placement, association and cooperation only when the
flag is raised (first frame, new requests, or a realized latency violation);
every short slot inside a frame re-solves the offloading split and bandwidth
for the current channel draw.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .benchmarks import PROPOSED, SchemeSpec, apply_scheme
from .longterm import DEFAULT_ALPHA, solve_lsp
from .scenario import Scenario, substream
from .shortterm import SspInfeasible, initial_point, solve_ssp
from .system_model import (
    AllocationDecision,
    PlacementDecision,
    check_feasibility,
    e2e_latency,
    total_cost,
    ue_energy,
)

log = logging.getLogger(__name__)

TRIGGER_START = "start"
TRIGGER_REQUESTS = "requests"
TRIGGER_LATENCY = "latency"
TRIGGER_INFEASIBLE = "infeasible"


@dataclass
class SlotRecord:
    frame: int
    slot: int
    objective: float
    latency: np.ndarray  # realized e2e per UE, seconds
    energy: np.ndarray  # per UE, joules
    cost_total: float  # cost of the enclosing frame
    cost_average: float  # running average up to this frame
    trigger: bool  # placement was re-solved at the start of this frame
    feasible: bool
    lsp_iterations: int
    ssp_iterations: int
    wall_clock: float
    phi: np.ndarray
    bw: np.ndarray


@dataclass
class RunTrace:
    scheme: str
    seed: int
    slots: list = field(default_factory=list)
    frame_costs: list = field(default_factory=list)
    triggers: list = field(default_factory=list)  # (frame, reason)
    decisions: dict = field(default_factory=dict)  # frame -> PlacementDecision in force

    @property
    def trigger_count(self) -> int:
        return len(self.triggers)

    @property
    def average_cost(self) -> float:
        return float(np.mean(self.frame_costs)) if self.frame_costs else float("nan")


def default_allocation(M: int, phi=None, bw=None) -> AllocationDecision:
    """Equal bandwidth and a half split, overridden by any scheme pins."""
    p = np.full(M, 0.5) if phi is None else np.array(phi, dtype=float)
    b = np.full(M, 1.0 / M) if bw is None else np.array(bw, dtype=float)
    return AllocationDecision(p, b)


def _lsp_allocation(last: AllocationDecision | None, M: int, phi_pin, bw_pin) -> AllocationDecision:
    """(phi, b) handed to the long-term solver: the latest slot's values, with
    silent UEs given an equal share so the placement can still reach them."""
    if last is None:
        return default_allocation(M, phi_pin, bw_pin)
    phi = np.array(last.phi, dtype=float)
    bw = np.array(last.bw, dtype=float)
    bw = np.where(bw > 0, bw, 1.0 / M)
    if phi_pin is not None:
        phi = np.array(phi_pin, dtype=float)
    if bw_pin is not None:
        bw = np.array(bw_pin, dtype=float)
    return AllocationDecision(phi, bw)


def run(
    scenario: Scenario,
    scheme: SchemeSpec | None = None,
    frames: int | None = None,
    slots: int | None = None,
    alpha: float = DEFAULT_ALPHA,
) -> RunTrace:
    """Simulate ``frames`` long-term frames of ``slots`` slots each."""
    scheme = scheme or SchemeSpec(PROPOSED)
    cfg = scenario.config
    T = cfg.frames if frames is None else int(frames)
    J = cfg.slots_per_frame if slots is None else int(slots)
    if T < 1 or J < 1:
        raise ValueError("frames and slots must be >= 1")
    M = cfg.num_ues
    trace = RunTrace(scheme.name, cfg.rng_seed)

    decision: PlacementDecision | None = None
    setup = None
    prev_placement = None  # placement in force during the previous frame
    last_alloc: AllocationDecision | None = None
    served = None  # requests the current placement was computed for
    flag, reason = True, TRIGGER_START

    for t in range(T):
        requests = scenario.requests(t).services
        if served is not None and not np.array_equal(requests, served):
            flag, reason = True, TRIGGER_REQUESTS
        lsp_iters = 0
        fired = flag
        if flag:
            setup = apply_scheme(scheme, scenario, t)
            inst0 = scenario.instance(t, 0)
            alloc0 = _lsp_allocation(last_alloc, M, setup.phi_pin, setup.bw_pin)
            res = solve_lsp(inst0, alloc0, prev_placement, alpha=alpha,
                            rng=substream(cfg.rng_seed, "solver", t), pins=setup.lsp_pins)
            decision = res.decision
            lsp_iters = len(res.trace)
            served = requests.copy()
            trace.triggers.append((t, reason))
            flag = False
        ledger = total_cost(decision, prev_placement, cfg, trace.frame_costs)
        trace.frame_costs.append(ledger.total)
        trace.decisions[t] = decision
        prev_placement = decision.placement.copy()

        for j in range(J):
            start = time.perf_counter()
            inst = scenario.instance(t, j)
            feasible = True
            ssp_iters = 0
            try:
                res = solve_ssp(inst, decision, cost_term=ledger.total,
                                phi_pin=setup.phi_pin, bw_pin=setup.bw_pin)
                alloc = res.allocation
                ssp_iters = len(res.trace) - 1
            except SspInfeasible as exc:
                log.info("frame %d slot %d: short-term infeasible (%s)", t, j, exc)
                feasible = False
                try:
                    alloc, _ = initial_point(inst, decision, setup.phi_pin, setup.bw_pin)
                except SspInfeasible:
                    alloc = default_allocation(M, setup.phi_pin, setup.bw_pin)
            lat = e2e_latency(inst, decision, alloc).e2e
            if feasible:
                feasible = not check_feasibility(inst, decision, alloc, None)
            obj = float(cfg.weight_latency * lat.sum() + cfg.weight_cost * ledger.total)
            trace.slots.append(SlotRecord(
                t, j, obj, lat, ue_energy(inst, decision, alloc), ledger.total, ledger.average,
                fired and j == 0, feasible, lsp_iters if j == 0 else 0, ssp_iters,
                time.perf_counter() - start, np.array(alloc.phi), np.array(alloc.bw),
            ))
            last_alloc = alloc
            if not feasible:
                flag, reason = True, TRIGGER_INFEASIBLE
                break
            if np.any(lat > cfg.latency_cap):
                flag, reason = True, TRIGGER_LATENCY
                break
    return trace
